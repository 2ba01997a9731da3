#pragma once

#include "humus/base.hpp"

namespace humus {

// Radix-2 complex FFT kernels for the centered orthonormal 2-D transforms.
// Extents are restricted to powers of two. Twiddles are computed in double
// and cast, so float and double paths agree to rounding.

namespace fft_detail {

template <class T>
void fft1d_inplace(T* re, T* im, int64_t n, int64_t stride, bool inverse) {
    // bit-reversal permutation
    for (int64_t i = 1, j = 0; i < n; ++i) {
        int64_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i * stride], re[j * stride]);
            std::swap(im[i * stride], im[j * stride]);
        }
    }
    const double sign = inverse ? 1.0 : -1.0;
    for (int64_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * 3.14159265358979323846 / double(len);
        const double wr0 = std::cos(ang), wi0 = std::sin(ang);
        for (int64_t i = 0; i < n; i += len) {
            double wr = 1.0, wi = 0.0;
            for (int64_t k = 0; k < len / 2; ++k) {
                const int64_t a = (i + k) * stride, b = (i + k + len / 2) * stride;
                const T ur = re[a], ui = im[a];
                const T vr = T(re[b] * T(wr) - im[b] * T(wi));
                const T vi = T(re[b] * T(wi) + im[b] * T(wr));
                re[a] = ur + vr;
                im[a] = ui + vi;
                re[b] = ur - vr;
                im[b] = ui - vi;
                const double nwr = wr * wr0 - wi * wi0;
                wi = wr * wi0 + wi * wr0;
                wr = nwr;
            }
        }
    }
}

// swap halves along both axes; for even extents fftshift == ifftshift
template <class T>
void shift2d_inplace(T* re, T* im, int64_t h, int64_t w) {
    if (h > 1) {
        const int64_t h2 = h / 2;
        for (int64_t y = 0; y < h2; ++y)
            for (int64_t x = 0; x < w; ++x) {
                std::swap(re[y * w + x], re[(y + h2) * w + x]);
                std::swap(im[y * w + x], im[(y + h2) * w + x]);
            }
    }
    if (w > 1) {
        const int64_t w2 = w / 2;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w2; ++x) {
                std::swap(re[y * w + x], re[y * w + x + w2]);
                std::swap(im[y * w + x], im[y * w + x + w2]);
            }
    }
}

}  // namespace fft_detail

inline void check_fft_extent(int64_t h, int64_t w) {
    if (!is_pow2(h) || !is_pow2(w))
        throw ShapeError(sstr("fft2c: extents must be powers of two, got ", h, "x", w));
}

// Centered orthonormal 2-D FFT of one [h,w] slice, in place.
// Zero frequency sits at (h/2, w/2); scaling 1/sqrt(h*w) in each direction,
// so the transform is unitary and its adjoint equals its inverse.
template <class T>
void fft2c_inplace(T* re, T* im, int64_t h, int64_t w, bool inverse) {
    check_fft_extent(h, w);
    using namespace fft_detail;
    shift2d_inplace(re, im, h, w);  // ifftshift (== fftshift for even extents)
    for (int64_t y = 0; y < h; ++y) fft1d_inplace(re + y * w, im + y * w, w, 1, inverse);
    for (int64_t x = 0; x < w; ++x) fft1d_inplace(re + x, im + x, h, w, inverse);
    const T scale = T(1.0 / std::sqrt(double(h) * double(w)));
    for (int64_t i = 0; i < h * w; ++i) {
        re[i] *= scale;
        im[i] *= scale;
    }
    shift2d_inplace(re, im, h, w);  // fftshift
}

// Batched: re/im hold `batch` consecutive [h,w] slices.
template <class T>
void fft2c_batched(T* re, T* im, int64_t batch, int64_t h, int64_t w, bool inverse) {
    check_fft_extent(h, w);
#pragma omp parallel for if (batch > 1 && batch* h* w > (1 << 12))
    for (int64_t b = 0; b < batch; ++b) fft2c_inplace(re + b * h * w, im + b * h * w, h, w, inverse);
}

}  // namespace humus
