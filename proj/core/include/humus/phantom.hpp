#pragma once

#include "humus/mri.hpp"

namespace humus {

// Synthetic multicoil volumes: stacks of piecewise-constant ellipse phantoms
// with smooth random phase. Ellipse parameters drift linearly with slice
// index, so neighboring slices are correlated and joint multi-slice
// reconstruction has context to exploit.

namespace phantom_detail {

struct Ellipse {
    double cx, cy, rx, ry, theta, amp;
    double dcx, dcy, drx, dry, dtheta, damp;  // per-slice drift
};

inline std::vector<Ellipse> sample_ellipses(Rng& rng) {
    const size_t count = size_t(rng.uniform_int(5, 12));
    std::vector<Ellipse> es(count);
    for (auto& e : es) {
        e.cx = rng.uniform(-0.55, 0.55);
        e.cy = rng.uniform(-0.55, 0.55);
        e.rx = rng.uniform(0.10, 0.45);
        e.ry = rng.uniform(0.10, 0.45);
        e.theta = rng.uniform(0.0, 3.14159265358979323846);
        e.amp = rng.uniform(0.15, 0.50);
        e.dcx = rng.uniform(-0.02, 0.02);
        e.dcy = rng.uniform(-0.02, 0.02);
        e.drx = rng.uniform(-0.008, 0.008);
        e.dry = rng.uniform(-0.008, 0.008);
        e.dtheta = rng.uniform(-0.03, 0.03);
        e.damp = rng.uniform(-0.015, 0.015);
    }
    return es;
}

}  // namespace phantom_detail

// Ground-truth complex image stack [K,H,W]; magnitudes clamped to [0,1].
template <class T>
CArray<T> generate_phantom(uint64_t seed, int64_t h, int64_t w, int64_t k_slices) {
    if (!is_pow2(h) || !is_pow2(w))
        throw ConfigError(sstr("phantom: extents must be powers of two, got ", h, "x", w));
    if (k_slices < 1) throw ConfigError("phantom: need at least one slice");

    Rng rng(mix64(seed, 0x7068616eull));  // "phan"
    auto ellipses = phantom_detail::sample_ellipses(rng);

    // smooth per-volume phase: low-order 2-D polynomial over [-1,1]^2
    double p00 = rng.uniform(-3.0, 3.0);
    double p10 = rng.uniform(-1.5, 1.5), p01 = rng.uniform(-1.5, 1.5);
    double p20 = rng.uniform(-1.0, 1.0), p11 = rng.uniform(-1.0, 1.0), p02 = rng.uniform(-1.0, 1.0);

    CArray<T> out(Shape{k_slices, h, w});
    for (int64_t k = 0; k < k_slices; ++k) {
        T* re = out.re.data.data() + k * h * w;
        T* im = out.im.data.data() + k * h * w;
        for (int64_t y = 0; y < h; ++y) {
            const double py = 2.0 * (double(y) + 0.5) / double(h) - 1.0;
            for (int64_t x = 0; x < w; ++x) {
                const double px = 2.0 * (double(x) + 0.5) / double(w) - 1.0;
                double mag = 0.0;
                for (const auto& e : ellipses) {
                    const double cx = e.cx + e.dcx * double(k);
                    const double cy = e.cy + e.dcy * double(k);
                    const double rx = std::max(0.05, e.rx + e.drx * double(k));
                    const double ry = std::max(0.05, e.ry + e.dry * double(k));
                    const double th = e.theta + e.dtheta * double(k);
                    const double amp = std::min(0.6, std::max(0.05, e.amp + e.damp * double(k)));
                    const double dx = px - cx, dy = py - cy;
                    const double c = std::cos(th), s = std::sin(th);
                    const double u = (c * dx + s * dy) / rx;
                    const double v = (-s * dx + c * dy) / ry;
                    if (u * u + v * v <= 1.0) mag += amp;
                }
                mag = std::min(1.0, mag);
                const double phase = p00 + p10 * px + p01 * py + p20 * px * px + p11 * px * py + p02 * py * py;
                re[y * w + x] = T(mag * std::cos(phase));
                im[y * w + x] = T(mag * std::sin(phase));
            }
        }
    }
    return out;
}

// N smooth complex coil fields, pixelwise normalized to sum_i |S_i|^2 = 1.
// Each coil is a broad Gaussian bump centered just outside the image border
// with a mild linear phase ramp.
template <class T>
SensitivityMaps<T> generate_coil_maps(uint64_t seed, int64_t n, int64_t h, int64_t w) {
    if (n < 1) throw ConfigError("coil maps: need at least one coil");
    Rng rng(mix64(seed, 0x636f696cull));  // "coil"

    CArray<T> maps(Shape{n, h, w});
    for (int64_t i = 0; i < n; ++i) {
        const double ang = 2.0 * 3.14159265358979323846 * double(i) / double(n) + rng.uniform(-0.2, 0.2);
        const double rad = rng.uniform(0.95, 1.15);
        const double cx = rad * std::cos(ang), cy = rad * std::sin(ang);
        const double sigma = rng.uniform(0.8, 1.2);
        const double kx = rng.uniform(-1.0, 1.0), ky = rng.uniform(-1.0, 1.0);
        const double phi0 = rng.uniform(-3.14159, 3.14159);
        T* re = maps.re.data.data() + i * h * w;
        T* im = maps.im.data.data() + i * h * w;
        for (int64_t y = 0; y < h; ++y) {
            const double py = 2.0 * (double(y) + 0.5) / double(h) - 1.0;
            for (int64_t x = 0; x < w; ++x) {
                const double px = 2.0 * (double(x) + 0.5) / double(w) - 1.0;
                const double d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
                const double a = std::exp(-d2 / (2.0 * sigma * sigma));
                const double ph = kx * px + ky * py + phi0;
                re[y * w + x] = T(a * std::cos(ph));
                im[y * w + x] = T(a * std::sin(ph));
            }
        }
    }
    // normalize
    const int64_t hw = h * w;
    for (int64_t p = 0; p < hw; ++p) {
        double norm = 0;
        for (int64_t i = 0; i < n; ++i) {
            const size_t q = size_t(i * hw + p);
            norm += double(maps.re[q]) * maps.re[q] + double(maps.im[q]) * maps.im[q];
        }
        norm = std::sqrt(norm);
        for (int64_t i = 0; i < n; ++i) {
            const size_t q = size_t(i * hw + p);
            maps.re.data[q] = T(maps.re[q] / norm);
            maps.im.data[q] = T(maps.im[q] / norm);
        }
    }
    return {std::move(maps)};
}

// Full (unmasked) noisy k-space [K,N,H,W]: per slice, F(S_i x) plus i.i.d.
// complex Gaussian noise with per-slice std noise_sigma * RMS(k). Noise is
// added to every entry; undersampling later zeroes the unobserved columns, so
// observed entries carry noise and masked-out ones are exactly zero.
template <class T>
CArray<T> simulate_acquisition(const CArray<T>& slices, const SensitivityMaps<T>& maps,
                               double noise_sigma, uint64_t seed) {
    const int64_t k_slices = slices.shape()[0];
    const int64_t h = slices.shape()[1], w = slices.shape()[2];
    const int64_t n = maps.coils();
    CArray<T> kspace(Shape{k_slices, n, h, w});
    Rng rng(mix64(seed, 0x6e6f6973ull));  // "nois"
    for (int64_t k = 0; k < k_slices; ++k) {
        CArray<T> img(Shape{h, w});
        std::copy(slices.re.data.begin() + k * h * w, slices.re.data.begin() + (k + 1) * h * w,
                  img.re.data.begin());
        std::copy(slices.im.data.begin() + k * h * w, slices.im.data.begin() + (k + 1) * h * w,
                  img.im.data.begin());
        CArray<T> coils = expand_raw(img, maps);
        fft2c(coils);
        double rms = 0;
        for (size_t i = 0; i < coils.re.data.size(); ++i)
            rms += double(coils.re[i]) * coils.re[i] + double(coils.im[i]) * coils.im[i];
        rms = std::sqrt(rms / double(coils.re.data.size()));
        const double comp_sd = noise_sigma * rms / std::sqrt(2.0);
        T* kr = kspace.re.data.data() + k * n * h * w;
        T* ki = kspace.im.data.data() + k * n * h * w;
        for (int64_t i = 0; i < n * h * w; ++i) {
            kr[i] = coils.re[size_t(i)] + T(comp_sd > 0 ? rng.normal(0.0, comp_sd) : 0.0);
            ki[i] = coils.im[size_t(i)] + T(comp_sd > 0 ? rng.normal(0.0, comp_sd) : 0.0);
        }
    }
    return kspace;
}

// |x| of one slice of a [K,H,W] stack
template <class T>
Tensor<T> slice_magnitude(const CArray<T>& slices, int64_t k) {
    const int64_t h = slices.shape()[1], w = slices.shape()[2];
    Tensor<T> out(Shape{h, w});
    const T* re = slices.re.data.data() + k * h * w;
    const T* im = slices.im.data.data() + k * h * w;
    for (int64_t i = 0; i < h * w; ++i) out.data[size_t(i)] = std::sqrt(re[i] * re[i] + im[i] * im[i]);
    return out;
}

// RSS of the inverse FFT of (masked) coil k-space: the no-learning baseline.
template <class T>
Tensor<T> zero_filled_magnitude(const CArray<T>& slice_kspace, const Mask& m) {
    CArray<T> k = slice_kspace;
    apply_mask(k, m);
    fft2c(k, /*inverse=*/true);
    return rss_raw(k);
}

}  // namespace humus
