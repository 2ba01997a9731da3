#pragma once

#include <doctest.h>

#include <humus/complex.hpp>
#include <humus/gradcheck.hpp>
#include <humus/ops.hpp>

// Independent reference implementations used as test oracles. These stay
// deliberately naive (nested loops, O(N^2) transforms) and must not call into
// the code paths they check.
namespace oracle {

using humus::Shape;
using humus::Tensor;

// direct nested-loop cross-correlation
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
    const int64_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor<T> out(Shape{B, Cout, Ho, Wo});
    for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t co = 0; co < Cout; ++co)
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    T acc = b.data[size_t(co)];
                    for (int64_t ci = 0; ci < Cin; ++ci)
                        for (int64_t ky = 0; ky < kh; ++ky)
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                int64_t y = oy * stride - pad + ky, xx = ox * stride - pad + kx;
                                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                                acc += x.data[size_t(((bb * Cin + ci) * H + y) * W + xx)] *
                                       w.data[size_t(((co * Cin + ci) * kh + ky) * kw + kx)];
                            }
                    out.data[size_t(((bb * Cout + co) * Ho + oy) * Wo + ox)] = acc;
                }
    return out;
}

// triple-loop matmul over the trailing axis
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const int64_t din = w.shape[0], dout = w.shape[1];
    const int64_t rows = x.size() / din;
    Shape os = x.shape;
    os.back() = dout;
    Tensor<T> out(os);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < dout; ++j) {
            T acc = b.data[size_t(j)];
            for (int64_t i = 0; i < din; ++i)
                acc += x.data[size_t(r * din + i)] * w.data[size_t(i * dout + j)];
            out.data[size_t(r * dout + j)] = acc;
        }
    return out;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& g, const Tensor<T>& b, T eps) {
    const int64_t D = x.shape.back(), rows = x.size() / D;
    Tensor<T> out(x.shape);
    for (int64_t r = 0; r < rows; ++r) {
        T mean = 0, var = 0;
        for (int64_t d = 0; d < D; ++d) mean += x.data[size_t(r * D + d)];
        mean /= T(D);
        for (int64_t d = 0; d < D; ++d) {
            T c = x.data[size_t(r * D + d)] - mean;
            var += c * c;
        }
        var /= T(D);
        for (int64_t d = 0; d < D; ++d)
            out.data[size_t(r * D + d)] =
                g.data[size_t(d)] * (x.data[size_t(r * D + d)] - mean) / std::sqrt(var + eps) +
                b.data[size_t(d)];
    }
    return out;
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
    const int64_t D = x.shape.back(), rows = x.size() / D;
    Tensor<T> out(x.shape);
    for (int64_t r = 0; r < rows; ++r) {
        T mx = x.data[size_t(r * D)];
        for (int64_t d = 1; d < D; ++d) mx = std::max(mx, x.data[size_t(r * D + d)]);
        T s = 0;
        for (int64_t d = 0; d < D; ++d) {
            out.data[size_t(r * D + d)] = std::exp(x.data[size_t(r * D + d)] - mx);
            s += out.data[size_t(r * D + d)];
        }
        for (int64_t d = 0; d < D; ++d) out.data[size_t(r * D + d)] /= s;
    }
    return out;
}

template <class T>
T gelu_scalar(T x) {
    const T c = T(std::sqrt(2.0 / 3.14159265358979323846));
    return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

// quadratic-cost centered orthonormal DFT of one [h,w] slice
template <class T>
humus::CArray<T> dft2c(const humus::CArray<T>& in, bool inverse) {
    const int64_t h = in.shape()[0], w = in.shape()[1];
    humus::CArray<T> out(in.shape());
    const double sign = inverse ? 1.0 : -1.0;
    const double scale = 1.0 / std::sqrt(double(h * w));
    for (int64_t ky = 0; ky < h; ++ky)
        for (int64_t kx = 0; kx < w; ++kx) {
            double ar = 0, ai = 0;
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    // centered: both image and spectrum indices offset by half
                    const double phase = sign * 2.0 * 3.14159265358979323846 *
                                         (double((ky - h / 2) * (y - h / 2)) / double(h) +
                                          double((kx - w / 2) * (x - w / 2)) / double(w));
                    const double c = std::cos(phase), s = std::sin(phase);
                    const double vr = double(in.re.data[size_t(y * w + x)]);
                    const double vi = double(in.im.data[size_t(y * w + x)]);
                    ar += vr * c - vi * s;
                    ai += vr * s + vi * c;
                }
            out.re.data[size_t(ky * w + kx)] = T(ar * scale);
            out.im.data[size_t(ky * w + kx)] = T(ai * scale);
        }
    return out;
}

}  // namespace oracle

namespace testutil {

// zero every learnable value reachable through visit_params (found via ADL)
template <class W>
void zero_all(W& weights) {
    visit_params(weights, std::string(),
                 [](const std::string&, auto& p) { std::fill(p.value.begin(), p.value.end(), 0); });
}

// re-draw every learnable value at O(scale); gradient checks need weights far
// from the tiny training init so no path carries degenerate ~1e-9 gradients
template <class W>
void randomize_all(W& weights, humus::Rng& rng, double scale = 0.5) {
    visit_params(weights, std::string(), [&](const std::string&, auto& p) {
        for (auto& v : p.value) v = std::decay_t<decltype(v)>(rng.uniform(-scale, scale));
    });
}

template <class T>
double max_abs(std::span<const T> a) {
    double m = 0;
    for (T v : a) m = std::max(m, double(std::abs(v)));
    return m;
}

template <class T>
double max_abs_err(std::span<const T> a, std::span<const T> b) {
    REQUIRE(a.size() == b.size());
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
    return m;
}

template <class T>
double max_rel_err(std::span<const T> a, std::span<const T> b, double floor = 1e-8) {
    REQUIRE(a.size() == b.size());
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double den = std::max({std::abs(double(a[i])), std::abs(double(b[i])), floor});
        m = std::max(m, std::abs(double(a[i]) - double(b[i])) / den);
    }
    return m;
}

}  // namespace testutil
