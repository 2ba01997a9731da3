#pragma once

#include "humus/complex.hpp"
#include "humus/mask.hpp"

namespace humus {

// Acquisition physics. Maps are pixelwise normalized (sum_i |S_i|^2 = 1), the
// FFT is unitary, and the mask is a 0/1 column projection, so the forward
// operator's adjoint is reduce(ifft(mask(.))) with no extra scale factors.

// Per-coil complex spatial weights, [N,H,W].
template <class T>
struct SensitivityMaps {
    CArray<T> maps;

    int64_t coils() const { return maps.shape()[0]; }
};

// One undersampled slice: coil k-space [N,H,W] with its mask and the
// magnitude target used for supervision/evaluation.
template <class T>
struct KSpaceSlice {
    CArray<T> coils;
    Mask mask;
    Tensor<T> target_magnitude;
};

// ---------------------------------------------------------------------------
// Raw (no-graph) helpers

template <class T>
Tensor<T> mask_image(const Mask& m, int64_t h) {
    const int64_t w = m.width();
    Tensor<T> t(Shape{h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) t.data[size_t(y * w + x)] = T(m.cols[size_t(x)]);
    return t;
}

// zero out unsampled columns of [..., H, W]
template <class T>
void apply_mask(CArray<T>& k, const Mask& m) {
    const Shape& s = k.shape();
    const int64_t w = s.back();
    if (w != m.width()) throw ShapeError(sstr("mask width ", m.width(), " != k-space width ", w));
    const int64_t rows = k.size() / w;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t x = 0; x < w; ++x)
            if (!m.cols[size_t(x)]) {
                k.re.data[size_t(r * w + x)] = 0;
                k.im.data[size_t(r * w + x)] = 0;
            }
}

// S_i * x per coil: [H,W] -> [N,H,W]
template <class T>
CArray<T> expand_raw(const CArray<T>& x, const SensitivityMaps<T>& s) {
    const int64_t n = s.coils(), hw = x.size();
    if (s.maps.size() != n * hw)
        throw ShapeError(sstr("expand: image ", shape_str(x.shape()), " vs maps ", shape_str(s.maps.shape())));
    CArray<T> out(s.maps.shape());
    for (int64_t i = 0; i < n * hw; ++i) {
        const int64_t p = i % hw;
        out.re.data[size_t(i)] = s.maps.re[size_t(i)] * x.re[size_t(p)] - s.maps.im[size_t(i)] * x.im[size_t(p)];
        out.im.data[size_t(i)] = s.maps.re[size_t(i)] * x.im[size_t(p)] + s.maps.im[size_t(i)] * x.re[size_t(p)];
    }
    return out;
}

// sum_i conj(S_i) * x_i: [N,H,W] -> [H,W]
template <class T>
CArray<T> reduce_raw(const CArray<T>& coils, const SensitivityMaps<T>& s) {
    if (coils.shape() != s.maps.shape())
        throw ShapeError(sstr("reduce: coils ", shape_str(coils.shape()), " vs maps ",
                              shape_str(s.maps.shape())));
    const int64_t n = s.coils();
    Shape img_shape(coils.shape().begin() + 1, coils.shape().end());
    const int64_t hw = numel(img_shape);
    CArray<T> out(img_shape);
    for (int64_t i = 0; i < n * hw; ++i) {
        const int64_t p = i % hw;
        const T sr = s.maps.re[size_t(i)], si = s.maps.im[size_t(i)];
        const T xr = coils.re[size_t(i)], xi = coils.im[size_t(i)];
        out.re.data[size_t(p)] += sr * xr + si * xi;
        out.im.data[size_t(p)] += sr * xi - si * xr;
    }
    return out;
}

// sqrt(sum_i |x_i|^2) pixelwise: [N,H,W] -> [H,W]
template <class T>
Tensor<T> rss_raw(const CArray<T>& coils) {
    const int64_t n = coils.shape()[0];
    Shape img_shape(coils.shape().begin() + 1, coils.shape().end());
    const int64_t hw = numel(img_shape);
    Tensor<T> out(img_shape);
    for (int64_t i = 0; i < n * hw; ++i) {
        const int64_t p = i % hw;
        out.data[size_t(p)] += coils.re[size_t(i)] * coils.re[size_t(i)] +
                               coils.im[size_t(i)] * coils.im[size_t(i)];
    }
    for (auto& v : out.data) v = std::sqrt(v);
    return out;
}

// M . F . expand
template <class T>
CArray<T> forward_model_raw(const CArray<T>& x, const SensitivityMaps<T>& s, const Mask& m) {
    CArray<T> k = expand_raw(x, s);
    fft2c(k);
    apply_mask(k, m);
    return k;
}

// reduce . F^-1 . M
template <class T>
CArray<T> adjoint_model_raw(const CArray<T>& k, const SensitivityMaps<T>& s, const Mask& m) {
    CArray<T> km = k;
    apply_mask(km, m);
    fft2c(km, /*inverse=*/true);
    return reduce_raw(km, s);
}

// ---------------------------------------------------------------------------
// Graph (differentiable) versions

template <class T>
ComplexVar<T> apply_mask(ComplexVar<T> k, const Mask& m) {
    const Shape& s = k.shape();
    const int64_t w = s.back();
    if (w != m.width()) throw ShapeError(sstr("mask width ", m.width(), " != k-space width ", w));
    Tensor<T> mt(s);
    const int64_t rows = numel(s) / w;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t x = 0; x < w; ++x) mt.data[size_t(r * w + x)] = T(m.cols[size_t(x)]);
    Var<T> mc = k.re.tape().constant(std::move(mt));
    return {ops::mul(k.re, mc), ops::mul(k.im, mc)};
}

template <class T>
ComplexVar<T> coil_expand(ComplexVar<T> x, ComplexVar<T> maps) {
    const int64_t n = maps.shape()[0];
    return cmul(crepeat_axis0(x, n), maps);
}

template <class T>
ComplexVar<T> coil_reduce(ComplexVar<T> coils, ComplexVar<T> maps) {
    return csum_axis0(cmul_conj(coils, maps));
}

// eps > 0 keeps gradients finite where all coils vanish
template <class T>
Var<T> rss(ComplexVar<T> coils, T eps = T(0)) {
    return ops::sqrt_eps(ops::sum_axis0(cabs2(coils)), eps);
}

template <class T>
ComplexVar<T> forward_model(ComplexVar<T> x, ComplexVar<T> maps, const Mask& m) {
    return apply_mask(cfft2c(coil_expand(x, maps)), m);
}

template <class T>
ComplexVar<T> adjoint_model(ComplexVar<T> k, ComplexVar<T> maps, const Mask& m) {
    return coil_reduce(cifft2c(apply_mask(k, m)), maps);
}

}  // namespace humus
