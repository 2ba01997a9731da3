#pragma once

#include <string>

#include "humus/ops.hpp"

namespace humus {

// Image quality metrics. SSIM uses a 7x7 uniform window over the valid region
// (no padding), k1=0.01, k2=0.03, C_i = (k_i * data_range)^2. The data range
// is a per-volume constant (max target magnitude), applied to every slice of
// that volume.

constexpr int kSsimWindow = 7;

// Differentiable mean local SSIM of two [H,W] images.
template <class T>
Var<T> ssim(Var<T> x, Var<T> y, T data_range) {
    using namespace ops;
    if (x.shape().size() != 2 || x.shape() != y.shape())
        throw ShapeError(sstr("ssim: expects two equal [H,W] images, got ", shape_str(x.shape()),
                              " and ", shape_str(y.shape())));
    const int64_t h = x.shape()[0], w = x.shape()[1];
    if (h < kSsimWindow || w < kSsimWindow)
        throw ShapeError(sstr("ssim: image ", h, "x", w, " smaller than the ", kSsimWindow, "x",
                              kSsimWindow, " window"));
    auto& tp = x.tape();
    Tensor<T> kern = Tensor<T>::full(Shape{1, 1, kSsimWindow, kSsimWindow},
                                     T(1) / T(kSsimWindow * kSsimWindow));
    Var<T> ker = tp.constant(std::move(kern));
    Var<T> zb = tp.constant(Tensor<T>(Shape{1}));

    auto box = [&](Var<T> img) { return conv2d(reshape(img, Shape{1, 1, h, w}), ker, zb, 1, 0); };

    const T c1 = T(0.01) * data_range * (T(0.01) * data_range);
    const T c2 = T(0.03) * data_range * (T(0.03) * data_range);

    Var<T> mu_x = box(x), mu_y = box(y);
    Var<T> sxx = sub(box(mul(x, x)), mul(mu_x, mu_x));
    Var<T> syy = sub(box(mul(y, y)), mul(mu_y, mu_y));
    Var<T> sxy = sub(box(mul(x, y)), mul(mu_x, mu_y));

    Var<T> l_num = add_scalar(mul_scalar(mul(mu_x, mu_y), T(2)), c1);
    Var<T> l_den = add_scalar(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), c1);
    Var<T> c_num = add_scalar(mul_scalar(sxy, T(2)), c2);
    Var<T> c_den = add_scalar(add(sxx, syy), c2);

    Var<T> map = div(mul(l_num, c_num), mul(l_den, c_den));
    return mean_all(map);
}

// 1 - SSIM, the training loss
template <class T>
Var<T> ssim_loss(Var<T> reconstruction, Var<T> target, T data_range) {
    using namespace ops;
    return add_scalar(neg(ssim(reconstruction, target, data_range)), T(1));
}

// convenience: no-graph evaluation
template <class T>
T ssim_value(const Tensor<T>& x, const Tensor<T>& y, T data_range) {
    Tape<T> tp;
    return ssim(tp.leaf(x), tp.leaf(y), data_range).scalar();
}

// 10*log10(dr^2 / MSE), capped at 100 dB for MSE below dr^2 * 1e-10
template <class T>
double psnr(const Tensor<T>& reconstruction, const Tensor<T>& target, double data_range) {
    if (reconstruction.shape != target.shape)
        throw ShapeError(sstr("psnr: shape mismatch ", shape_str(reconstruction.shape), " vs ",
                              shape_str(target.shape)));
    double mse = 0;
    for (size_t i = 0; i < reconstruction.data.size(); ++i) {
        const double d = double(reconstruction.data[i]) - double(target.data[i]);
        mse += d * d;
    }
    mse /= double(reconstruction.data.size());
    const double dr2 = data_range * data_range;
    if (mse < dr2 * 1e-10) return 100.0;
    return 10.0 * std::log10(dr2 / mse);
}

template <class T>
double nmse(const Tensor<T>& reconstruction, const Tensor<T>& target) {
    if (reconstruction.shape != target.shape)
        throw ShapeError(sstr("nmse: shape mismatch ", shape_str(reconstruction.shape), " vs ",
                              shape_str(target.shape)));
    double num = 0, den = 0;
    for (size_t i = 0; i < reconstruction.data.size(); ++i) {
        const double d = double(reconstruction.data[i]) - double(target.data[i]);
        num += d * d;
        den += double(target.data[i]) * double(target.data[i]);
    }
    return num / den;
}

struct SliceMetrics {
    double ssim = 0, psnr = 0, nmse = 0;
};

struct MetricReport {
    double ssim = 0, psnr = 0, nmse = 0;  // aggregates: mean over all slices
    std::vector<SliceMetrics> per_slice;
    double data_range = 0;

    void add(const SliceMetrics& m) { per_slice.push_back(m); }
    void finalize();
};

std::string report_to_json(const MetricReport& r);
MetricReport report_from_json(const std::string& text);

}  // namespace humus
