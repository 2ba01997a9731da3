#pragma once

#include "humus/humus_block.hpp"

namespace humus {

// Compact two-level U-Net: conv+leaky_relu pairs per stage, stride-2 conv
// downsampling, transposed-conv upsampling, skip concatenation, 1x1 output
// head. Used by the sensitivity-map estimator and as the plain convolutional
// denoiser baseline.

template <class T>
struct UnetStage {
    Param<T> w1, b1, w2, b2;
};

template <class T>
struct UnetWeights {
    int64_t in_channels = 2, out_channels = 2, base = 8;
    UnetStage<T> enc1, enc2, mid, dec2, dec1;
    Param<T> down1_w, down1_b, down2_w, down2_b;
    Param<T> up1_w, up1_b, up2_w, up2_b;
    Param<T> out_w, out_b;
};

namespace unet_detail {

template <class T>
UnetStage<T> make_stage(Rng& rng, int64_t cin, int64_t cout) {
    UnetStage<T> s;
    s.w1 = Param<T>(Shape{cout, cin, 3, 3});
    s.b1 = Param<T>(Shape{cout});
    s.w2 = Param<T>(Shape{cout, cout, 3, 3});
    s.b2 = Param<T>(Shape{cout});
    init::fan_in_uniform_(s.w1, rng, cin * 9);
    init::fan_in_uniform_(s.w2, rng, cout * 9);
    return s;
}

template <class T>
Var<T> stage_forward(Tape<T>& tp, Var<T> x, UnetStage<T>& s) {
    using namespace ops;
    Var<T> h = leaky_relu(conv2d(x, tp.param(s.w1), tp.param(s.b1), 1, 1), T(kLeakySlope));
    return leaky_relu(conv2d(h, tp.param(s.w2), tp.param(s.b2), 1, 1), T(kLeakySlope));
}

}  // namespace unet_detail

template <class T>
UnetWeights<T> make_unet(Rng& rng, int64_t in_channels, int64_t out_channels, int64_t base) {
    UnetWeights<T> u;
    u.in_channels = in_channels;
    u.out_channels = out_channels;
    u.base = base;
    u.enc1 = unet_detail::make_stage<T>(rng, in_channels, base);
    u.down1_w = Param<T>(Shape{2 * base, base, 3, 3});
    u.down1_b = Param<T>(Shape{2 * base});
    init::fan_in_uniform_(u.down1_w, rng, base * 9);
    u.enc2 = unet_detail::make_stage<T>(rng, 2 * base, 2 * base);
    u.down2_w = Param<T>(Shape{4 * base, 2 * base, 3, 3});
    u.down2_b = Param<T>(Shape{4 * base});
    init::fan_in_uniform_(u.down2_w, rng, 2 * base * 9);
    u.mid = unet_detail::make_stage<T>(rng, 4 * base, 4 * base);
    u.up1_w = Param<T>(Shape{4 * base, 2 * base, 2, 2});
    u.up1_b = Param<T>(Shape{2 * base});
    init::fan_in_uniform_(u.up1_w, rng, 4 * base * 4);
    u.dec2 = unet_detail::make_stage<T>(rng, 4 * base, 2 * base);
    u.up2_w = Param<T>(Shape{2 * base, base, 2, 2});
    u.up2_b = Param<T>(Shape{base});
    init::fan_in_uniform_(u.up2_w, rng, 2 * base * 4);
    u.dec1 = unet_detail::make_stage<T>(rng, 2 * base, base);
    u.out_w = Param<T>(Shape{out_channels, base, 1, 1});
    u.out_b = Param<T>(Shape{out_channels});
    init::fan_in_uniform_(u.out_w, rng, base);
    return u;
}

// x: [B, in_channels, H, W] with H, W divisible by 4
template <class T>
Var<T> unet_forward(Tape<T>& tp, Var<T> x, UnetWeights<T>& u) {
    using namespace ops;
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != u.in_channels)
        throw ShapeError(sstr("unet: expects [B,", u.in_channels, ",H,W], got ", shape_str(s)));
    if (s[2] % 4 || s[3] % 4)
        throw ShapeError(sstr("unet: spatial extents must be multiples of 4, got ", s[2], "x", s[3]));
    Var<T> e1 = unet_detail::stage_forward(tp, x, u.enc1);
    Var<T> d1 = leaky_relu(conv2d(e1, tp.param(u.down1_w), tp.param(u.down1_b), 2, 1), T(kLeakySlope));
    Var<T> e2 = unet_detail::stage_forward(tp, d1, u.enc2);
    Var<T> d2 = leaky_relu(conv2d(e2, tp.param(u.down2_w), tp.param(u.down2_b), 2, 1), T(kLeakySlope));
    Var<T> mid = unet_detail::stage_forward(tp, d2, u.mid);
    Var<T> u1 = conv_transpose2d(mid, tp.param(u.up1_w), tp.param(u.up1_b), 2);
    Var<T> c2 = unet_detail::stage_forward(tp, concat(u1, e2, 1), u.dec2);
    Var<T> u2 = conv_transpose2d(c2, tp.param(u.up2_w), tp.param(u.up2_b), 2);
    Var<T> c1 = unet_detail::stage_forward(tp, concat(u2, e1, 1), u.dec1);
    return conv2d(c1, tp.param(u.out_w), tp.param(u.out_b), 1, 0);
}

template <class T, class F>
void visit_params(UnetStage<T>& s, const std::string& prefix, F&& f) {
    f(prefix + ".w1", s.w1);
    f(prefix + ".b1", s.b1);
    f(prefix + ".w2", s.w2);
    f(prefix + ".b2", s.b2);
}

template <class T, class F>
void visit_params(UnetWeights<T>& u, const std::string& prefix, F&& f) {
    visit_params(u.enc1, prefix + ".enc1", f);
    f(prefix + ".down1.w", u.down1_w);
    f(prefix + ".down1.b", u.down1_b);
    visit_params(u.enc2, prefix + ".enc2", f);
    f(prefix + ".down2.w", u.down2_w);
    f(prefix + ".down2.b", u.down2_b);
    visit_params(u.mid, prefix + ".mid", f);
    f(prefix + ".up1.w", u.up1_w);
    f(prefix + ".up1.b", u.up1_b);
    visit_params(u.dec2, prefix + ".dec2", f);
    f(prefix + ".up2.w", u.up2_w);
    f(prefix + ".up2.b", u.up2_b);
    visit_params(u.dec1, prefix + ".dec1", f);
    f(prefix + ".out.w", u.out_w);
    f(prefix + ".out.b", u.out_b);
}

}  // namespace humus
