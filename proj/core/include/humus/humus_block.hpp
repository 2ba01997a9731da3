#pragma once

#include "humus/swin.hpp"

namespace humus {

// Image-space denoiser: shallow high-resolution features from one 3x3 conv,
// one 2x spatial reduction with channel doubling into the multi-scale token
// extractor, then a convolutional reconstruction head combining both paths.
// The block output is x_in + residual.

constexpr float kLeakySlope = 0.2f;

// two conv3x3+leaky_relu pairs with a residual around the pair stack
template <class T>
struct ConvBlockParams {
    Param<T> w1, b1, w2, b2;
};

template <class T>
ConvBlockParams<T> make_conv_block(Rng& rng, int64_t channels) {
    ConvBlockParams<T> p;
    p.w1 = Param<T>(Shape{channels, channels, 3, 3});
    p.b1 = Param<T>(Shape{channels});
    p.w2 = Param<T>(Shape{channels, channels, 3, 3});
    p.b2 = Param<T>(Shape{channels});
    init::fan_in_uniform_(p.w1, rng, channels * 9);
    init::fan_in_uniform_(p.w2, rng, channels * 9);
    return p;
}

template <class T>
Var<T> conv_block_forward(Tape<T>& tp, Var<T> x, ConvBlockParams<T>& p) {
    using namespace ops;
    Var<T> h = leaky_relu(conv2d(x, tp.param(p.w1), tp.param(p.b1), 1, 1), T(kLeakySlope));
    Var<T> h2 = leaky_relu(conv2d(h, tp.param(p.w2), tp.param(p.b2), 1, 1), T(kLeakySlope));
    return add(x, h2);
}

template <class T, class F>
void visit_params(ConvBlockParams<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".w1", p.w1);
    f(prefix + ".b1", p.b1);
    f(prefix + ".w2", p.w2);
    f(prefix + ".b2", p.b2);
}

struct HumusBlockConfig {
    int64_t in_channels = 2;  // 2*(2a+1): real/imag per stacked slice
    int64_t h = 64, w = 64;
    int64_t d_high = 6;  // d_H; low-res dim is d = 2*d_H
    int64_t window = 4;
    int64_t depths = 2;
    std::vector<int64_t> heads = {3, 6, 12};
    int64_t bottleneck_heads = 24;

    int64_t d_low() const { return 2 * d_high; }
};

template <class T>
struct HumusBlockWeights {
    HumusBlockConfig cfg;
    // f_H
    Param<T> fh_w, fh_b;
    // f_L: conv-block at d_H, stride-2 downsample conv d_H -> d, conv-block at d
    ConvBlockParams<T> fl_block1;
    Param<T> fl_down_w, fl_down_b;
    ConvBlockParams<T> fl_block2;
    // f_D
    MustParams<T> must;
    // f_R: transposed-conv upsample d -> d_H, conv-block on [F_H | up], final conv to c_in
    Param<T> fr_up_w, fr_up_b;
    ConvBlockParams<T> fr_block;
    Param<T> fr_out_w, fr_out_b;
};

template <class T>
HumusBlockWeights<T> make_humus_block(Rng& rng, const HumusBlockConfig& cfg) {
    if (cfg.h % 2 || cfg.w % 2)
        throw ConfigError(sstr("humus block: input ", cfg.h, "x", cfg.w, " must have even extents"));
    HumusBlockWeights<T> p;
    p.cfg = cfg;
    const int64_t dh = cfg.d_high, d = cfg.d_low();
    p.fh_w = Param<T>(Shape{dh, cfg.in_channels, 3, 3});
    p.fh_b = Param<T>(Shape{dh});
    init::fan_in_uniform_(p.fh_w, rng, cfg.in_channels * 9);
    p.fl_block1 = make_conv_block<T>(rng, dh);
    p.fl_down_w = Param<T>(Shape{d, dh, 3, 3});
    p.fl_down_b = Param<T>(Shape{d});
    init::fan_in_uniform_(p.fl_down_w, rng, dh * 9);
    p.fl_block2 = make_conv_block<T>(rng, d);

    MustConfig mc;
    mc.in_channels = d;
    mc.in_h = cfg.h / 2;
    mc.in_w = cfg.w / 2;
    mc.patch_size = 1;
    mc.embed_dim = d;
    mc.depths = cfg.depths;
    mc.heads = cfg.heads;
    mc.bottleneck_heads = cfg.bottleneck_heads;
    mc.window = cfg.window;
    p.must = make_must<T>(rng, mc);

    p.fr_up_w = Param<T>(Shape{d, dh, 2, 2});
    p.fr_up_b = Param<T>(Shape{dh});
    init::fan_in_uniform_(p.fr_up_w, rng, d * 4);
    p.fr_block = make_conv_block<T>(rng, 2 * dh);
    p.fr_out_w = Param<T>(Shape{cfg.in_channels, 2 * dh, 3, 3});
    p.fr_out_b = Param<T>(Shape{cfg.in_channels});
    init::fan_in_uniform_(p.fr_out_w, rng, 2 * dh * 9);
    return p;
}

template <class T>
Var<T> extract_high_res(Tape<T>& tp, Var<T> x_in, HumusBlockWeights<T>& p) {
    using namespace ops;
    const auto& cfg = p.cfg;
    Var<T> x4 = reshape(x_in, Shape{1, cfg.in_channels, cfg.h, cfg.w});
    Var<T> fh = conv2d(x4, tp.param(p.fh_w), tp.param(p.fh_b), 1, 1);
    return reshape(fh, Shape{cfg.d_high, cfg.h, cfg.w});
}

template <class T>
Var<T> extract_low_res(Tape<T>& tp, Var<T> f_high, HumusBlockWeights<T>& p) {
    using namespace ops;
    const auto& cfg = p.cfg;
    Var<T> x4 = reshape(f_high, Shape{1, cfg.d_high, cfg.h, cfg.w});
    Var<T> b1 = conv_block_forward(tp, x4, p.fl_block1);
    Var<T> dn = leaky_relu(conv2d(b1, tp.param(p.fl_down_w), tp.param(p.fl_down_b), 2, 1),
                           T(kLeakySlope));
    Var<T> b2 = conv_block_forward(tp, dn, p.fl_block2);
    return reshape(b2, Shape{cfg.d_low(), cfg.h / 2, cfg.w / 2});
}

template <class T>
Var<T> reconstruct(Tape<T>& tp, Var<T> f_high, Var<T> f_deep, HumusBlockWeights<T>& p) {
    using namespace ops;
    const auto& cfg = p.cfg;
    Var<T> fd4 = reshape(f_deep, Shape{1, cfg.d_low(), cfg.h / 2, cfg.w / 2});
    Var<T> up = conv_transpose2d(fd4, tp.param(p.fr_up_w), tp.param(p.fr_up_b), 2);  // [1,d_H,h,w]
    Var<T> fh4 = reshape(f_high, Shape{1, cfg.d_high, cfg.h, cfg.w});
    Var<T> cat = concat(fh4, up, 1);
    Var<T> blk = conv_block_forward(tp, cat, p.fr_block);
    Var<T> out = conv2d(blk, tp.param(p.fr_out_w), tp.param(p.fr_out_b), 1, 1);
    return reshape(out, Shape{cfg.in_channels, cfg.h, cfg.w});
}

// the denoising correction f_R(F_H, f_D(f_L(F_H))); the block output is
// x_in + this
template <class T>
Var<T> humus_block_residual(Tape<T>& tp, Var<T> x_in, HumusBlockWeights<T>& p) {
    Var<T> f_high = extract_high_res(tp, x_in, p);
    Var<T> f_low = extract_low_res(tp, f_high, p);
    Var<T> f_deep = must_forward(tp, f_low, p.must);
    return reconstruct(tp, f_high, f_deep, p);
}

template <class T>
Var<T> humus_block_forward(Tape<T>& tp, Var<T> x_in, HumusBlockWeights<T>& p) {
    return ops::add(x_in, humus_block_residual(tp, x_in, p));
}

template <class T, class F>
void visit_params(HumusBlockWeights<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".fh.w", p.fh_w);
    f(prefix + ".fh.b", p.fh_b);
    visit_params(p.fl_block1, prefix + ".fl.block1", f);
    f(prefix + ".fl.down.w", p.fl_down_w);
    f(prefix + ".fl.down.b", p.fl_down_b);
    visit_params(p.fl_block2, prefix + ".fl.block2", f);
    visit_params(p.must, prefix + ".must", f);
    f(prefix + ".fr.up.w", p.fr_up_w);
    f(prefix + ".fr.up.b", p.fr_up_b);
    visit_params(p.fr_block, prefix + ".fr.block", f);
    f(prefix + ".fr.out.w", p.fr_out_w);
    f(prefix + ".fr.out.b", p.fr_out_b);
}

}  // namespace humus
