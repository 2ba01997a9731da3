#pragma once

#include <variant>

#include "humus/unet.hpp"

namespace humus {

// Denoiser variants behind one residual contract: each produces the
// correction r(x_in) and the denoised image is x_in + r(x_in).
//
//   humus         full block: high-res conv path + low-res MUST + recon head
//   un-ss         single-scale residual swin stack on full-resolution tokens
//   un-ms         MUST on full-resolution tokens, no conv low-res path
//   un-ms-patch2  un-ms with 2x2 patch embedding and 3x embed dim
//   unet-denoiser plain convolutional U-Net

enum class DenoiserVariant { humus, un_ss, un_ms, un_ms_patch2, unet };

inline DenoiserVariant parse_variant(const std::string& s) {
    if (s == "humus") return DenoiserVariant::humus;
    if (s == "un-ss") return DenoiserVariant::un_ss;
    if (s == "un-ms") return DenoiserVariant::un_ms;
    if (s == "un-ms-patch2") return DenoiserVariant::un_ms_patch2;
    if (s == "unet-denoiser") return DenoiserVariant::unet;
    throw ConfigError(sstr("unknown denoiser variant '", s,
                           "' (expected humus, un-ss, un-ms, un-ms-patch2 or unet-denoiser)"));
}

inline std::string variant_name(DenoiserVariant v) {
    switch (v) {
        case DenoiserVariant::humus: return "humus";
        case DenoiserVariant::un_ss: return "un-ss";
        case DenoiserVariant::un_ms: return "un-ms";
        case DenoiserVariant::un_ms_patch2: return "un-ms-patch2";
        case DenoiserVariant::unet: return "unet-denoiser";
    }
    return "?";
}

struct DenoiserConfig {
    DenoiserVariant variant = DenoiserVariant::humus;
    int64_t in_channels = 2;
    int64_t h = 64, w = 64;
    int64_t d_high = 6;      // humus: d_H (low-res dim is 2*d_H)
    int64_t embed_dim = 12;  // un-ss / un-ms family token dim
    int64_t patch_size = 1;
    int64_t window = 4;
    int64_t depths = 2;
    std::vector<int64_t> heads = {3, 6, 12};
    int64_t bottleneck_heads = 24;
    int64_t single_scale_blocks = 3;  // un-ss RSTB count
    int64_t single_scale_heads = 6;
    int64_t unet_channels = 16;
};

// un-ss: shallow conv, token embedding, a stack of single-scale residual
// blocks, un-embedding, output conv
template <class T>
struct SwinStackWeights {
    DenoiserConfig cfg;
    Param<T> shallow_w, shallow_b;
    Param<T> embed_w, embed_b;
    std::vector<RstbParams<T>> rstbs;
    Param<T> unembed_w, unembed_b;
    Param<T> out_w, out_b;
};

// un-ms family: shallow conv, MUST, output conv
template <class T>
struct MsDenoiserWeights {
    DenoiserConfig cfg;
    int64_t shallow_dim = 12;
    Param<T> shallow_w, shallow_b;
    MustParams<T> must;
    Param<T> out_w, out_b;
};

template <class T>
struct UnetDenoiserWeights {
    DenoiserConfig cfg;
    UnetWeights<T> unet;
};

template <class T>
using DenoiserWeights = std::variant<HumusBlockWeights<T>, SwinStackWeights<T>, MsDenoiserWeights<T>,
                                     UnetDenoiserWeights<T>>;

template <class T>
DenoiserWeights<T> make_denoiser(Rng& rng, const DenoiserConfig& cfg) {
    switch (cfg.variant) {
        case DenoiserVariant::humus: {
            HumusBlockConfig hc;
            hc.in_channels = cfg.in_channels;
            hc.h = cfg.h;
            hc.w = cfg.w;
            hc.d_high = cfg.d_high;
            hc.window = cfg.window;
            hc.depths = cfg.depths;
            hc.heads = cfg.heads;
            hc.bottleneck_heads = cfg.bottleneck_heads;
            return make_humus_block<T>(rng, hc);
        }
        case DenoiserVariant::un_ss: {
            SwinStackWeights<T> p;
            p.cfg = cfg;
            const int64_t d = cfg.embed_dim;
            p.shallow_w = Param<T>(Shape{d, cfg.in_channels, 3, 3});
            p.shallow_b = Param<T>(Shape{d});
            init::fan_in_uniform_(p.shallow_w, rng, cfg.in_channels * 9);
            p.embed_w = Param<T>(Shape{d, d});
            p.embed_b = Param<T>(Shape{d});
            p.unembed_w = Param<T>(Shape{d, d});
            p.unembed_b = Param<T>(Shape{d});
            init::trunc_normal_(p.embed_w, rng);
            init::trunc_normal_(p.unembed_w, rng);
            for (int64_t i = 0; i < cfg.single_scale_blocks; ++i)
                p.rstbs.push_back(
                    make_rstb<T>(rng, d, cfg.single_scale_heads, cfg.window, cfg.depths, cfg.h, cfg.w));
            p.out_w = Param<T>(Shape{cfg.in_channels, d, 3, 3});
            p.out_b = Param<T>(Shape{cfg.in_channels});
            init::fan_in_uniform_(p.out_w, rng, d * 9);
            return p;
        }
        case DenoiserVariant::un_ms:
        case DenoiserVariant::un_ms_patch2: {
            MsDenoiserWeights<T> p;
            p.cfg = cfg;
            p.shallow_dim = 12;
            p.shallow_w = Param<T>(Shape{p.shallow_dim, cfg.in_channels, 3, 3});
            p.shallow_b = Param<T>(Shape{p.shallow_dim});
            init::fan_in_uniform_(p.shallow_w, rng, cfg.in_channels * 9);
            MustConfig mc;
            mc.in_channels = p.shallow_dim;
            mc.in_h = cfg.h;
            mc.in_w = cfg.w;
            mc.patch_size = cfg.variant == DenoiserVariant::un_ms_patch2 ? 2 : cfg.patch_size;
            mc.embed_dim = cfg.embed_dim;
            mc.depths = cfg.depths;
            mc.heads = cfg.heads;
            mc.bottleneck_heads = cfg.bottleneck_heads;
            mc.window = cfg.window;
            p.must = make_must<T>(rng, mc);
            p.out_w = Param<T>(Shape{cfg.in_channels, p.shallow_dim, 3, 3});
            p.out_b = Param<T>(Shape{cfg.in_channels});
            init::fan_in_uniform_(p.out_w, rng, p.shallow_dim * 9);
            return p;
        }
        case DenoiserVariant::unet: {
            UnetDenoiserWeights<T> p;
            p.cfg = cfg;
            p.unet = make_unet<T>(rng, cfg.in_channels, cfg.in_channels, cfg.unet_channels);
            return p;
        }
    }
    throw ConfigError("unreachable denoiser variant");
}

template <class T>
Var<T> denoiser_residual(Tape<T>& tp, Var<T> x_in, DenoiserWeights<T>& weights) {
    using namespace ops;
    return std::visit(
        [&](auto& p) -> Var<T> {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, HumusBlockWeights<T>>) {
                return humus_block_residual(tp, x_in, p);
            } else if constexpr (std::is_same_v<P, SwinStackWeights<T>>) {
                const auto& cfg = p.cfg;
                Var<T> x4 = reshape(x_in, Shape{1, cfg.in_channels, cfg.h, cfg.w});
                Var<T> shallow = conv2d(x4, tp.param(p.shallow_w), tp.param(p.shallow_b), 1, 1);
                TokenGrid<T> t = patch_embed(tp, reshape(shallow, Shape{cfg.embed_dim, cfg.h, cfg.w}),
                                             1, p.embed_w, p.embed_b);
                for (auto& r : p.rstbs) t = rstb_b_forward(tp, t, r);
                Var<T> img = patch_unembed(tp, t, 1, cfg.embed_dim, p.unembed_w, p.unembed_b);
                Var<T> out = conv2d(reshape(img, Shape{1, cfg.embed_dim, cfg.h, cfg.w}),
                                    tp.param(p.out_w), tp.param(p.out_b), 1, 1);
                return reshape(out, Shape{cfg.in_channels, cfg.h, cfg.w});
            } else if constexpr (std::is_same_v<P, MsDenoiserWeights<T>>) {
                const auto& cfg = p.cfg;
                Var<T> x4 = reshape(x_in, Shape{1, cfg.in_channels, cfg.h, cfg.w});
                Var<T> shallow = conv2d(x4, tp.param(p.shallow_w), tp.param(p.shallow_b), 1, 1);
                Var<T> deep = must_forward(tp, reshape(shallow, Shape{p.shallow_dim, cfg.h, cfg.w}),
                                           p.must);
                Var<T> out = conv2d(reshape(deep, Shape{1, p.shallow_dim, cfg.h, cfg.w}),
                                    tp.param(p.out_w), tp.param(p.out_b), 1, 1);
                return reshape(out, Shape{cfg.in_channels, cfg.h, cfg.w});
            } else {
                const auto& cfg = p.cfg;
                Var<T> x4 = reshape(x_in, Shape{1, cfg.in_channels, cfg.h, cfg.w});
                Var<T> out = unet_forward(tp, x4, p.unet);
                return reshape(out, Shape{cfg.in_channels, cfg.h, cfg.w});
            }
        },
        weights);
}

template <class T>
Var<T> denoiser_forward(Tape<T>& tp, Var<T> x_in, DenoiserWeights<T>& weights) {
    return ops::add(x_in, denoiser_residual(tp, x_in, weights));
}

template <class T, class F>
void visit_params(SwinStackWeights<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".shallow.w", p.shallow_w);
    f(prefix + ".shallow.b", p.shallow_b);
    f(prefix + ".embed.w", p.embed_w);
    f(prefix + ".embed.b", p.embed_b);
    for (size_t i = 0; i < p.rstbs.size(); ++i) visit_params(p.rstbs[i], sstr(prefix, ".rstb", i), f);
    f(prefix + ".unembed.w", p.unembed_w);
    f(prefix + ".unembed.b", p.unembed_b);
    f(prefix + ".out.w", p.out_w);
    f(prefix + ".out.b", p.out_b);
}

template <class T, class F>
void visit_params(MsDenoiserWeights<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".shallow.w", p.shallow_w);
    f(prefix + ".shallow.b", p.shallow_b);
    visit_params(p.must, prefix + ".must", f);
    f(prefix + ".out.w", p.out_w);
    f(prefix + ".out.b", p.out_b);
}

template <class T, class F>
void visit_params(UnetDenoiserWeights<T>& p, const std::string& prefix, F&& f) {
    visit_params(p.unet, prefix + ".unet", f);
}

template <class T, class F>
void visit_params(DenoiserWeights<T>& weights, const std::string& prefix, F&& f) {
    std::visit([&](auto& p) { visit_params(p, prefix, f); }, weights);
}

}  // namespace humus
