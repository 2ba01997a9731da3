#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <string>

#include "humus/ops.hpp"

namespace humus {

// Token-space machinery: patch embedding, windowed (shifted) self-attention,
// the Swin transformer layer, residual blocks and the multi-scale
// encoder-decoder built from them. Token matrices are [L, d] in raster order
// with grid (h, w), L = h*w.

template <class T>
struct TokenGrid {
    Var<T> tokens;  // [L, d]
    int64_t h = 0, w = 0;

    int64_t count() const { return tokens.shape()[0]; }
    int64_t dim() const { return tokens.shape()[1]; }
};

// ---------------------------------------------------------------------------
// index builders (pure permutations, consumed by gather)

namespace swin_detail {

// Index vectors are pure functions of the geometry; they are built once and
// shared across calls (and graphs) through this cache.
using IndexPtr = std::shared_ptr<const std::vector<int32_t>>;

inline IndexPtr cached_indices(const std::string& key,
                               const std::function<std::vector<int32_t>()>& make) {
    static std::mutex mutex;
    static std::map<std::string, IndexPtr> table;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = table.find(key);
    if (it != table.end()) return it->second;
    auto v = std::make_shared<const std::vector<int32_t>>(make());
    table.emplace(key, v);
    return v;
}

// cyclic shift by `shift` then partition into ws x ws windows:
// [h*w, d] -> [nW*M, d], window-major, raster within window
inline std::vector<int32_t> partition_indices(int64_t h, int64_t w, int64_t ws, int64_t shift,
                                              int64_t d) {
    const int64_t nwy = h / ws, nwx = w / ws;
    std::vector<int32_t> idx(size_t(h * w * d));
    int64_t o = 0;
    for (int64_t wy = 0; wy < nwy; ++wy)
        for (int64_t wx = 0; wx < nwx; ++wx)
            for (int64_t iy = 0; iy < ws; ++iy)
                for (int64_t ix = 0; ix < ws; ++ix) {
                    const int64_t sy = (wy * ws + iy + shift) % h;
                    const int64_t sx = (wx * ws + ix + shift) % w;
                    const int64_t row = sy * w + sx;
                    for (int64_t c = 0; c < d; ++c) idx[size_t(o++)] = int32_t(row * d + c);
                }
    return idx;
}

inline std::vector<int32_t> invert_permutation(const std::vector<int32_t>& idx) {
    std::vector<int32_t> inv(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) inv[size_t(idx[i])] = int32_t(i);
    return inv;
}

// [nW*M, 3d] -> one of q/k/v as [nW*heads, M, dh]
inline std::vector<int32_t> head_split_indices(int64_t n_windows, int64_t m, int64_t d,
                                               int64_t heads, int64_t which) {
    const int64_t dh = d / heads;
    std::vector<int32_t> idx(size_t(n_windows * heads * m * dh));
    int64_t o = 0;
    for (int64_t wi = 0; wi < n_windows; ++wi)
        for (int64_t hd = 0; hd < heads; ++hd)
            for (int64_t i = 0; i < m; ++i)
                for (int64_t c = 0; c < dh; ++c)
                    idx[size_t(o++)] = int32_t((wi * m + i) * 3 * d + which * d + hd * dh + c);
    return idx;
}

// [nW*heads, M, dh] -> [nW*M, d]
inline std::vector<int32_t> head_merge_indices(int64_t n_windows, int64_t m, int64_t d,
                                               int64_t heads) {
    const int64_t dh = d / heads;
    std::vector<int32_t> idx(size_t(n_windows * m * d));
    int64_t o = 0;
    for (int64_t wi = 0; wi < n_windows; ++wi)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t hd = 0; hd < heads; ++hd)
                for (int64_t c = 0; c < dh; ++c)
                    idx[size_t(o++)] = int32_t(((wi * heads + hd) * m + i) * dh + c);
    return idx;
}

// relative-position index of a token pair inside a ws x ws window
inline int64_t relative_index(int64_t i, int64_t j, int64_t ws) {
    const int64_t yi = i / ws, xi = i % ws, yj = j / ws, xj = j % ws;
    return (yi - yj + ws - 1) * (2 * ws - 1) + (xi - xj + ws - 1);
}

// bias table [(2ws-1)^2, heads] -> logits layout [nW*heads, M, M]
inline std::vector<int32_t> bias_indices(int64_t n_windows, int64_t m, int64_t ws, int64_t heads) {
    std::vector<int32_t> idx(size_t(n_windows * heads * m * m));
    int64_t o = 0;
    for (int64_t wi = 0; wi < n_windows; ++wi)
        for (int64_t hd = 0; hd < heads; ++hd)
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < m; ++j)
                    idx[size_t(o++)] = int32_t(relative_index(i, j, ws) * heads + hd);
    return idx;
}

// additive mask blocking attention across cyclic-shift seams, in rolled
// coordinates: region ids from the three slices per axis, -100 where ids
// differ. Layout [nW*heads, M, M].
template <class T>
Tensor<T> shift_mask(int64_t h, int64_t w, int64_t ws, int64_t shift, int64_t heads) {
    auto region = [&](int64_t v, int64_t extent) {
        if (v < extent - ws) return int64_t(0);
        if (v < extent - shift) return int64_t(1);
        return int64_t(2);
    };
    std::vector<int64_t> ids(size_t(h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) ids[size_t(y * w + x)] = region(y, h) * 3 + region(x, w);

    const int64_t nwy = h / ws, nwx = w / ws, m = ws * ws;
    Tensor<T> mask(Shape{nwy * nwx * heads, m, m});
    int64_t o = 0;
    for (int64_t wy = 0; wy < nwy; ++wy)
        for (int64_t wx = 0; wx < nwx; ++wx)
            for (int64_t hd = 0; hd < heads; ++hd)
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < m; ++j) {
                        const int64_t yi = wy * ws + i / ws, xi = wx * ws + i % ws;
                        const int64_t yj = wy * ws + j / ws, xj = wx * ws + j % ws;
                        mask.data[size_t(o++)] =
                            ids[size_t(yi * w + xi)] == ids[size_t(yj * w + xj)] ? T(0) : T(-100);
                    }
    return mask;
}

// [L, d] <-> [1, d, h, w] raster moves
inline std::vector<int32_t> tokens_to_image_indices(int64_t h, int64_t w, int64_t d) {
    std::vector<int32_t> idx(size_t(h * w * d));
    int64_t o = 0;
    for (int64_t c = 0; c < d; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) idx[size_t(o++)] = int32_t((y * w + x) * d + c);
    return idx;
}

inline std::vector<int32_t> image_to_tokens_indices(int64_t h, int64_t w, int64_t d) {
    std::vector<int32_t> idx(size_t(h * w * d));
    int64_t o = 0;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < d; ++c) idx[size_t(o++)] = int32_t((c * h + y) * w + x);
    return idx;
}

// [c, h, w] -> [L, p*p*c] patch flatten, channel-major inside the patch
inline std::vector<int32_t> patch_flatten_indices(int64_t c, int64_t h, int64_t w, int64_t p) {
    const int64_t gh = h / p, gw = w / p;
    std::vector<int32_t> idx(size_t(c * h * w));
    int64_t o = 0;
    for (int64_t ty = 0; ty < gh; ++ty)
        for (int64_t tx = 0; tx < gw; ++tx)
            for (int64_t cc = 0; cc < c; ++cc)
                for (int64_t py = 0; py < p; ++py)
                    for (int64_t px = 0; px < p; ++px)
                        idx[size_t(o++)] = int32_t((cc * h + ty * p + py) * w + tx * p + px);
    return idx;
}

// 2x2 token grouping for the merge: [h*w, d] -> [h/2*w/2, 4d], raster order
// inside the group
inline std::vector<int32_t> merge_group_indices(int64_t h, int64_t w, int64_t d) {
    std::vector<int32_t> idx(size_t(h * w * d));
    int64_t o = 0;
    for (int64_t ty = 0; ty < h / 2; ++ty)
        for (int64_t tx = 0; tx < w / 2; ++tx)
            for (int64_t py = 0; py < 2; ++py)
                for (int64_t px = 0; px < 2; ++px) {
                    const int64_t row = (2 * ty + py) * w + 2 * tx + px;
                    for (int64_t c = 0; c < d; ++c) idx[size_t(o++)] = int32_t(row * d + c);
                }
    return idx;
}

// expansion rearrange: [h*w, 2d] -> [2h*2w, d/2] where source token (ty,tx)
// chunk (py*2+px) of width d/2 feeds target token (2ty+py, 2tx+px)
inline std::vector<int32_t> expand_scatter_indices(int64_t h, int64_t w, int64_t d2) {
    // d2 = 2*d_in; output dim = d2/4
    const int64_t dq = d2 / 4;
    std::vector<int32_t> idx(size_t(4 * h * w * dq));
    int64_t o = 0;
    for (int64_t y = 0; y < 2 * h; ++y)
        for (int64_t x = 0; x < 2 * w; ++x) {
            const int64_t ty = y / 2, tx = x / 2, chunk = (y % 2) * 2 + (x % 2);
            const int64_t src_row = ty * w + tx;
            for (int64_t c = 0; c < dq; ++c)
                idx[size_t(o++)] = int32_t(src_row * d2 + chunk * dq + c);
        }
    return idx;
}

}  // namespace swin_detail

// ---------------------------------------------------------------------------
// parameter blocks and initialization

template <class T>
struct StlParams {
    int64_t window = 4;
    int64_t shift = 0;
    int64_t heads = 1;
    Param<T> norm1_g, norm1_b;
    Param<T> qkv_w, qkv_b;
    Param<T> proj_w, proj_b;
    Param<T> bias_table;  // [(2w-1)^2, heads]
    Param<T> norm2_g, norm2_b;
    Param<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <class T>
struct PatchMergeParams {
    Param<T> norm_g, norm_b;  // [4d]
    Param<T> red_w, red_b;    // [4d, 2d]
};

template <class T>
struct PatchExpandParams {
    Param<T> exp_w, exp_b;    // [d, 2d]
    Param<T> norm_g, norm_b;  // [d/2]
};

template <class T>
struct TokenMixParams {
    Param<T> mix_w, mix_b;    // [2d, d]
    Param<T> norm_g, norm_b;  // [d]
};

template <class T>
struct RstbParams {
    std::vector<StlParams<T>> stls;
    Param<T> unembed_w, unembed_b;  // [d, d]
    Param<T> conv_w, conv_b;        // 3x3, d -> d
    Param<T> reembed_w, reembed_b;  // [d, d]
};

struct MustConfig {
    int64_t in_channels = 12;  // feature channels entering patch embedding
    int64_t in_h = 32, in_w = 32;
    int64_t patch_size = 1;
    int64_t embed_dim = 12;
    int64_t depths = 2;                     // STLs per residual block
    std::vector<int64_t> heads = {3, 6, 12};  // per encoder/decoder level
    int64_t bottleneck_heads = 24;
    int64_t bottleneck_blocks = 2;
    int64_t window = 4;

    int64_t levels() const { return int64_t(heads.size()); }
    int64_t grid_h() const { return in_h / patch_size; }
    int64_t grid_w() const { return in_w / patch_size; }
    int64_t dim_at(int64_t level) const { return embed_dim << level; }
};

template <class T>
struct MustParams {
    MustConfig cfg;
    Param<T> embed_w, embed_b;      // [p^2*c, d]
    Param<T> unembed_w, unembed_b;  // [d, p^2*c]
    std::vector<RstbParams<T>> down;
    std::vector<PatchMergeParams<T>> merges;
    std::vector<RstbParams<T>> bottleneck;
    std::vector<PatchExpandParams<T>> expands;   // decoder order (coarse to fine)
    std::vector<TokenMixParams<T>> mixes;
    std::vector<RstbParams<T>> up;
};

namespace init {

template <class T>
void trunc_normal_(Param<T>& p, Rng& rng, double sd = 0.02) {
    for (auto& v : p.value) v = T(rng.trunc_normal(sd));
}

template <class T>
void fan_in_uniform_(Param<T>& p, Rng& rng, int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    for (auto& v : p.value) v = T(rng.uniform(-bound, bound));
}

template <class T>
void ones_(Param<T>& p) {
    for (auto& v : p.value) v = T(1);
}

}  // namespace init

template <class T>
StlParams<T> make_stl(Rng& rng, int64_t d, int64_t heads, int64_t window, int64_t shift,
                      int64_t mlp_ratio = 2) {
    if (d % heads != 0)
        throw ConfigError(sstr("stl: dim ", d, " not divisible by ", heads, " heads"));
    StlParams<T> p;
    p.window = window;
    p.shift = shift;
    p.heads = heads;
    p.norm1_g = Param<T>(Shape{d});
    p.norm1_b = Param<T>(Shape{d});
    p.norm2_g = Param<T>(Shape{d});
    p.norm2_b = Param<T>(Shape{d});
    init::ones_(p.norm1_g);
    init::ones_(p.norm2_g);
    p.qkv_w = Param<T>(Shape{d, 3 * d});
    p.qkv_b = Param<T>(Shape{3 * d});
    p.proj_w = Param<T>(Shape{d, d});
    p.proj_b = Param<T>(Shape{d});
    p.bias_table = Param<T>(Shape{(2 * window - 1) * (2 * window - 1), heads});
    const int64_t hidden = mlp_ratio * d;
    p.mlp_w1 = Param<T>(Shape{d, hidden});
    p.mlp_b1 = Param<T>(Shape{hidden});
    p.mlp_w2 = Param<T>(Shape{hidden, d});
    p.mlp_b2 = Param<T>(Shape{d});
    init::trunc_normal_(p.qkv_w, rng);
    init::trunc_normal_(p.proj_w, rng);
    init::trunc_normal_(p.mlp_w1, rng);
    init::trunc_normal_(p.mlp_w2, rng);
    return p;
}

template <class T>
RstbParams<T> make_rstb(Rng& rng, int64_t d, int64_t heads, int64_t window, int64_t depth,
                        int64_t grid_h, int64_t grid_w) {
    // cap the window at the grid and disable shifting when nothing to shift
    const int64_t ws = std::min({window, grid_h, grid_w});
    if (grid_h % ws != 0 || grid_w % ws != 0)
        throw ConfigError(sstr("rstb: grid ", grid_h, "x", grid_w, " not divisible by window ", ws));
    RstbParams<T> p;
    for (int64_t i = 0; i < depth; ++i) {
        const bool can_shift = grid_h > ws || grid_w > ws;
        const int64_t shift = (i % 2 == 1 && can_shift) ? ws / 2 : 0;
        p.stls.push_back(make_stl<T>(rng, d, heads, ws, shift));
    }
    p.unembed_w = Param<T>(Shape{d, d});
    p.unembed_b = Param<T>(Shape{d});
    p.reembed_w = Param<T>(Shape{d, d});
    p.reembed_b = Param<T>(Shape{d});
    init::trunc_normal_(p.unembed_w, rng);
    init::trunc_normal_(p.reembed_w, rng);
    p.conv_w = Param<T>(Shape{d, d, 3, 3});
    p.conv_b = Param<T>(Shape{d});
    init::fan_in_uniform_(p.conv_w, rng, d * 9);
    return p;
}

template <class T>
PatchMergeParams<T> make_patch_merge(Rng& rng, int64_t d) {
    PatchMergeParams<T> p;
    p.norm_g = Param<T>(Shape{4 * d});
    p.norm_b = Param<T>(Shape{4 * d});
    init::ones_(p.norm_g);
    p.red_w = Param<T>(Shape{4 * d, 2 * d});
    p.red_b = Param<T>(Shape{2 * d});
    init::trunc_normal_(p.red_w, rng);
    return p;
}

template <class T>
PatchExpandParams<T> make_patch_expand(Rng& rng, int64_t d) {
    if (d % 2 != 0) throw ConfigError(sstr("patch_expand: dim ", d, " must be even"));
    PatchExpandParams<T> p;
    p.exp_w = Param<T>(Shape{d, 2 * d});
    p.exp_b = Param<T>(Shape{2 * d});
    init::trunc_normal_(p.exp_w, rng);
    p.norm_g = Param<T>(Shape{d / 2});
    p.norm_b = Param<T>(Shape{d / 2});
    init::ones_(p.norm_g);
    return p;
}

template <class T>
TokenMixParams<T> make_token_mix(Rng& rng, int64_t d) {
    TokenMixParams<T> p;
    p.mix_w = Param<T>(Shape{2 * d, d});
    p.mix_b = Param<T>(Shape{d});
    init::trunc_normal_(p.mix_w, rng);
    p.norm_g = Param<T>(Shape{d});
    p.norm_b = Param<T>(Shape{d});
    init::ones_(p.norm_g);
    return p;
}

inline void validate_must_config(const MustConfig& cfg) {
    if (cfg.patch_size != 1 && cfg.patch_size != 2)
        throw ConfigError(sstr("must: patch_size must be 1 or 2, got ", cfg.patch_size));
    if (cfg.in_h % cfg.patch_size || cfg.in_w % cfg.patch_size)
        throw ConfigError(sstr("must: input ", cfg.in_h, "x", cfg.in_w, " not divisible by patch size ",
                               cfg.patch_size));
    const int64_t need = int64_t(1) << cfg.levels();
    if (cfg.grid_h() % need || cfg.grid_w() % need)
        throw ConfigError(sstr("must: token grid ", cfg.grid_h(), "x", cfg.grid_w(), " must be a multiple of ",
                               need, " (", cfg.levels(), " halvings); input extents must be multiples of ",
                               need * cfg.patch_size));
    for (int64_t l = 0; l < cfg.levels(); ++l)
        if (cfg.dim_at(l) % cfg.heads[size_t(l)])
            throw ConfigError(sstr("must: level ", l, " dim ", cfg.dim_at(l), " not divisible by ",
                                   cfg.heads[size_t(l)], " heads"));
    if (cfg.dim_at(cfg.levels()) % cfg.bottleneck_heads)
        throw ConfigError(sstr("must: bottleneck dim ", cfg.dim_at(cfg.levels()),
                               " not divisible by ", cfg.bottleneck_heads, " heads"));
}

template <class T>
MustParams<T> make_must(Rng& rng, const MustConfig& cfg) {
    validate_must_config(cfg);
    MustParams<T> m;
    m.cfg = cfg;
    const int64_t pc = cfg.patch_size * cfg.patch_size * cfg.in_channels;
    m.embed_w = Param<T>(Shape{pc, cfg.embed_dim});
    m.embed_b = Param<T>(Shape{cfg.embed_dim});
    m.unembed_w = Param<T>(Shape{cfg.embed_dim, pc});
    m.unembed_b = Param<T>(Shape{pc});
    init::trunc_normal_(m.embed_w, rng);
    init::trunc_normal_(m.unembed_w, rng);

    int64_t gh = cfg.grid_h(), gw = cfg.grid_w();
    for (int64_t l = 0; l < cfg.levels(); ++l) {
        const int64_t d = cfg.dim_at(l);
        m.down.push_back(make_rstb<T>(rng, d, cfg.heads[size_t(l)], cfg.window, cfg.depths, gh, gw));
        m.merges.push_back(make_patch_merge<T>(rng, d));
        gh /= 2;
        gw /= 2;
    }
    const int64_t bd = cfg.dim_at(cfg.levels());
    for (int64_t b = 0; b < cfg.bottleneck_blocks; ++b)
        m.bottleneck.push_back(make_rstb<T>(rng, bd, cfg.bottleneck_heads, cfg.window, cfg.depths, gh, gw));
    for (int64_t l = cfg.levels() - 1; l >= 0; --l) {
        const int64_t d = cfg.dim_at(l);
        m.expands.push_back(make_patch_expand<T>(rng, 2 * d));
        gh *= 2;
        gw *= 2;
        m.mixes.push_back(make_token_mix<T>(rng, d));
        m.up.push_back(make_rstb<T>(rng, d, cfg.heads[size_t(l)], cfg.window, cfg.depths, gh, gw));
    }
    return m;
}

// ---------------------------------------------------------------------------
// forward passes

// [c,h,w] features -> L=(h/p)(w/p) tokens via learned projection of flattened
// p x p x c patches
template <class T>
TokenGrid<T> patch_embed(Tape<T>& tp, Var<T> features, int64_t patch, Param<T>& proj_w,
                         Param<T>& proj_b) {
    const Shape& s = features.shape();
    if (s.size() != 3) throw ShapeError(sstr("patch_embed: expects [c,h,w], got ", shape_str(s)));
    const int64_t c = s[0], h = s[1], w = s[2];
    if (h % patch || w % patch)
        throw ShapeError(sstr("patch_embed: ", h, "x", w, " not divisible by patch size ", patch));
    const int64_t gh = h / patch, gw = w / patch;
    auto idx = swin_detail::cached_indices(
        sstr("pflat/", c, "/", h, "/", w, "/", patch),
        [&] { return swin_detail::patch_flatten_indices(c, h, w, patch); });
    Var<T> flat = ops::gather(features, idx, Shape{gh * gw, patch * patch * c});
    return {ops::linear(flat, tp.param(proj_w), tp.param(proj_b)), gh, gw};
}

// inverse of patch_embed: learned projection back to p^2*c values per token,
// then raster unflatten to [c,h,w]
template <class T>
Var<T> patch_unembed(Tape<T>& tp, const TokenGrid<T>& g, int64_t patch, int64_t c, Param<T>& proj_w,
                     Param<T>& proj_b) {
    const int64_t h = g.h * patch, w = g.w * patch;
    Var<T> flat = ops::linear(g.tokens, tp.param(proj_w), tp.param(proj_b));  // [L, p^2*c]
    auto inv = swin_detail::cached_indices(
        sstr("ipflat/", c, "/", h, "/", w, "/", patch), [&] {
            return swin_detail::invert_permutation(swin_detail::patch_flatten_indices(c, h, w, patch));
        });
    return ops::gather(flat, inv, Shape{c, h, w});
}

template <class T>
TokenGrid<T> window_attention(Tape<T>& tp, const TokenGrid<T>& g, StlParams<T>& p) {
    using namespace ops;
    namespace sd = swin_detail;
    const int64_t h = g.h, w = g.w, d = g.dim(), ws = p.window;
    if (h % ws || w % ws)
        throw ShapeError(sstr("window_attention: grid ", h, "x", w, " not divisible by window ", ws));
    const int64_t m = ws * ws, n_windows = (h / ws) * (w / ws);
    const int64_t dh = d / p.heads;

    const std::string geo = sstr(h, "/", w, "/", ws, "/", p.shift, "/", d, "/", p.heads);
    auto part = sd::cached_indices("part/" + geo,
                                   [&] { return sd::partition_indices(h, w, ws, p.shift, d); });
    auto part_inv =
        sd::cached_indices("ipart/" + geo, [&] { return sd::invert_permutation(*part); });
    auto split = [&](int64_t which) {
        return sd::cached_indices(sstr("split", which, "/", geo), [&] {
            return sd::head_split_indices(n_windows, m, d, p.heads, which);
        });
    };

    Var<T> x = gather(g.tokens, part, Shape{n_windows * m, d});
    Var<T> qkv = linear(x, tp.param(p.qkv_w), tp.param(p.qkv_b));
    Var<T> q = gather(qkv, split(0), Shape{n_windows * p.heads, m, dh});
    Var<T> k = gather(qkv, split(1), Shape{n_windows * p.heads, m, dh});
    Var<T> v = gather(qkv, split(2), Shape{n_windows * p.heads, m, dh});

    Var<T> logits = bmm(mul_scalar(q, T(1.0 / std::sqrt(double(dh)))), k, /*trans_b=*/true);
    logits = add(logits,
                 gather(tp.param(p.bias_table),
                        sd::cached_indices("bias/" + geo,
                                           [&] { return sd::bias_indices(n_windows, m, ws, p.heads); }),
                        Shape{n_windows * p.heads, m, m}));
    if (p.shift > 0)
        logits = add(logits, tp.constant(sd::shift_mask<T>(h, w, ws, p.shift, p.heads)));

    Var<T> out = bmm(softmax(logits), v);  // [nW*heads, M, dh]
    out = gather(out,
                 sd::cached_indices("merge/" + geo,
                                    [&] { return sd::head_merge_indices(n_windows, m, d, p.heads); }),
                 Shape{n_windows * m, d});
    out = linear(out, tp.param(p.proj_w), tp.param(p.proj_b));
    Var<T> y = gather(out, part_inv, Shape{h * w, d});
    return {y, h, w};
}

// pre-norm residual wiring: x + attn(norm(x)), then + mlp(norm(.))
template <class T>
TokenGrid<T> stl_forward(Tape<T>& tp, const TokenGrid<T>& g, StlParams<T>& p) {
    using namespace ops;
    Var<T> n1 = layer_norm(g.tokens, tp.param(p.norm1_g), tp.param(p.norm1_b));
    TokenGrid<T> attn = window_attention(tp, TokenGrid<T>{n1, g.h, g.w}, p);
    Var<T> x1 = add(g.tokens, attn.tokens);
    Var<T> n2 = layer_norm(x1, tp.param(p.norm2_g), tp.param(p.norm2_b));
    Var<T> hdn = gelu(linear(n2, tp.param(p.mlp_w1), tp.param(p.mlp_b1)));
    Var<T> mlp = linear(hdn, tp.param(p.mlp_w2), tp.param(p.mlp_b2));
    return {add(x1, mlp), g.h, g.w};
}

// STL stack, image-space 3x3 conv between learned un-embed/re-embed, block
// residual on the tokens
template <class T>
TokenGrid<T> rstb_b_forward(Tape<T>& tp, const TokenGrid<T>& g, RstbParams<T>& p) {
    using namespace ops;
    namespace sd = swin_detail;
    TokenGrid<T> t = g;
    for (auto& stl : p.stls) t = stl_forward(tp, t, stl);
    const int64_t d = g.dim();
    auto t2i = sd::cached_indices(sstr("t2i/", g.h, "/", g.w, "/", d),
                                  [&] { return sd::tokens_to_image_indices(g.h, g.w, d); });
    auto i2t = sd::cached_indices(sstr("i2t/", g.h, "/", g.w, "/", d),
                                  [&] { return sd::image_to_tokens_indices(g.h, g.w, d); });
    Var<T> lin = linear(t.tokens, tp.param(p.unembed_w), tp.param(p.unembed_b));
    Var<T> img = reshape(gather(lin, t2i, Shape{d, g.h, g.w}), Shape{1, d, g.h, g.w});
    Var<T> conv = conv2d(img, tp.param(p.conv_w), tp.param(p.conv_b), 1, 1);
    Var<T> back = gather(reshape(conv, Shape{d, g.h, g.w}), i2t, Shape{g.h * g.w, d});
    Var<T> re = linear(back, tp.param(p.reembed_w), tp.param(p.reembed_b));
    return {add(g.tokens, re), g.h, g.w};
}

// 2x2 token groups -> norm -> 4d->2d projection; halves the grid, doubles dim
template <class T>
TokenGrid<T> patch_merge(Tape<T>& tp, const TokenGrid<T>& g, PatchMergeParams<T>& p) {
    using namespace ops;
    if (g.h % 2 || g.w % 2)
        throw ShapeError(sstr("patch_merge: grid ", g.h, "x", g.w, " must have even extents"));
    const int64_t d = g.dim();
    auto idx = swin_detail::cached_indices(
        sstr("mgroup/", g.h, "/", g.w, "/", d),
        [&] { return swin_detail::merge_group_indices(g.h, g.w, d); });
    Var<T> grouped = gather(g.tokens, idx, Shape{g.h / 2 * (g.w / 2), 4 * d});
    Var<T> normed = layer_norm(grouped, tp.param(p.norm_g), tp.param(p.norm_b));
    return {linear(normed, tp.param(p.red_w), tp.param(p.red_b)), g.h / 2, g.w / 2};
}

// d->2d projection, rearrange each token into a 2x2 block of d/2 tokens, norm;
// doubles the grid, halves dim
template <class T>
TokenGrid<T> patch_expand(Tape<T>& tp, const TokenGrid<T>& g, PatchExpandParams<T>& p) {
    using namespace ops;
    const int64_t d = g.dim();
    if (d % 2) throw ShapeError(sstr("patch_expand: dim ", d, " must be even"));
    Var<T> wide = linear(g.tokens, tp.param(p.exp_w), tp.param(p.exp_b));  // [L, 2d]
    auto idx = swin_detail::cached_indices(
        sstr("expand/", g.h, "/", g.w, "/", d),
        [&] { return swin_detail::expand_scatter_indices(g.h, g.w, 2 * d); });
    Var<T> spread = gather(wide, idx, Shape{4 * g.h * g.w, d / 2});
    Var<T> normed = layer_norm(spread, tp.param(p.norm_g), tp.param(p.norm_b));
    return {normed, 2 * g.h, 2 * g.w};
}

// concat along dim, 2d->d projection, norm
template <class T>
TokenGrid<T> token_mix(Tape<T>& tp, const TokenGrid<T>& up, const TokenGrid<T>& skip,
                       TokenMixParams<T>& p) {
    using namespace ops;
    if (up.h != skip.h || up.w != skip.w || up.dim() != skip.dim())
        throw ShapeError(sstr("token_mix: grids disagree, ", up.h, "x", up.w, "x", up.dim(), " vs ",
                              skip.h, "x", skip.w, "x", skip.dim()));
    Var<T> cat = concat(up.tokens, skip.tokens, 1);
    Var<T> mixed = linear(cat, tp.param(p.mix_w), tp.param(p.mix_b));
    return {layer_norm(mixed, tp.param(p.norm_g), tp.param(p.norm_b)), up.h, up.w};
}

template <class T>
struct RstbDownOut {
    TokenGrid<T> merged;
    TokenGrid<T> skip;  // pre-merge tokens for the decoder
};

template <class T>
RstbDownOut<T> rstb_d_forward(Tape<T>& tp, const TokenGrid<T>& g, RstbParams<T>& rstb,
                              PatchMergeParams<T>& merge) {
    TokenGrid<T> feat = rstb_b_forward(tp, g, rstb);
    return {patch_merge(tp, feat, merge), feat};
}

template <class T>
TokenGrid<T> rstb_u_forward(Tape<T>& tp, const TokenGrid<T>& g, const TokenGrid<T>& skip,
                            PatchExpandParams<T>& expand, TokenMixParams<T>& mix,
                            RstbParams<T>& rstb) {
    TokenGrid<T> uped = patch_expand(tp, g, expand);
    TokenGrid<T> mixed = token_mix(tp, uped, skip, mix);
    return rstb_b_forward(tp, mixed, rstb);
}

// full encoder-decoder on [d, h, w] features; output shape equals input shape
template <class T>
Var<T> must_forward(Tape<T>& tp, Var<T> features, MustParams<T>& m) {
    const MustConfig& cfg = m.cfg;
    const Shape& s = features.shape();
    if (s != Shape{cfg.in_channels, cfg.in_h, cfg.in_w})
        throw ShapeError(sstr("must_forward: input ", shape_str(s), " does not match configured ",
                              shape_str(Shape{cfg.in_channels, cfg.in_h, cfg.in_w})));
    TokenGrid<T> t = patch_embed(tp, features, cfg.patch_size, m.embed_w, m.embed_b);
    std::vector<TokenGrid<T>> skips;
    for (int64_t l = 0; l < cfg.levels(); ++l) {
        auto out = rstb_d_forward(tp, t, m.down[size_t(l)], m.merges[size_t(l)]);
        skips.push_back(out.skip);
        t = out.merged;
    }
    for (auto& b : m.bottleneck) t = rstb_b_forward(tp, t, b);
    for (int64_t i = 0; i < cfg.levels(); ++i) {
        const TokenGrid<T>& skip = skips[size_t(cfg.levels() - 1 - i)];
        t = rstb_u_forward(tp, t, skip, m.expands[size_t(i)], m.mixes[size_t(i)], m.up[size_t(i)]);
    }
    return patch_unembed(tp, t, cfg.patch_size, cfg.in_channels, m.unembed_w, m.unembed_b);
}

// ---------------------------------------------------------------------------
// parameter traversal (checkpoints, optimizer)

template <class T, class F>
void visit_params(StlParams<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".norm1.g", p.norm1_g);
    f(prefix + ".norm1.b", p.norm1_b);
    f(prefix + ".qkv.w", p.qkv_w);
    f(prefix + ".qkv.b", p.qkv_b);
    f(prefix + ".proj.w", p.proj_w);
    f(prefix + ".proj.b", p.proj_b);
    f(prefix + ".bias_table", p.bias_table);
    f(prefix + ".norm2.g", p.norm2_g);
    f(prefix + ".norm2.b", p.norm2_b);
    f(prefix + ".mlp.w1", p.mlp_w1);
    f(prefix + ".mlp.b1", p.mlp_b1);
    f(prefix + ".mlp.w2", p.mlp_w2);
    f(prefix + ".mlp.b2", p.mlp_b2);
}

template <class T, class F>
void visit_params(RstbParams<T>& p, const std::string& prefix, F&& f) {
    for (size_t i = 0; i < p.stls.size(); ++i) visit_params(p.stls[i], sstr(prefix, ".stl", i), f);
    f(prefix + ".unembed.w", p.unembed_w);
    f(prefix + ".unembed.b", p.unembed_b);
    f(prefix + ".conv.w", p.conv_w);
    f(prefix + ".conv.b", p.conv_b);
    f(prefix + ".reembed.w", p.reembed_w);
    f(prefix + ".reembed.b", p.reembed_b);
}

template <class T, class F>
void visit_params(PatchMergeParams<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".norm.g", p.norm_g);
    f(prefix + ".norm.b", p.norm_b);
    f(prefix + ".red.w", p.red_w);
    f(prefix + ".red.b", p.red_b);
}

template <class T, class F>
void visit_params(PatchExpandParams<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".exp.w", p.exp_w);
    f(prefix + ".exp.b", p.exp_b);
    f(prefix + ".norm.g", p.norm_g);
    f(prefix + ".norm.b", p.norm_b);
}

template <class T, class F>
void visit_params(TokenMixParams<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".mix.w", p.mix_w);
    f(prefix + ".mix.b", p.mix_b);
    f(prefix + ".norm.g", p.norm_g);
    f(prefix + ".norm.b", p.norm_b);
}

template <class T, class F>
void visit_params(MustParams<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".embed.w", p.embed_w);
    f(prefix + ".embed.b", p.embed_b);
    for (size_t l = 0; l < p.down.size(); ++l) {
        visit_params(p.down[l], sstr(prefix, ".down", l), f);
        visit_params(p.merges[l], sstr(prefix, ".merge", l), f);
    }
    for (size_t b = 0; b < p.bottleneck.size(); ++b)
        visit_params(p.bottleneck[b], sstr(prefix, ".bottleneck", b), f);
    for (size_t l = 0; l < p.up.size(); ++l) {
        visit_params(p.expands[l], sstr(prefix, ".expand", l), f);
        visit_params(p.mixes[l], sstr(prefix, ".mix", l), f);
        visit_params(p.up[l], sstr(prefix, ".up", l), f);
    }
    f(prefix + ".unembed.w", p.unembed_w);
    f(prefix + ".unembed.b", p.unembed_b);
}

}  // namespace humus
