#pragma once

#include "humus/denoiser.hpp"
#include "humus/mri.hpp"

namespace humus {

// Unrolled reconstruction: T cascades of
//   k^{t+1} = k^t - mu_t * M (k^t - k_tilde) + F(E(r(R(F^-1(k^t)))))
// where r is the denoiser's residual correction in image space. Sensitivity
// maps are estimated once per example from the ACS region of the center
// slice. Multi-slice inputs stack 2a+1 adjacent slices along the coil axis;
// the denoiser sees 2(2a+1) real channels and the loss reads only the center
// slice.

struct AsrSpec {
    int64_t adjacent = 0;    // a: slices added on each side
    int64_t center = 0;      // c: slice being reconstructed
    int64_t num_slices = 1;  // K
};

struct VarnetConfig {
    int64_t cascades = 2;  // T
    int64_t adjacent = 0;  // a
    int64_t sme_channels = 8;
    DenoiserConfig denoiser;  // in_channels is derived from `adjacent`

    int64_t stacked_slices() const { return 2 * adjacent + 1; }
    int64_t in_channels() const { return 2 * stacked_slices(); }
};

template <class T>
struct UnrolledWeights {
    VarnetConfig cfg;
    std::vector<Param<T>> mu;  // one learnable step size per cascade
    std::vector<DenoiserWeights<T>> cascades;
    UnetWeights<T> sme;
};

template <class T>
UnrolledWeights<T> make_varnet(Rng& rng, VarnetConfig cfg) {
    if (cfg.cascades < 1) throw ConfigError("varnet: need at least one cascade");
    if (cfg.adjacent < 0) throw ConfigError("varnet: adjacent slice count must be >= 0");
    cfg.denoiser.in_channels = cfg.in_channels();
    UnrolledWeights<T> w;
    w.cfg = cfg;
    for (int64_t t = 0; t < cfg.cascades; ++t) {
        w.mu.emplace_back(Shape{1});
        w.mu.back().value[0] = T(1);  // mu init
        w.cascades.push_back(make_denoiser<T>(rng, cfg.denoiser));
    }
    w.sme = make_unet<T>(rng, 2, 2, cfg.sme_channels);
    return w;
}

template <class T, class F>
void visit_params(UnrolledWeights<T>& w, const std::string& prefix, F&& f) {
    for (size_t t = 0; t < w.cascades.size(); ++t) {
        f(sstr(prefix, ".mu", t), w.mu[t]);
        visit_params(w.cascades[t], sstr(prefix, ".cascade", t), f);
    }
    visit_params(w.sme, prefix + ".sme", f);
}

// ---------------------------------------------------------------------------
// adjacent slice assembly

// window of 2a+1 slices around `center`, out-of-range indices clamped to the
// boundary slice: [K,N,H,W] -> [2a+1,N,H,W]
template <class T>
CArray<T> asr_assemble(const CArray<T>& volume_kspace, const AsrSpec& spec) {
    const Shape& s = volume_kspace.shape();
    if (s.size() != 4) throw ShapeError(sstr("asr_assemble: expects [K,N,H,W], got ", shape_str(s)));
    const int64_t k_total = s[0], per_slice = s[1] * s[2] * s[3];
    if (spec.center < 0 || spec.center >= k_total)
        throw ShapeError(sstr("asr_assemble: center slice ", spec.center, " out of [0,", k_total, ")"));
    const int64_t span = 2 * spec.adjacent + 1;
    CArray<T> out(Shape{span, s[1], s[2], s[3]});
    for (int64_t i = 0; i < span; ++i) {
        int64_t src = spec.center - spec.adjacent + i;
        src = std::max(int64_t(0), std::min(k_total - 1, src));
        std::copy(volume_kspace.re.data.begin() + src * per_slice,
                  volume_kspace.re.data.begin() + (src + 1) * per_slice,
                  out.re.data.begin() + i * per_slice);
        std::copy(volume_kspace.im.data.begin() + src * per_slice,
                  volume_kspace.im.data.begin() + (src + 1) * per_slice,
                  out.im.data.begin() + i * per_slice);
    }
    return out;
}

// ---------------------------------------------------------------------------
// sensitivity map estimation

namespace varnet_detail {

// keep only the fully sampled low-frequency columns
template <class T>
ComplexVar<T> acs_only(ComplexVar<T> k, const Mask& mask) {
    const int64_t w = k.shape().back();
    const int64_t nc = mask_center_count(w, mask.center_fraction);
    if (nc < 1)
        throw ConfigError(sstr("sme: mask has an empty ACS block (center_fraction ",
                               mask.center_fraction, " of width ", w, ")"));
    const int64_t c0 = mask_center_start(w, mask.center_fraction);
    Mask acs;
    acs.cols.assign(size_t(w), 0);
    for (int64_t i = c0; i < c0 + nc; ++i) acs.cols[size_t(i)] = 1;
    acs.acceleration = mask.acceleration;
    acs.center_fraction = mask.center_fraction;
    return apply_mask(k, acs);
}

// [N,H,W] complex -> [N,2,H,W] channels
template <class T>
Var<T> to_coil_channels(ComplexVar<T> x) {
    const Shape& s = x.shape();
    Shape lifted{s[0], 1, s[1], s[2]};
    return ops::concat(ops::reshape(x.re, lifted), ops::reshape(x.im, lifted), 1);
}

// indices selecting channel `c` of [N,2,H,W] back to [N,H,W]
inline std::vector<int32_t> coil_channel_indices(int64_t n, int64_t h, int64_t w, int64_t c) {
    std::vector<int32_t> idx(size_t(n * h * w));
    int64_t o = 0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t p = 0; p < h * w; ++p) idx[size_t(o++)] = int32_t((i * 2 + c) * h * w + p);
    return idx;
}

}  // namespace varnet_detail

// ACS crop, per-coil inverse FFT, RSS normalization, residual U-Net
// refinement of each coil image (coils batched, real/imag as channels),
// pixelwise re-normalization to sum_i |S_i|^2 = 1.
template <class T>
ComplexVar<T> sme_estimate(Tape<T>& tp, ComplexVar<T> k_center, const Mask& mask,
                           UnetWeights<T>& sme) {
    using namespace ops;
    const Shape& s = k_center.shape();
    if (s.size() != 3) throw ShapeError(sstr("sme: expects [N,H,W] k-space, got ", shape_str(s)));
    const int64_t n = s[0], h = s[1], w = s[2];
    constexpr T eps = T(1e-12);

    ComplexVar<T> imgs = cifft2c(varnet_detail::acs_only(k_center, mask));
    Var<T> norm0 = repeat_axis0(rss(imgs, eps), n);
    ComplexVar<T> maps0{div(imgs.re, norm0), div(imgs.im, norm0)};

    Var<T> chans = varnet_detail::to_coil_channels(maps0);
    Var<T> refined = add(chans, unet_forward(tp, chans, sme));
    ComplexVar<T> maps{gather(refined, varnet_detail::coil_channel_indices(n, h, w, 0), Shape{n, h, w}),
                       gather(refined, varnet_detail::coil_channel_indices(n, h, w, 1), Shape{n, h, w})};

    Var<T> norm1 = repeat_axis0(rss(maps, eps), n);
    return {div(maps.re, norm1), div(maps.im, norm1)};
}

// ---------------------------------------------------------------------------
// cascades

namespace varnet_detail {

// complex slice s of a [S,N,H,W] stack, as [N,H,W]
template <class T>
ComplexVar<T> stack_slice(ComplexVar<T> k, int64_t s) {
    Shape rest(k.shape().begin() + 1, k.shape().end());
    return {ops::reshape(ops::slice_axis0(k.re, s, 1), rest),
            ops::reshape(ops::slice_axis0(k.im, s, 1), rest)};
}

}  // namespace varnet_detail

// one unrolled iteration on the stacked k-space estimate [S,N,H,W]
template <class T>
ComplexVar<T> cascade_step(Tape<T>& tp, ComplexVar<T> k_hat, ComplexVar<T> k_tilde,
                           const Mask& mask, ComplexVar<T> maps, Param<T>& mu,
                           DenoiserWeights<T>& denoiser) {
    using namespace ops;
    const Shape& s = k_hat.shape();
    const int64_t span = s[0], h = s[2], w = s[3];

    // data consistency: mu * M (k_hat - k_tilde)
    ComplexVar<T> diff = apply_mask(csub(k_hat, k_tilde), mask);
    Var<T> mu_v = tp.param(mu);
    ComplexVar<T> dc{mul_broadcast_scalar(diff.re, mu_v), mul_broadcast_scalar(diff.im, mu_v)};

    // image-space correction: stack reduced slices into channels
    ComplexVar<T> imgs = cifft2c(k_hat);
    Var<T> x_in;
    for (int64_t sl = 0; sl < span; ++sl) {
        ComplexVar<T> xi = coil_reduce(varnet_detail::stack_slice(imgs, sl), maps);
        Var<T> pair = concat(reshape(xi.re, Shape{1, h, w}), reshape(xi.im, Shape{1, h, w}), 0);
        x_in = sl == 0 ? pair : concat(x_in, pair, 0);
    }
    Var<T> correction = denoiser_residual(tp, x_in, denoiser);

    // expand each slice correction back to coils and to k-space
    ComplexVar<T> g;
    for (int64_t sl = 0; sl < span; ++sl) {
        ComplexVar<T> e{reshape(slice_axis0(correction, 2 * sl, 1), Shape{h, w}),
                        reshape(slice_axis0(correction, 2 * sl + 1, 1), Shape{h, w})};
        ComplexVar<T> gk = cfft2c(coil_expand(e, maps));  // [N,H,W]
        Shape lifted{1, gk.shape()[0], h, w};
        Var<T> gre = reshape(gk.re, lifted), gim = reshape(gk.im, lifted);
        if (sl == 0) {
            g = {gre, gim};
        } else {
            g = {concat(g.re, gre, 0), concat(g.im, gim, 0)};
        }
    }
    return cadd(csub(k_hat, dc), g);
}

template <class T>
struct ReconOutput {
    Var<T> magnitude;                        // [H,W], center slice
    ComplexVar<T> maps;                      // estimated sensitivities
    std::vector<Tensor<T>> intermediates;    // per-cascade center magnitudes
};

// full forward pass on an assembled (and already undersampled) window
// k_tilde: [2a+1, N, H, W]
template <class T>
ReconOutput<T> varnet_forward(Tape<T>& tp, ComplexVar<T> k_tilde, const Mask& mask,
                              UnrolledWeights<T>& w, bool capture_intermediates = false) {
    const Shape& s = k_tilde.shape();
    if (s.size() != 4 || s[0] != w.cfg.stacked_slices())
        throw ShapeError(sstr("varnet: expected [", w.cfg.stacked_slices(), ",N,H,W] k-space, got ",
                              shape_str(s)));
    constexpr T eps = T(1e-12);
    ReconOutput<T> out;
    ComplexVar<T> center_in = varnet_detail::stack_slice(k_tilde, w.cfg.adjacent);
    out.maps = sme_estimate(tp, center_in, mask, w.sme);

    ComplexVar<T> k_hat = k_tilde;
    for (int64_t t = 0; t < w.cfg.cascades; ++t) {
        k_hat = cascade_step(tp, k_hat, k_tilde, mask, out.maps, w.mu[size_t(t)],
                             w.cascades[size_t(t)]);
        if (capture_intermediates) {
            ComplexVar<T> c = varnet_detail::stack_slice(k_hat, w.cfg.adjacent);
            Tape<T> scratch;
            auto coils = complex_leaf(scratch, c.carray());
            out.intermediates.push_back(rss(cifft2c(coils), eps).tensor());
        }
    }
    ComplexVar<T> center = varnet_detail::stack_slice(k_hat, w.cfg.adjacent);
    out.magnitude = rss(cifft2c(center), eps);
    return out;
}

// baseline for comparison and initialization checks
template <class T>
Tensor<T> zero_filled_from_window(const CArray<T>& k_window, int64_t adjacent, const Mask& mask) {
    const Shape& s = k_window.shape();
    CArray<T> center(Shape{s[1], s[2], s[3]});
    const int64_t per = s[1] * s[2] * s[3];
    std::copy(k_window.re.data.begin() + adjacent * per, k_window.re.data.begin() + (adjacent + 1) * per,
              center.re.data.begin());
    std::copy(k_window.im.data.begin() + adjacent * per, k_window.im.data.begin() + (adjacent + 1) * per,
              center.im.data.begin());
    return zero_filled_magnitude(center, mask);
}

}  // namespace humus
