#include <humus/metrics.hpp>
#include <humus/phantom.hpp>
#include <humus/varnet.hpp>

#include "test_util.hpp"

using namespace humus;
using namespace humus::ops;

namespace {

VarnetConfig tiny_varnet(int64_t hw, int64_t cascades, int64_t adjacent) {
    VarnetConfig cfg;
    cfg.cascades = cascades;
    cfg.adjacent = adjacent;
    cfg.sme_channels = 4;
    cfg.denoiser.variant = DenoiserVariant::humus;
    cfg.denoiser.h = cfg.denoiser.w = hw;
    cfg.denoiser.d_high = 2;
    cfg.denoiser.window = 4;
    cfg.denoiser.depths = 1;
    cfg.denoiser.heads = {1, 2, 4};
    cfg.denoiser.bottleneck_heads = 4;
    return cfg;
}

// zero the final reconstruction conv of every cascade: the denoiser residual
// becomes exactly zero
template <class T>
void zero_final_layers(UnrolledWeights<T>& w) {
    for (auto& c : w.cascades) {
        auto& hb = std::get<HumusBlockWeights<T>>(c);
        std::fill(hb.fr_out_w.value.begin(), hb.fr_out_w.value.end(), T(0));
        std::fill(hb.fr_out_b.value.begin(), hb.fr_out_b.value.end(), T(0));
    }
}

template <class T>
void set_mu(UnrolledWeights<T>& w, T v) {
    for (auto& mu : w.mu) mu.value[0] = v;
}

template <class T>
CArray<T> random_complex(Shape s, Rng& rng) {
    CArray<T> out(s);
    for (auto& v : out.re.data) v = T(rng.uniform(-1.0, 1.0));
    for (auto& v : out.im.data) v = T(rng.uniform(-1.0, 1.0));
    return out;
}

template <class T>
double max_cdiff(const CArray<T>& a, const CArray<T>& b) {
    double m = 0;
    for (size_t i = 0; i < a.re.data.size(); ++i) {
        m = std::max(m, std::fabs(double(a.re[i]) - double(b.re[i])));
        m = std::max(m, std::fabs(double(a.im[i]) - double(b.im[i])));
    }
    return m;
}

}  // namespace

TEST_CASE("asr_assemble") {
    Rng rng(5);
    auto vol = random_complex<float>(Shape{5, 2, 4, 4}, rng);
    const int64_t per = 2 * 4 * 4;
    SUBCASE("a=0 returns the single slice unchanged") {
        auto w = asr_assemble(vol, AsrSpec{0, 3, 5});
        CHECK(w.shape() == Shape{1, 2, 4, 4});
        for (int64_t i = 0; i < per; ++i) CHECK(w.re[size_t(i)] == vol.re[size_t(3 * per + i)]);
    }
    SUBCASE("a=1 around an interior slice stacks its neighbors in order") {
        auto w = asr_assemble(vol, AsrSpec{1, 2, 5});
        CHECK(w.shape() == Shape{3, 2, 4, 4});
        for (int64_t s = 0; s < 3; ++s)
            for (int64_t i = 0; i < per; ++i)
                CHECK(w.re[size_t(s * per + i)] == vol.re[size_t((1 + s) * per + i)]);
    }
    SUBCASE("boundary slices replicate the edge") {
        auto w = asr_assemble(vol, AsrSpec{1, 0, 5});
        // expected source slices: (0, 0, 1) by index clamping
        const int64_t expect[3] = {0, 0, 1};
        for (int64_t s = 0; s < 3; ++s)
            for (int64_t i = 0; i < per; ++i)
                CHECK(w.im[size_t(s * per + i)] == vol.im[size_t(expect[s] * per + i)]);
        auto w2 = asr_assemble(vol, AsrSpec{1, 4, 5});
        const int64_t expect2[3] = {3, 4, 4};
        for (int64_t s = 0; s < 3; ++s)
            for (int64_t i = 0; i < per; ++i)
                CHECK(w2.im[size_t(s * per + i)] == vol.im[size_t(expect2[s] * per + i)]);
    }
    SUBCASE("center out of range is rejected") {
        CHECK_THROWS_AS(asr_assemble(vol, AsrSpec{1, 5, 5}), ShapeError);
    }
}

TEST_CASE("sme_estimate") {
    SUBCASE("single coil normalizes to unit magnitude") {
        Rng rng(7);
        auto slices = generate_phantom<double>(3, 16, 16, 1);
        auto maps = generate_coil_maps<double>(3, 1, 16, 16);
        auto k = simulate_acquisition(slices, maps, 0.0, 3);
        CArray<double> k0(Shape{1, 16, 16});
        std::copy(k.re.data.begin(), k.re.data.end(), k0.re.data.begin());
        std::copy(k.im.data.begin(), k.im.data.end(), k0.im.data.begin());
        auto mask = make_mask(16, 2.0, 0.25, 9);
        apply_mask(k0, mask);

        Rng wrng(11);
        auto sme = make_unet<double>(wrng, 2, 2, 4);
        testutil::zero_all(sme);  // identity refinement
        Tape<double> tp;
        auto est = sme_estimate(tp, complex_leaf(tp, k0), mask, sme);
        auto re = est.re.values();
        auto im = est.im.values();
        // unit magnitude wherever the coil image carries signal; exact-zero
        // background pixels have nothing to normalize
        CArray<double> acs = k0;
        Mask acs_mask;
        acs_mask.cols.assign(16, 0);
        const int64_t c0 = mask_center_start(16, mask.center_fraction);
        for (int64_t i = 0; i < mask_center_count(16, mask.center_fraction); ++i)
            acs_mask.cols[size_t(c0 + i)] = 1;
        apply_mask(acs, acs_mask);
        fft2c(acs, true);
        double peak = 0;
        for (size_t i = 0; i < re.size(); ++i)
            peak = std::max(peak, std::hypot(acs.re[i], acs.im[i]));
        int64_t checked = 0;
        for (size_t i = 0; i < re.size(); ++i) {
            if (std::hypot(acs.re[i], acs.im[i]) < 1e-3 * peak) continue;
            const double mag = std::sqrt(re[i] * re[i] + im[i] * im[i]);
            CHECK(mag == doctest::Approx(1.0).epsilon(1e-5));
            ++checked;
        }
        CHECK(checked > 100);
    }
    SUBCASE("output always satisfies the sum-of-squares normalization") {
        Rng rng(13);
        auto k = random_complex<double>(Shape{3, 16, 16}, rng);
        auto mask = make_mask(16, 2.0, 0.25, 5);
        apply_mask(k, mask);
        Rng wrng(17);
        auto sme = make_unet<double>(wrng, 2, 2, 4);
        Tape<double> tp;
        auto est = sme_estimate(tp, complex_leaf(tp, k), mask, sme);
        auto re = est.re.values();
        auto im = est.im.values();
        for (int64_t p = 0; p < 16 * 16; ++p) {
            double norm = 0;
            for (int64_t c = 0; c < 3; ++c) {
                const size_t q = size_t(c * 256 + p);
                norm += re[q] * re[q] + im[q] * im[q];
            }
            CHECK(std::fabs(norm - 1.0) < 1e-5);
        }
    }
    SUBCASE("identity refinement on noiseless smooth data recovers the true maps") {
        double total = 0;
        int64_t count = 0;
        for (uint64_t seed = 1; seed <= 5; ++seed) {
            const int64_t n = 3, hw = 32;
            auto slices = generate_phantom<double>(mix64(seed, 2), hw, hw, 1);
            auto maps = generate_coil_maps<double>(mix64(seed, 3), n, hw, hw);
            auto k = simulate_acquisition(slices, maps, 0.0, seed);
            CArray<double> k0(Shape{n, hw, hw});
            std::copy(k.re.data.begin(), k.re.data.end(), k0.re.data.begin());
            std::copy(k.im.data.begin(), k.im.data.end(), k0.im.data.begin());
            auto mask = make_mask(hw, 4.0, 0.25, seed);
            apply_mask(k0, mask);

            Rng wrng(seed);
            auto sme = make_unet<double>(wrng, 2, 2, 4);
            testutil::zero_all(sme);
            Tape<double> tp;
            auto est = sme_estimate(tp, complex_leaf(tp, k0), mask, sme);
            auto ere = est.re.values();
            auto eim = est.im.values();

            // weight by the target magnitude: background pixels carry no
            // signal for map estimation
            auto mag = slice_magnitude(slices, 0);
            double wsum = 0, corr = 0;
            for (int64_t p = 0; p < hw * hw; ++p) {
                double zr = 0, zi = 0;
                for (int64_t c = 0; c < n; ++c) {
                    const size_t q = size_t(c * hw * hw + p);
                    // <S_hat, S> with conjugation on the true maps
                    zr += ere[q] * maps.maps.re[q] + eim[q] * maps.maps.im[q];
                    zi += eim[q] * maps.maps.re[q] - ere[q] * maps.maps.im[q];
                }
                const double wgt = mag.data[size_t(p)];
                corr += wgt * std::sqrt(zr * zr + zi * zi);
                wsum += wgt;
            }
            total += corr / wsum;
            ++count;
        }
        CHECK(total / double(count) >= 0.95);
    }
    SUBCASE("empty ACS is rejected") {
        Rng rng(23);
        auto k = random_complex<double>(Shape{2, 16, 16}, rng);
        Mask m = full_mask(16);
        m.center_fraction = 0.01;  // rounds to zero center columns
        Rng wrng(29);
        auto sme = make_unet<double>(wrng, 2, 2, 4);
        Tape<double> tp;
        CHECK_THROWS_WITH_AS(sme_estimate(tp, complex_leaf(tp, k), m, sme),
                             doctest::Contains("ACS"), ConfigError);
    }
}

TEST_CASE("cascade_step") {
    Rng rng(31);
    SUBCASE("mu=0 with a zero-residual denoiser leaves k-space bit-identical") {
        auto cfg = tiny_varnet(16, 1, 0);
        Rng wrng(37);
        auto w = make_varnet<double>(wrng, cfg);
        zero_final_layers(w);
        set_mu(w, 0.0);
        auto k = random_complex<double>(Shape{1, 2, 16, 16}, rng);
        auto mask = make_mask(16, 2.0, 0.25, 3);
        auto maps_arr = generate_coil_maps<double>(5, 2, 16, 16);
        Tape<double> tp;
        auto kv = complex_leaf(tp, k);
        auto maps = complex_constant(tp, maps_arr.maps);
        auto out = cascade_step(tp, kv, kv, mask, maps, w.mu[0], w.cascades[0]);
        CHECK(max_cdiff(out.carray(), k) == 0.0);
    }
    SUBCASE("full mask at the measured k-space is a fixed point") {
        auto cfg = tiny_varnet(16, 1, 0);
        Rng wrng(41);
        auto w = make_varnet<double>(wrng, cfg);
        zero_final_layers(w);
        set_mu(w, 1.0);  // DC term vanishes because k_hat == k_tilde
        auto k = random_complex<double>(Shape{1, 2, 16, 16}, rng);
        auto maps_arr = generate_coil_maps<double>(6, 2, 16, 16);
        Tape<double> tp;
        auto kv = complex_leaf(tp, k);
        auto maps = complex_constant(tp, maps_arr.maps);
        auto out = cascade_step(tp, kv, kv, full_mask(16), maps, w.mu[0], w.cascades[0]);
        CHECK(max_cdiff(out.carray(), k) == 0.0);
    }
    SUBCASE("random tiny instance matches the update composed from module oracles") {
        auto cfg = tiny_varnet(8, 1, 0);
        cfg.denoiser.window = 2;
        cfg.denoiser.heads = {1, 2};  // 4x4 low-res grid admits two halvings
        cfg.denoiser.bottleneck_heads = 2;
        Rng wrng(43);
        auto w = make_varnet<double>(wrng, cfg);
        testutil::randomize_all(std::get<HumusBlockWeights<double>>(w.cascades[0]), wrng, 0.2);
        const double mu = 0.7;
        set_mu(w, mu);
        auto k_hat = random_complex<double>(Shape{1, 1, 8, 8}, rng);
        auto k_tilde = random_complex<double>(Shape{1, 1, 8, 8}, rng);
        auto mask = make_mask(8, 2.0, 0.25, 7);
        auto maps_arr = generate_coil_maps<double>(7, 1, 8, 8);

        Tape<double> tp;
        auto out = cascade_step(tp, complex_leaf(tp, k_hat), complex_leaf(tp, k_tilde), mask,
                                complex_constant(tp, maps_arr.maps), w.mu[0], w.cascades[0]);

        // oracle: evaluate the denoiser residual separately, then compose
        // k - mu*M(k - k_tilde) + F(E(residual)) from the raw helpers
        CArray<double> img_coils(Shape{1, 8, 8});
        std::copy(k_hat.re.data.begin(), k_hat.re.data.end(), img_coils.re.data.begin());
        std::copy(k_hat.im.data.begin(), k_hat.im.data.end(), img_coils.im.data.begin());
        fft2c(img_coils, true);
        auto reduced = reduce_raw(img_coils, maps_arr);
        Tensor<double> x_in(Shape{2, 8, 8});
        std::copy(reduced.re.data.begin(), reduced.re.data.end(), x_in.data.begin());
        std::copy(reduced.im.data.begin(), reduced.im.data.end(), x_in.data.begin() + 64);
        Tape<double> dt;
        auto res = denoiser_residual(dt, dt.leaf(x_in), w.cascades[0]);
        CArray<double> corr(Shape{8, 8});
        for (int64_t i = 0; i < 64; ++i) {
            corr.re.data[size_t(i)] = res.values()[size_t(i)];
            corr.im.data[size_t(i)] = res.values()[size_t(64 + i)];
        }
        auto g = expand_raw(corr, maps_arr);
        fft2c(g);
        CArray<double> expect(Shape{1, 8, 8});
        for (int64_t i = 0; i < 64; ++i) {
            const int64_t col = i % 8;
            const double m = maps_arr.maps.re.data.empty() ? 1.0 : 1.0;  // placeholder no-op
            (void)m;
            const double dc_r = mask.cols[size_t(col)] ? mu * (k_hat.re[size_t(i)] - k_tilde.re[size_t(i)]) : 0.0;
            const double dc_i = mask.cols[size_t(col)] ? mu * (k_hat.im[size_t(i)] - k_tilde.im[size_t(i)]) : 0.0;
            expect.re.data[size_t(i)] = k_hat.re[size_t(i)] - dc_r + g.re[size_t(i)];
            expect.im.data[size_t(i)] = k_hat.im[size_t(i)] - dc_i + g.im[size_t(i)];
        }
        CHECK(max_cdiff(out.carray(), expect) < 1e-5);
    }
}

TEST_CASE("denoiser variants share the residual contract") {
    Rng rng(97);
    for (auto variant : {DenoiserVariant::humus, DenoiserVariant::un_ss, DenoiserVariant::un_ms,
                         DenoiserVariant::un_ms_patch2, DenoiserVariant::unet}) {
        DenoiserConfig cfg;
        cfg.variant = variant;
        cfg.in_channels = 2;
        cfg.h = cfg.w = 32;
        cfg.d_high = 2;
        cfg.embed_dim = variant == DenoiserVariant::un_ms_patch2 ? 12 : 8;
        cfg.patch_size = 1;
        cfg.window = 4;
        cfg.depths = 1;
        cfg.heads = {1, 2, 4};
        cfg.bottleneck_heads = 4;
        cfg.single_scale_blocks = 2;
        cfg.single_scale_heads = 2;
        cfg.unet_channels = 4;
        Rng wrng(mix64(uint64_t(variant), 5));
        auto weights = make_denoiser<double>(wrng, cfg);
        Tape<double> tp;
        auto x = Tensor<double>::random_uniform(Shape{2, 32, 32}, rng);
        auto r = denoiser_residual(tp, tp.leaf(x), weights);
        CHECK(r.shape() == Shape{2, 32, 32});
        auto y = denoiser_forward(tp, tp.leaf(x), weights);
        CHECK(y.shape() == Shape{2, 32, 32});

        // zeroing every weight zeroes the correction for every variant
        testutil::zero_all(weights);
        Tape<double> tp2;
        auto rz = denoiser_residual(tp2, tp2.leaf(x), weights);
        CHECK(testutil::max_abs<double>(rz.values()) == 0.0);
    }
}

TEST_CASE("varnet_forward") {
    SUBCASE("T=1, mu=0, zero-residual denoiser reproduces the zero-filled magnitude") {
        auto cfg = tiny_varnet(16, 1, 0);
        Rng wrng(47);
        auto w = make_varnet<double>(wrng, cfg);
        zero_final_layers(w);
        set_mu(w, 0.0);
        Rng rng(49);
        auto k = random_complex<double>(Shape{1, 2, 16, 16}, rng);
        auto mask = make_mask(16, 2.0, 0.25, 11);
        apply_mask(k, mask);

        Tape<double> tp;
        auto out = varnet_forward(tp, complex_leaf(tp, k), mask, w);
        auto zf = zero_filled_from_window(k, 0, mask);
        CHECK(out.magnitude.shape() == Shape{16, 16});
        for (double v : out.magnitude.values()) CHECK(v >= 0.0);
        CHECK(testutil::max_abs_err<double>(out.magnitude.values(),
                                            {zf.data.data(), zf.data.size()}) < 2e-6);
    }
    SUBCASE("DC fixed point: fully sampled data stays at the measurements for any T") {
        for (int64_t t : {1, 2, 4}) {
            auto cfg = tiny_varnet(16, t, 0);
            Rng wrng(mix64(uint64_t(t), 53));
            auto w = make_varnet<double>(wrng, cfg);
            zero_final_layers(w);
            set_mu(w, 1.0);
            Rng rng(59);
            auto k = random_complex<double>(Shape{1, 2, 16, 16}, rng);
            auto mask = full_mask(16);

            Tape<double> tp;
            auto kv = complex_leaf(tp, k);
            ComplexVar<double> center{ops::reshape(kv.re, Shape{2, 16, 16}),
                                      ops::reshape(kv.im, Shape{2, 16, 16})};
            auto maps = sme_estimate(tp, center, mask, w.sme);
            auto k_hat = kv;
            for (int64_t i = 0; i < t; ++i)
                k_hat = cascade_step(tp, k_hat, kv, mask, maps, w.mu[size_t(i)], w.cascades[size_t(i)]);
            CHECK(max_cdiff(k_hat.carray(), k) == 0.0);
        }
    }
    SUBCASE("DC contraction on sampled entries") {
        auto cfg = tiny_varnet(16, 4, 0);
        Rng wrng(61);
        auto w = make_varnet<double>(wrng, cfg);
        zero_final_layers(w);
        Rng rng(67);
        auto k_tilde = random_complex<double>(Shape{1, 2, 16, 16}, rng);
        auto mask = make_mask(16, 2.0, 0.25, 13);
        apply_mask(k_tilde, mask);
        auto k0 = random_complex<double>(Shape{1, 2, 16, 16}, rng);

        auto sampled_err = [&](const CArray<double>& k) {
            double s = 0;
            for (int64_t i = 0; i < k.size(); ++i) {
                if (!mask.cols[size_t(i % 16)]) continue;
                const double dr = k.re[size_t(i)] - k_tilde.re[size_t(i)];
                const double di = k.im[size_t(i)] - k_tilde.im[size_t(i)];
                s += dr * dr + di * di;
            }
            return std::sqrt(s);
        };

        // mu = 1: one step zeroes the sampled-entry error
        {
            set_mu(w, 1.0);
            Tape<double> tp;
            auto kv = complex_leaf(tp, k0);
            auto kt = complex_leaf(tp, k_tilde);
            ComplexVar<double> center{ops::reshape(kt.re, Shape{2, 16, 16}),
                                      ops::reshape(kt.im, Shape{2, 16, 16})};
            auto maps = sme_estimate(tp, center, mask, w.sme);
            auto k1 = cascade_step(tp, kv, kt, mask, maps, w.mu[0], w.cascades[0]);
            CHECK(sampled_err(k1.carray()) == 0.0);
        }
        // 0 < mu < 2: the error contracts by |1 - mu| per step
        for (double mu : {0.5, 1.5, 0.25}) {
            set_mu(w, mu);
            Tape<double> tp;
            auto kt = complex_leaf(tp, k_tilde);
            ComplexVar<double> center{ops::reshape(kt.re, Shape{2, 16, 16}),
                                      ops::reshape(kt.im, Shape{2, 16, 16})};
            auto maps = sme_estimate(tp, center, mask, w.sme);
            auto k_hat = complex_leaf(tp, k0);
            double prev = sampled_err(k0);
            for (int64_t t = 0; t < 3; ++t) {
                k_hat = cascade_step(tp, k_hat, kt, mask, maps, w.mu[size_t(t)], w.cascades[size_t(t)]);
                const double cur = sampled_err(k_hat.carray());
                CHECK(cur == doctest::Approx(std::fabs(1.0 - mu) * prev).epsilon(1e-6));
                prev = cur;
            }
        }
    }
    SUBCASE("finite differences through ssim_loss of the full forward at 16x16") {
        auto cfg = tiny_varnet(16, 1, 0);
        Rng wrng(71);
        auto w = make_varnet<double>(wrng, cfg);
        auto& hb = std::get<HumusBlockWeights<double>>(w.cascades[0]);
        testutil::randomize_all(hb, wrng, 0.25);
        testutil::randomize_all(w.sme, wrng, 0.25);

        auto slices = generate_phantom<double>(77, 16, 16, 1);
        // intensity floor keeps every magnitude away from the sqrt kink at
        // zero, where central differences cannot resolve the curvature
        for (size_t i = 0; i < slices.re.data.size(); ++i) {
            const double re = slices.re[i], im = slices.im[i];
            const double mag = std::hypot(re, im);
            const double lifted = 0.35 + 0.6 * mag;
            slices.re.data[i] = mag > 1e-9 ? lifted * re / mag : lifted;
            slices.im.data[i] = mag > 1e-9 ? lifted * im / mag : 0.0;
        }
        auto maps = generate_coil_maps<double>(77, 2, 16, 16);
        auto kfull = simulate_acquisition(slices, maps, 0.002, 77);
        auto mask = make_mask(16, 2.0, 0.25, 17);
        CArray<double> kw(Shape{1, 2, 16, 16});
        std::copy(kfull.re.data.begin(), kfull.re.data.end(), kw.re.data.begin());
        std::copy(kfull.im.data.begin(), kfull.im.data.end(), kw.im.data.begin());
        apply_mask(kw, mask);
        auto target = slice_magnitude(slices, 0);

        Param<double> kre(Shape{1, 2, 16, 16}, kw.re.data);
        Param<double> kim(Shape{1, 2, 16, 16}, kw.im.data);
        auto build = [&](Tape<double>& t) {
            ComplexVar<double> kv{t.param(kre), t.param(kim)};
            auto out = varnet_forward(t, kv, mask, w);
            return ssim_loss(out.magnitude, t.leaf(target), 1.0);
        };
        FdOptions opt;
        opt.max_per_target = 32;
        opt.h = 1e-5;
        opt.min_grad = 3e-6;  // loss is O(1); below this the secant is noise
        // mu[0] is excluded: with k_hat initialized at the measurements the
        // first DC term vanishes, so its gradient is structurally zero at T=1
        CHECK(finite_diff_check(build,
                                {&kre, &kim, &hb.fh_w, &hb.must.down[0].stls[0].qkv_w, &hb.fr_out_w,
                                 &w.sme.enc1.w1},
                                opt) < 1e-4);
    }
    SUBCASE("loss reads only the center slice: other targets never enter the graph") {
        auto cfg = tiny_varnet(16, 1, 1);  // a=1: three stacked slices
        Rng wrng(79);
        auto w = make_varnet<double>(wrng, cfg);
        Rng rng(83);
        auto vol = random_complex<double>(Shape{4, 2, 16, 16}, rng);
        auto mask = make_mask(16, 2.0, 0.25, 19);
        auto window = asr_assemble(vol, AsrSpec{1, 2, 4});
        apply_mask(window, mask);

        auto run_loss = [&](const Tensor<double>& center_target) {
            Tape<double> tp;
            auto out = varnet_forward(tp, complex_leaf(tp, window), mask, w);
            return ssim_loss(out.magnitude, tp.leaf(center_target), 1.0).scalar();
        };
        Rng trng(89);
        auto target = Tensor<double>::random_uniform(Shape{16, 16}, trng, 0.0, 1.0);
        const double l1 = run_loss(target);
        // the API admits no non-center target: supervision is structurally
        // limited to the center slice, so this is a compile-time property;
        // rerunning with the same center target reproduces the loss bitwise
        const double l2 = run_loss(target);
        CHECK(l1 == l2);
    }
}
