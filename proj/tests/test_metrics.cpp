#include <humus/metrics.hpp>

#include "test_util.hpp"

using namespace humus;

namespace {

// Independent scalar SSIM reference: direct per-window statistics, written
// against the published formula rather than the library's conv-based path.
template <class T>
double ssim_reference(const Tensor<T>& x, const Tensor<T>& y, double dr) {
    const int64_t h = x.shape[0], w = x.shape[1];
    const int win = 7;
    const double c1 = (0.01 * dr) * (0.01 * dr), c2 = (0.03 * dr) * (0.03 * dr);
    double total = 0;
    int64_t count = 0;
    for (int64_t oy = 0; oy + win <= h; ++oy)
        for (int64_t ox = 0; ox + win <= w; ++ox) {
            double mx = 0, my = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    mx += x.data[size_t((oy + dy) * w + ox + dx)];
                    my += y.data[size_t((oy + dy) * w + ox + dx)];
                }
            mx /= win * win;
            my /= win * win;
            double sxx = 0, syy = 0, sxy = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    const double a = x.data[size_t((oy + dy) * w + ox + dx)] - mx;
                    const double b = y.data[size_t((oy + dy) * w + ox + dx)] - my;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            sxx /= win * win;
            syy /= win * win;
            sxy /= win * win;
            total += ((2 * mx * my + c1) * (2 * sxy + c2)) /
                     ((mx * mx + my * my + c1) * (sxx + syy + c2));
            ++count;
        }
    return total / double(count);
}

}  // namespace

TEST_CASE("ssim examples") {
    Rng rng(101);
    SUBCASE("identical images score exactly 1") {
        auto x = Tensor<double>::random_uniform(Shape{16, 16}, rng, 0.0, 1.0);
        CHECK(ssim_value(x, x, 1.0) == 1.0);
        auto xf = x.cast<float>();
        CHECK(ssim_value(xf, xf, 1.0f) == 1.0f);
    }
    SUBCASE("constant luminance shift is penalized but bounded") {
        auto x = Tensor<double>::random_uniform(Shape{16, 16}, rng, 0.2, 0.8);
        Tensor<double> y = x;
        for (auto& v : y.data) v += 0.5;
        const double s = ssim_value(x, y, 1.0);
        CHECK(s < 1.0);
        CHECK(s > -1.0);
    }
    SUBCASE("random 16x16 pair matches the independent reference") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            Rng r(mix64(seed, 5));
            auto x = Tensor<double>::random_uniform(Shape{16, 16}, r, 0.0, 1.0);
            auto y = Tensor<double>::random_uniform(Shape{16, 16}, r, 0.0, 1.0);
            CHECK(ssim_value(x, y, 1.0) == doctest::Approx(ssim_reference(x, y, 1.0)).epsilon(1e-6));
        }
    }
    SUBCASE("symmetry") {
        auto x = Tensor<double>::random_uniform(Shape{12, 12}, rng, 0.0, 1.0);
        auto y = Tensor<double>::random_uniform(Shape{12, 12}, rng, 0.0, 1.0);
        CHECK(std::fabs(ssim_value(x, y, 1.0) - ssim_value(y, x, 1.0)) < 1e-9);
    }
    SUBCASE("images below the window size are rejected") {
        Tensor<double> tiny(Shape{6, 6});
        CHECK_THROWS_WITH_AS(ssim_value(tiny, tiny, 1.0), doctest::Contains("smaller than"), ShapeError);
    }
}

TEST_CASE("ssim_loss") {
    Rng rng(202);
    SUBCASE("zero for identical images, bounded in [0,2]") {
        auto x = Tensor<double>::random_uniform(Shape{12, 12}, rng, 0.0, 1.0);
        Tape<double> tp;
        CHECK(ssim_loss(tp.leaf(x), tp.leaf(x), 1.0).scalar() == 0.0);
        auto y = Tensor<double>::random_uniform(Shape{12, 12}, rng, 0.0, 1.0);
        Tape<double> tp2;
        const double l = ssim_loss(tp2.leaf(x), tp2.leaf(y), 1.0).scalar();
        CHECK(l >= 0.0);
        CHECK(l <= 2.0);
    }
    SUBCASE("gradient matches finite differences") {
        Rng r(303);
        Param<double> xhat(Shape{10, 10});
        auto target = Tensor<double>::random_uniform(Shape{10, 10}, r, 0.0, 1.0);
        for (auto& v : xhat.value) v = r.uniform(0.0, 1.0);
        auto build = [&](Tape<double>& t) {
            return ssim_loss(ops::reshape(t.param(xhat), Shape{10, 10}), t.leaf(target), 1.0);
        };
        CHECK(finite_diff_check(build, {&xhat}) < 1e-4);
    }
}

TEST_CASE("psnr") {
    Rng rng(404);
    SUBCASE("identical images hit the documented 100 dB cap") {
        auto x = Tensor<double>::random_uniform(Shape{8, 8}, rng, 0.0, 1.0);
        CHECK(psnr(x, x, 1.0) == 100.0);
    }
    SUBCASE("uniform shift by data_range/10 is exactly 20 dB") {
        auto x = Tensor<double>::random_uniform(Shape{8, 8}, rng, 0.0, 1.0);
        const double dr = 10.0;
        Tensor<double> y = x;
        for (auto& v : y.data) v += dr / 10.0;
        CHECK(psnr(y, x, dr) == 20.0);
    }
    SUBCASE("matches the scalar formula") {
        auto x = Tensor<double>::random_uniform(Shape{8, 8}, rng, 0.0, 1.0);
        auto y = Tensor<double>::random_uniform(Shape{8, 8}, rng, 0.0, 1.0);
        double mse = 0;
        for (size_t i = 0; i < 64; ++i) {
            const double d = x.data[i] - y.data[i];
            mse += d * d;
        }
        mse /= 64;
        CHECK(psnr(x, y, 1.0) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-9));
    }
}

TEST_CASE("nmse") {
    Rng rng(505);
    auto x = Tensor<double>::random_uniform(Shape{8, 8}, rng, 0.1, 1.0);
    SUBCASE("identical -> 0, zero reconstruction -> 1") {
        CHECK(nmse(x, x) == 0.0);
        Tensor<double> zero(Shape{8, 8});
        CHECK(nmse(zero, x) == 1.0);
    }
    SUBCASE("matches the scalar formula") {
        auto y = Tensor<double>::random_uniform(Shape{8, 8}, rng, 0.1, 1.0);
        double num = 0, den = 0;
        for (size_t i = 0; i < 64; ++i) {
            num += (x.data[i] - y.data[i]) * (x.data[i] - y.data[i]);
            den += y.data[i] * y.data[i];
        }
        CHECK(nmse(x, y) == doctest::Approx(num / den).epsilon(1e-9));
    }
}

TEST_CASE("metric report json round trip") {
    MetricReport r;
    r.data_range = 0.93;
    r.add({0.9, 31.0, 0.02});
    r.add({0.8, 29.5, 0.04});
    r.finalize();
    CHECK(r.ssim == doctest::Approx(0.85));
    const std::string text = report_to_json(r);
    CHECK(text.find("\"ssim\"") != std::string::npos);
    CHECK(text.find("\"per_slice\"") != std::string::npos);
    CHECK(text.find("\"data_range\"") != std::string::npos);
    MetricReport back = report_from_json(text);
    CHECK(back.ssim == doctest::Approx(r.ssim).epsilon(1e-12));
    CHECK(back.per_slice.size() == 2);
    CHECK(back.per_slice[1].psnr == doctest::Approx(29.5));
}
