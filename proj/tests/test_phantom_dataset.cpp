#include <humus/dataset.hpp>
#include <humus/metrics.hpp>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace humus;
namespace fs = std::filesystem;

namespace {

double pearson(const Tensor<float>& a, const Tensor<float>& b) {
    const size_t n = a.data.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a.data[i];
        mb += b.data[i];
    }
    ma /= double(n);
    mb /= double(n);
    double cab = 0, caa = 0, cbb = 0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a.data[i] - ma, db = b.data[i] - mb;
        cab += da * db;
        caa += da * da;
        cbb += db * db;
    }
    return cab / std::sqrt(caa * cbb);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("humus_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("phantom generation") {
    SUBCASE("deterministic per seed") {
        auto a = generate_phantom<float>(42, 32, 32, 4);
        auto b = generate_phantom<float>(42, 32, 32, 4);
        CHECK(a.re.data == b.re.data);
        CHECK(a.im.data == b.im.data);
        auto c = generate_phantom<float>(43, 32, 32, 4);
        CHECK(a.re.data != c.re.data);
    }
    SUBCASE("magnitudes stay in [0,1]") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            auto p = generate_phantom<float>(seed, 32, 32, 3);
            for (size_t i = 0; i < p.re.data.size(); ++i) {
                const double mag = std::sqrt(double(p.re[i]) * p.re[i] + double(p.im[i]) * p.im[i]);
                CHECK(mag <= 1.0 + 1e-6);
            }
        }
    }
    SUBCASE("adjacent slices correlate more than slices three apart") {
        double adj = 0, far = 0;
        for (uint64_t seed = 0; seed < 20; ++seed) {
            auto p = generate_phantom<float>(mix64(seed, 7), 32, 32, 5);
            adj += pearson(slice_magnitude(p, 0), slice_magnitude(p, 1));
            far += pearson(slice_magnitude(p, 0), slice_magnitude(p, 3));
        }
        CHECK(adj / 20.0 > far / 20.0);
    }
    SUBCASE("non-power-of-two extents are rejected") {
        CHECK_THROWS_AS(generate_phantom<float>(1, 48, 64, 2), ConfigError);
    }
}

TEST_CASE("coil map generation") {
    SUBCASE("pixelwise normalization") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            auto s = generate_coil_maps<float>(seed, 4, 32, 32);
            for (int64_t p = 0; p < 32 * 32; ++p) {
                double norm = 0;
                for (int64_t c = 0; c < 4; ++c) {
                    const size_t q = size_t(c * 32 * 32 + p);
                    norm += double(s.maps.re[q]) * s.maps.re[q] + double(s.maps.im[q]) * s.maps.im[q];
                }
                CHECK(std::fabs(norm - 1.0) < 1e-5);
            }
        }
    }
    SUBCASE("single coil has unit magnitude everywhere") {
        auto s = generate_coil_maps<float>(3, 1, 16, 16);
        for (int64_t p = 0; p < 256; ++p) {
            const double mag =
                std::sqrt(double(s.maps.re[size_t(p)]) * s.maps.re[size_t(p)] +
                          double(s.maps.im[size_t(p)]) * s.maps.im[size_t(p)]);
            CHECK(mag == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
    SUBCASE("maps are smooth: bounded finite-difference gradient") {
        for (uint64_t seed = 0; seed < 10; ++seed) {
            auto s = generate_coil_maps<float>(seed, 4, 32, 32);
            double worst = 0;
            for (int64_t c = 0; c < 4; ++c)
                for (int64_t y = 0; y < 32; ++y)
                    for (int64_t x = 0; x + 1 < 32; ++x) {
                        const size_t q = size_t((c * 32 + y) * 32 + x);
                        const double dre = s.maps.re[q + 1] - s.maps.re[q];
                        const double dim = s.maps.im[q + 1] - s.maps.im[q];
                        worst = std::max(worst, std::sqrt(dre * dre + dim * dim));
                    }
            CHECK(worst < 0.35);  // magnitude-1 fields, ~32px across: smooth fields stay well below
        }
    }
}

TEST_CASE("acquisition simulation") {
    SUBCASE("noiseless single unit coil inverts back to the phantom") {
        auto slices = generate_phantom<float>(9, 32, 32, 2);
        SensitivityMaps<float> unit{CArray<float>(Shape{1, 32, 32})};
        for (auto& v : unit.maps.re.data) v = 1.0f;
        auto k = simulate_acquisition(slices, unit, 0.0, 9);
        for (int64_t sl = 0; sl < 2; ++sl) {
            CArray<float> one(Shape{1, 32, 32});
            std::copy(k.re.data.begin() + sl * 1024, k.re.data.begin() + (sl + 1) * 1024,
                      one.re.data.begin());
            std::copy(k.im.data.begin() + sl * 1024, k.im.data.begin() + (sl + 1) * 1024,
                      one.im.data.begin());
            fft2c(one, true);
            for (size_t i = 0; i < 1024; ++i) {
                CHECK(std::fabs(one.re[i] - slices.re[size_t(sl * 1024) + i]) < 1e-5);
                CHECK(std::fabs(one.im[i] - slices.im[size_t(sl * 1024) + i]) < 1e-5);
            }
        }
    }
    SUBCASE("masked columns are exactly zero after undersampling") {
        DatasetSpec spec;
        spec.volumes = 1;
        spec.slices = 2;
        spec.coils = 3;
        spec.height = spec.width = 32;
        auto vol = make_volume(spec, 0);
        auto k = vol.slice_kspace(0);
        apply_mask(k, vol.mask);
        for (int64_t x = 0; x < 32; ++x) {
            if (vol.mask.cols[size_t(x)]) continue;
            for (int64_t r = 0; r < 3 * 32; ++r) {
                CHECK(k.re[size_t(r * 32 + x)] == 0.0f);
                CHECK(k.im[size_t(r * 32 + x)] == 0.0f);
            }
        }
    }
    SUBCASE("empirical noise level matches sigma * k-space RMS within 5 percent") {
        auto slices = generate_phantom<float>(70, 64, 64, 1);
        auto maps = generate_coil_maps<float>(70, 4, 64, 64);
        auto clean = simulate_acquisition(slices, maps, 0.0, 70);
        const double sigma = 0.01;
        auto noisy = simulate_acquisition(slices, maps, sigma, 70);
        double rms = 0;
        for (size_t i = 0; i < clean.re.data.size(); ++i)
            rms += double(clean.re[i]) * clean.re[i] + double(clean.im[i]) * clean.im[i];
        rms = std::sqrt(rms / double(clean.re.data.size()));
        double noise_pow = 0;
        for (size_t i = 0; i < clean.re.data.size(); ++i) {
            const double dr = noisy.re[i] - clean.re[i], di = noisy.im[i] - clean.im[i];
            noise_pow += dr * dr + di * di;
        }
        const double sd = std::sqrt(noise_pow / double(clean.re.data.size()));
        CHECK(sd == doctest::Approx(sigma * rms).epsilon(0.05));
    }
}

TEST_CASE("dataset io") {
    DatasetSpec spec;
    spec.volumes = 3;
    spec.slices = 2;
    spec.coils = 2;
    spec.height = spec.width = 16;
    spec.seed = 77;

    SUBCASE("write then read is bit-identical") {
        TempDir dir("rw");
        write_dataset(dir.path.string(), spec);
        auto vols = read_dataset(dir.path.string());
        REQUIRE(vols.size() == 3);
        for (int64_t id = 0; id < 3; ++id) {
            auto fresh = make_volume(spec, id);
            CHECK(vols[size_t(id)].slices.re.data == fresh.slices.re.data);
            CHECK(vols[size_t(id)].kspace.im.data == fresh.kspace.im.data);
            CHECK(vols[size_t(id)].maps.maps.re.data == fresh.maps.maps.re.data);
            CHECK(vols[size_t(id)].mask.cols == fresh.mask.cols);
        }
    }
    SUBCASE("same seed produces identical bytes on disk") {
        TempDir d1("det1"), d2("det2");
        write_dataset(d1.path.string(), spec);
        write_dataset(d2.path.string(), spec);
        for (int id = 0; id < 3; ++id) {
            std::ifstream a(d1.path / sstr("vol_", id, ".bin"), std::ios::binary);
            std::ifstream b(d2.path / sstr("vol_", id, ".bin"), std::ios::binary);
            std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
            std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
            CHECK(sa == sb);
            CHECK(!sa.empty());
        }
    }
    SUBCASE("a corrupted byte raises a checksum error, not garbage data") {
        TempDir dir("corrupt");
        write_dataset(dir.path.string(), spec);
        const auto victim = dir.path / "vol_1.bin";
        std::fstream f(victim, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(200);
        char c;
        f.seekg(200);
        f.get(c);
        f.seekp(200);
        c = char(c ^ 0x40);
        f.put(c);
        f.close();
        CHECK_THROWS_WITH_AS(read_dataset(dir.path.string()), doctest::Contains("checksum"), DataError);
    }
    SUBCASE("bad magic raises a version error") {
        TempDir dir("magic");
        write_dataset(dir.path.string(), spec);
        const auto victim = dir.path / "vol_0.bin";
        std::fstream f(victim, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(7);
        f.put('9');
        f.close();
        CHECK_THROWS_WITH_AS(read_dataset(dir.path.string()), doctest::Contains("version mismatch"),
                             DataError);
    }
    SUBCASE("truncated file is reported as truncated") {
        TempDir dir("trunc");
        write_dataset(dir.path.string(), spec);
        const auto victim = dir.path / "vol_2.bin";
        const auto size = fs::file_size(victim);
        fs::resize_file(victim, size / 2);
        CHECK_THROWS_AS(read_dataset(dir.path.string()), DataError);
    }
    SUBCASE("manifest count must match the files listed") {
        TempDir dir("count");
        write_dataset(dir.path.string(), spec);
        auto m = read_manifest(dir.path.string());
        CHECK(m.entries.size() == 3);
        for (const auto& e : m.entries) CHECK(fs::exists(dir.path / e.file));
        fs::remove(dir.path / "vol_1.bin");
        CHECK_THROWS_WITH_AS(read_dataset(dir.path.string()), doctest::Contains("missing"), DataError);
    }
}

TEST_CASE("zero-filled baseline on generated data is neither trivial nor hopeless") {
    DatasetSpec spec;
    spec.volumes = 4;
    spec.slices = 2;
    spec.coils = 4;
    spec.height = spec.width = 64;
    spec.acceleration = 4.0;
    spec.center_fraction = 0.08;
    spec.seed = 2024;
    double total = 0;
    int64_t count = 0;
    for (int64_t id = 0; id < spec.volumes; ++id) {
        auto vol = make_volume(spec, id);
        const float dr = vol.data_range();
        for (int64_t k = 0; k < spec.slices; ++k) {
            auto zf = zero_filled_magnitude(vol.slice_kspace(k), vol.mask);
            total += ssim_value(zf, vol.target(k), dr);
            ++count;
        }
    }
    const double mean = total / double(count);
    CHECK(mean > 0.3);
    CHECK(mean < 0.95);
}
