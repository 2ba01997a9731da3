#include <humus/train.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace humus;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("humus_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

RunConfig tiny_run(const fs::path& root, uint64_t seed = 7) {
    RunConfig c;
    c.data_dir = (root / "data").string();
    c.volumes = 6;
    c.slices = 2;
    c.coils = 2;
    c.height = c.width = 32;
    c.acceleration = 3.0;
    c.center_fraction = 0.12;
    c.val_fraction = 0.2;
    c.variant = "humus";
    c.d_high = 2;
    c.window = 4;
    c.depths = 1;
    c.cascades = 1;
    c.adjacent = 0;
    c.heads = {1, 2, 4};
    c.bottleneck_heads = 4;
    c.sme_channels = 4;
    c.lr = 1e-3;
    c.epochs = 2;
    c.lr_drop_epoch = 1;
    c.lr_drop_factor = 10.0;
    c.batch_size = 2;
    c.seed = seed;
    c.out_dir = (root / "run").string();
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(bool(f));
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("toml config round trip and validation") {
    SUBCASE("parse, serialize, reparse") {
        RunConfig c;
        c.heads = {2, 4, 8};
        c.variant = "un-ms";
        c.embed_dim = 8;
        c.bottleneck_heads = 8;
        const std::string text = config_to_toml_text(c);
        RunConfig back = config_from_toml(TomlTable::parse(text));
        CHECK(back.heads == c.heads);
        CHECK(back.variant == "un-ms");
        CHECK(back.lr == c.lr);
        CHECK(back.out_dir == c.out_dir);
    }
    SUBCASE("json echo round trip") {
        RunConfig c;
        c.seed = 987654321;
        c.acceleration = 7.5;
        RunConfig back = config_from_json(config_to_json(c));
        CHECK(back.seed == c.seed);
        CHECK(back.acceleration == c.acceleration);
    }
    SUBCASE("parse errors carry position and reason") {
        CHECK_THROWS_WITH_AS(TomlTable::parse("[data\n", "t.toml"), doctest::Contains("t.toml:1"),
                             ConfigError);
        CHECK_THROWS_WITH_AS(TomlTable::parse("[data]\nfoo\n", "t.toml"),
                             doctest::Contains("key = value"), ConfigError);
        auto t = TomlTable::parse("[train]\nlr = \"fast\"\n");
        CHECK_THROWS_WITH_AS(t.get_double("train.lr", 0.0), doctest::Contains("number"), ConfigError);
    }
    SUBCASE("validation messages are actionable") {
        RunConfig c;
        c.height = 48;  // not a power of two
        CHECK_THROWS_WITH_AS(validate_config(c), doctest::Contains("powers of two"), ConfigError);
        c = RunConfig{};
        c.acceleration = 40.0;  // keeps fewer lines than the ACS block
        CHECK_THROWS_WITH_AS(validate_config(c), doctest::Contains("ACS"), ConfigError);
        c = RunConfig{};
        c.variant = "nope";
        CHECK_THROWS_WITH_AS(validate_config(c), doctest::Contains("unknown denoiser variant"),
                             ConfigError);
    }
}

TEST_CASE("ablation presets") {
    for (const auto& name : preset_names()) {
        RunConfig c = ablation_preset(name);  // throws if invalid
        CHECK(c.variant == name);
    }
    RunConfig p2 = ablation_preset("un-ms-patch2");
    CHECK(p2.patch_size == 2);
    CHECK(p2.embed_dim == 36);
    RunConfig ss = ablation_preset("un-ss");
    CHECK(ss.embed_dim == 12);
    CHECK(ss.single_scale_heads == 6);
    CHECK_THROWS_AS(ablation_preset("bogus"), ConfigError);
}

TEST_CASE("training loop") {
    TempDir dir("train");
    RunConfig cfg = tiny_run(dir.path);
    generate_dataset(cfg);

    SUBCASE("two epochs reduce the training loss and keep mu finite") {
        TrainOutcome out = run_training(cfg, {.resume_from = "", .quiet = true});
        REQUIRE(out.epochs.size() == 2);
        CHECK(out.epochs[1].train_loss < out.epochs[0].train_loss);
        for (const auto& e : out.epochs)
            for (double mu : e.mu) CHECK(std::isfinite(mu));
        CHECK(fs::exists(out.best_checkpoint));
        CHECK(fs::exists(out.last_checkpoint));

        // lr schedule drops by exactly the configured factor, read from the log
        const std::string log = slurp(out.log_path);
        CHECK(log.find("\"lr\":0.001") != std::string::npos);
        CHECK(log.find("\"lr\":0.0001") != std::string::npos);
        CHECK(out.epochs[0].lr == cfg.lr);
        CHECK(out.epochs[1].lr == cfg.lr / cfg.lr_drop_factor);

        // validation masks are identical across epochs
        CHECK(out.epochs[0].val_mask_hash == out.epochs[1].val_mask_hash);
    }
    SUBCASE("identical seeded runs write identical logs") {
        RunConfig a = cfg;
        a.out_dir = (dir.path / "run_a").string();
        RunConfig b = cfg;
        b.out_dir = (dir.path / "run_b").string();
        run_training(a, {.resume_from = "", .quiet = true});
        run_training(b, {.resume_from = "", .quiet = true});
        CHECK(slurp(a.out_dir + "/train.log") == slurp(b.out_dir + "/train.log"));
    }
    SUBCASE("resume reproduces the uninterrupted run") {
        RunConfig full = cfg;
        full.out_dir = (dir.path / "run_full").string();
        TrainOutcome ref = run_training(full, {.resume_from = "", .quiet = true});

        RunConfig first = cfg;
        first.epochs = 1;
        first.out_dir = (dir.path / "run_first").string();
        TrainOutcome part = run_training(first, {.resume_from = "", .quiet = true});

        RunConfig second = cfg;
        second.out_dir = (dir.path / "run_second").string();
        TrainOutcome resumed =
            run_training(second, {.resume_from = part.last_checkpoint, .quiet = true});
        REQUIRE(resumed.epochs.size() == 1);
        CHECK(std::fabs(resumed.epochs[0].train_loss - ref.epochs[1].train_loss) <= 1e-6);
        CHECK(std::fabs(resumed.epochs[0].val_ssim - ref.epochs[1].val_ssim) <= 1e-6);
    }
}

TEST_CASE("checkpoint io") {
    TempDir dir("ckpt");
    RunConfig cfg = tiny_run(dir.path);
    Rng rng(3);
    auto model = make_varnet<float>(rng, varnet_config(cfg));
    ParamRegistry reg = collect_params(model);
    Adam adam;
    adam.init(reg);
    adam.step = 17;

    CheckpointState st;
    st.config = cfg;
    st.epoch = 5;
    st.adam_step = adam.step;
    st.best_val_ssim = 0.77;
    for (size_t pi = 0; pi < reg.size(); ++pi) {
        st.records.emplace(reg[pi].first, reg[pi].second->tensor_like());
        st.records.emplace("adam.m." + reg[pi].first, Tensor<float>(reg[pi].second->shape, adam.m[pi]));
        st.records.emplace("adam.v." + reg[pi].first, Tensor<float>(reg[pi].second->shape, adam.v[pi]));
    }
    const std::string path = (dir.path / "model.ckpt").string();
    save_checkpoint(path, st);

    SUBCASE("round trip restores config, state and every parameter bitwise") {
        CheckpointState back = load_checkpoint(path);
        CHECK(back.epoch == 5);
        CHECK(back.adam_step == 17);
        CHECK(back.best_val_ssim == 0.77);
        CHECK(back.config.seed == cfg.seed);
        Rng rng2(99);
        auto model2 = make_varnet<float>(rng2, varnet_config(cfg));
        ParamRegistry reg2 = collect_params(model2);
        restore_params(back, reg2);
        for (size_t pi = 0; pi < reg.size(); ++pi)
            CHECK(reg2[pi].second->value == reg[pi].second->value);
    }
    SUBCASE("corruption is caught by the checksum") {
        std::string bytes = slurp(path);
        bytes[bytes.size() / 2] = char(bytes[bytes.size() / 2] ^ 0x10);
        const std::string bad = (dir.path / "bad.ckpt").string();
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("checksum"), DataError);
    }
    SUBCASE("wrong magic is a version error") {
        std::string bytes = slurp(path);
        bytes[7] = '9';
        const std::string bad = (dir.path / "magic.ckpt").string();
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("version mismatch"), DataError);
    }
}

TEST_CASE("evaluation") {
    TempDir dir("eval");
    RunConfig cfg = tiny_run(dir.path);
    generate_dataset(cfg);

    SUBCASE("zero-residual model reproduces the zero-filled baseline metrics") {
        Rng init_rng(mix64(cfg.seed, 0x696e6974ull));
        auto model = make_varnet<float>(init_rng, varnet_config(cfg));
        auto& hb = std::get<HumusBlockWeights<float>>(model.cascades[0]);
        std::fill(hb.fr_out_w.value.begin(), hb.fr_out_w.value.end(), 0.0f);
        std::fill(hb.fr_out_b.value.begin(), hb.fr_out_b.value.end(), 0.0f);
        ParamRegistry reg = collect_params(model);
        Adam adam;
        adam.init(reg);
        CheckpointState st;
        st.config = cfg;
        for (size_t pi = 0; pi < reg.size(); ++pi) {
            st.records.emplace(reg[pi].first, reg[pi].second->tensor_like());
            st.records.emplace("adam.m." + reg[pi].first,
                               Tensor<float>(reg[pi].second->shape, adam.m[pi]));
            st.records.emplace("adam.v." + reg[pi].first,
                               Tensor<float>(reg[pi].second->shape, adam.v[pi]));
        }
        const std::string ckpt = (dir.path / "zero.ckpt").string();
        save_checkpoint(ckpt, st);

        MetricReport rep = evaluate_checkpoint(ckpt, cfg.data_dir);
        // zero-filled baseline over the same validation split
        auto vols = read_dataset(cfg.data_dir);
        auto [train_idx, val_idx] = split_volumes(cfg.volumes, cfg.val_fraction, cfg.seed);
        (void)train_idx;
        double zf = 0;
        int64_t n = 0;
        for (int64_t vi : val_idx) {
            const auto& vol = vols[size_t(vi)];
            for (int64_t s = 0; s < vol.num_slices(); ++s) {
                zf += double(ssim_value(zero_filled_magnitude(vol.slice_kspace(s), vol.mask),
                                        vol.target(s), vol.data_range()));
                ++n;
            }
        }
        CHECK(rep.ssim == doctest::Approx(zf / double(n)).epsilon(1e-6));

        // aggregate equals the mean of the per-slice values
        double mean = 0;
        for (const auto& m : rep.per_slice) mean += m.ssim;
        mean /= double(rep.per_slice.size());
        CHECK(std::fabs(rep.ssim - mean) < 1e-9);

        // report keys present and parseable
        MetricReport parsed = report_from_json(report_to_json(rep));
        CHECK(parsed.per_slice.size() == rep.per_slice.size());
    }
}

#ifdef HUMUS_CLI_PATH
TEST_CASE("cli process exit codes") {
    TempDir dir("exit");
    const std::string cli = HUMUS_CLI_PATH;
    auto run = [&](const std::string& args) {
        const int rc = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(rc);
    };
    // bad config -> 2
    std::ofstream bad(dir.path / "bad.toml");
    bad << "[data]\nheight = 48\n";
    bad.close();
    CHECK(run("gen-data --config " + (dir.path / "bad.toml").string()) == 2);
    // missing dataset -> 3
    RunConfig cfg = tiny_run(dir.path);
    std::ofstream ok(dir.path / "ok.toml");
    ok << config_to_toml_text(cfg);
    ok.close();
    CHECK(run("train --config " + (dir.path / "ok.toml").string()) == 3);
    // full tiny flow -> 0
    CHECK(run("gen-data --config " + (dir.path / "ok.toml").string()) == 0);
    cfg.epochs = 1;
    std::ofstream ok1(dir.path / "ok1.toml");
    ok1 << config_to_toml_text(cfg);
    ok1.close();
    CHECK(run("train --config " + (dir.path / "ok1.toml").string() + " --threads 2") == 0);
    CHECK(run("eval " + cfg.out_dir + "/best.ckpt " + cfg.data_dir) == 0);
    CHECK(run("reconstruct " + cfg.out_dir + "/best.ckpt " + cfg.data_dir + "/vol_0.bin --slice 0 --out " +
              (dir.path / "rec").string()) == 0);
}
#endif

TEST_CASE("reconstruction output") {
    TempDir dir("rec");
    RunConfig cfg = tiny_run(dir.path);
    cfg.epochs = 1;
    generate_dataset(cfg);
    TrainOutcome out = run_training(cfg, {.resume_from = "", .quiet = true});

    auto res = reconstruct_volume(out.last_checkpoint, cfg.data_dir + "/vol_0.bin", 1,
                                  (dir.path / "recon").string(), /*dump_cascades=*/true);
    // ground truth + zero-filled + final + T cascades + sidecar
    CHECK(res.files.size() == size_t(3 + cfg.cascades + 1));
    int64_t pgm_count = 0;
    for (const auto& f : res.files) {
        if (f.size() > 4 && f.substr(f.size() - 4) == ".pgm") {
            ++pgm_count;
            std::string bytes = slurp(f);
            CHECK(bytes.substr(0, 3) == "P5\n");
            CHECK(bytes.find("65535") != std::string::npos);
        }
    }
    CHECK(pgm_count == 3 + cfg.cascades);
    CHECK(fs::exists(dir.path / "recon" / "scales.json"));

    // the written final image, dequantized with its sidecar scale, matches a
    // direct forward pass within the quantization step
    std::string final_bytes = slurp(dir.path / "recon" / "final.pgm");
    const size_t hdr = final_bytes.find("65535\n") + 6;
    auto vols = read_dataset(cfg.data_dir);
    CheckpointState st = load_checkpoint(out.last_checkpoint);
    Rng init_rng(mix64(cfg.seed, 0x696e6974ull));
    auto model = make_varnet<float>(init_rng, varnet_config(cfg));
    ParamRegistry reg = collect_params(model);
    restore_params(st, reg);
    const auto& vol = vols[0];
    CArray<float> window = asr_assemble(vol.kspace, AsrSpec{0, 1, vol.num_slices()});
    apply_mask(window, vol.mask);
    Tape<float> tp;
    tp.set_grad_enabled(false);
    auto fwd = varnet_forward(tp, complex_leaf(tp, window), vol.mask, model);
    auto direct = fwd.magnitude.tensor();

    float lo = 1e30f, hi = -1e30f;
    for (float v : direct.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = hi > lo ? hi - lo : 1.0f;
    double worst = 0;
    for (int64_t i = 0; i < direct.size(); ++i) {
        const uint32_t q = (uint32_t(uint8_t(final_bytes[hdr + size_t(2 * i)])) << 8) |
                           uint32_t(uint8_t(final_bytes[hdr + size_t(2 * i) + 1]));
        const double deq = double(lo) + double(q) / 65535.0 * double(span);
        worst = std::max(worst, std::fabs(deq - double(direct.data[size_t(i)])));
    }
    CHECK(worst <= double(span) / 65535.0 + 1e-6);
}
