// humus: synthetic multicoil MRI data generation, unrolled-network training,
// evaluation and reconstruction.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure (non-finite loss), 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <humus/train.hpp>

namespace {

humus::RunConfig load_with_overrides(const std::string& config_path, int64_t seed_override,
                                     const std::string& out_override) {
    humus::RunConfig cfg = humus::load_config(config_path);
    if (seed_override >= 0) cfg.seed = uint64_t(seed_override);
    if (!out_override.empty()) cfg.out_dir = out_override;
    humus::validate_config(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unrolled multicoil MRI reconstruction on synthetic phantoms"};
    app.require_subcommand(1);
    app.fallthrough();  // --threads may follow the subcommand

    int threads = 0;
    app.add_option("--threads", threads, "worker threads for tensor kernels (0 = library default)");

    std::string config_path;
    int64_t seed_override = -1;
    std::string out_override;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* copt = cmd->add_option("--config", config_path, "experiment TOML file");
        if (needs_config) copt->required();
        cmd->add_option("--seed", seed_override, "override train.seed");
        cmd->add_option("--out", out_override, "override the output directory");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
    add_common(gen, true);

    CLI::App* train = app.add_subcommand("train", "train a model per the config");
    add_common(train, true);
    std::string resume_from;
    train->add_option("--resume", resume_from, "continue from a checkpoint");

    CLI::App* eval_cmd = app.add_subcommand("eval", "fixed-mask evaluation of a checkpoint");
    std::string eval_ckpt, eval_data, eval_report, eval_images;
    eval_cmd->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("dataset", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--out", eval_report, "write the metric report JSON here");
    eval_cmd->add_option("--images", eval_images, "emit side-by-side PGM images into this directory");

    CLI::App* rec = app.add_subcommand("reconstruct", "reconstruct one slice of one volume");
    std::string rec_ckpt, rec_volume, rec_out = "recon";
    int64_t rec_slice = 0;
    bool dump_cascades = false;
    rec->add_option("checkpoint", rec_ckpt, "checkpoint file")->required();
    rec->add_option("volume", rec_volume, "volume .bin file (its directory must hold manifest.json)")
        ->required();
    rec->add_option("--slice", rec_slice, "slice index (0-based)");
    rec->add_option("--out", rec_out, "output directory");
    rec->add_flag("--dump-cascades", dump_cascades, "also write every intermediate reconstruction");

    CLI::App* abl = app.add_subcommand("ablate", "materialize ablation preset configs");
    std::string preset = "all", abl_out = "ablations";
    abl->add_option("preset", preset, "un-ss | un-ms | un-ms-patch2 | humus | unet-denoiser | all");
    abl->add_option("--out", abl_out, "directory for the generated configs");

    try {
        app.parse(argc, argv);
        humus::set_thread_count(threads);

        if (gen->parsed()) {
            auto cfg = load_with_overrides(config_path, seed_override, "");
            if (!out_override.empty()) cfg.data_dir = out_override;
            auto s = humus::generate_dataset(cfg);
            std::cout << "wrote " << s.volumes << " volumes (" << s.slices << " slices x " << s.coils
                      << " coils, " << s.height << "x" << s.width << ") to " << s.dir << "\n";
        } else if (train->parsed()) {
            auto cfg = load_with_overrides(config_path, seed_override, out_override);
            humus::TrainOptions opts;
            opts.resume_from = resume_from;
            auto outcome = humus::run_training(cfg, opts);
            std::cout << "zero-filled baseline ssim " << outcome.zero_filled_val_ssim << "\n";
            std::cout << "best validation ssim " << outcome.best_val_ssim << "\n";
            std::cout << "log: " << outcome.log_path << "\n";
        } else if (eval_cmd->parsed()) {
            auto report = humus::evaluate_checkpoint(eval_ckpt, eval_data, eval_images);
            const std::string text = humus::report_to_json(report);
            if (eval_report.empty()) {
                std::cout << text << "\n";
            } else {
                std::ofstream f(eval_report);
                if (!f) throw humus::DataError("cannot write " + eval_report);
                f << text << "\n";
                std::cout << "ssim " << report.ssim << "  psnr " << report.psnr << "  nmse "
                          << report.nmse << "  -> " << eval_report << "\n";
            }
        } else if (rec->parsed()) {
            auto out = humus::reconstruct_volume(rec_ckpt, rec_volume, rec_slice, rec_out,
                                                 dump_cascades);
            for (const auto& f : out.files) std::cout << f << "\n";
        } else if (abl->parsed()) {
            std::filesystem::create_directories(abl_out);
            std::vector<std::string> names =
                preset == "all" ? humus::preset_names() : std::vector<std::string>{preset};
            for (const auto& name : names) {
                auto cfg = humus::ablation_preset(name);
                const auto path = std::filesystem::path(abl_out) / (name + ".toml");
                std::ofstream f(path);
                if (!f) throw humus::DataError("cannot write " + path.string());
                f << humus::config_to_toml_text(cfg);
                std::cout << path.string() << "\n";
            }
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const humus::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const humus::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const humus::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
