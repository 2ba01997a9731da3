#pragma once

#include "humus/dataset.hpp"
#include "humus/toml.hpp"
#include "humus/varnet.hpp"

namespace humus {

// Complete experiment description. One TOML file drives data generation,
// training, evaluation and reconstruction.
struct RunConfig {
    // [data]
    std::string data_dir = "data";
    int64_t volumes = 50;
    int64_t slices = 4;  // K
    int64_t coils = 4;   // N
    int64_t height = 64, width = 64;
    double acceleration = 4.0;
    double center_fraction = 0.08;
    double noise_sigma = 0.005;
    double val_fraction = 0.2;

    // [model]
    std::string variant = "humus";
    int64_t d_high = 6;
    int64_t embed_dim = 12;
    int64_t window = 4;
    int64_t depths = 2;
    int64_t cascades = 2;  // T
    int64_t patch_size = 1;
    int64_t adjacent = 1;  // a
    std::vector<int64_t> heads = {3, 6, 12};
    int64_t bottleneck_heads = 24;
    int64_t single_scale_blocks = 3;
    int64_t single_scale_heads = 6;
    int64_t unet_channels = 16;
    int64_t sme_channels = 8;

    // [train]
    double lr = 1e-3;
    int64_t epochs = 15;
    int64_t lr_drop_epoch = 12;   // epochs after this one run at lr / lr_drop_factor
    double lr_drop_factor = 10.0;
    int64_t batch_size = 4;
    uint64_t seed = 1234;

    // [output]
    std::string out_dir = "runs/exp";
};

RunConfig config_from_toml(const TomlTable& t);
RunConfig load_config(const std::string& path);
std::string config_to_toml_text(const RunConfig& c);
std::string config_to_json(const RunConfig& c);
RunConfig config_from_json(const std::string& text);

// divisibility and sanity checks; throws ConfigError with actionable messages
void validate_config(const RunConfig& c);

DatasetSpec dataset_spec(const RunConfig& c);
VarnetConfig varnet_config(const RunConfig& c);

// materialized ablation presets: un-ss, un-ms, un-ms-patch2, humus,
// unet-denoiser
std::vector<std::string> preset_names();
RunConfig ablation_preset(const std::string& name);

}  // namespace humus
