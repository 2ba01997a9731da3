#pragma once

#include "humus/checkpoint.hpp"
#include "humus/metrics.hpp"

namespace humus {

// Experiment orchestration: seeded end-to-end training with Adam, fixed-mask
// validation, JSON-lines logging, checkpointing with exact resume, and the
// evaluation / reconstruction entry points behind the CLI.
//
// All randomness is derived from (config seed, purpose, epoch, volume), so a
// resumed run replays the exact mask and ordering sequence of an
// uninterrupted one.

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<float>> m, v;

    void init(const ParamRegistry& reg);
    // applies grad * scale; clears gradients afterwards
    void update(const ParamRegistry& reg, double lr, double scale);
};

struct EpochLog {
    int64_t epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double val_ssim = 0, val_psnr = 0, val_nmse = 0;
    std::vector<double> mu;
    uint64_t val_mask_hash = 0;
    double seconds = 0;
};

struct TrainOptions {
    std::string resume_from;  // checkpoint path; empty starts fresh
    bool quiet = false;
};

struct TrainOutcome {
    std::vector<EpochLog> epochs;
    std::string log_path, best_checkpoint, last_checkpoint;
    double best_val_ssim = 0;
    double zero_filled_val_ssim = 0;  // no-learning baseline on the same split
};

TrainOutcome run_training(const RunConfig& cfg, const TrainOptions& opts = {});

struct GenDataSummary {
    int64_t volumes = 0, slices = 0, coils = 0;
    int64_t height = 0, width = 0;
    std::string dir;
};
GenDataSummary generate_dataset(const RunConfig& cfg);

// fixed-mask evaluation over the validation split of `data_dir`
MetricReport evaluate_checkpoint(const std::string& checkpoint_path, const std::string& data_dir,
                                 const std::string& images_dir = "");

struct ReconstructOutcome {
    std::vector<std::string> files;  // written images, sidecar last
};
ReconstructOutcome reconstruct_volume(const std::string& checkpoint_path,
                                      const std::string& volume_file, int64_t slice,
                                      const std::string& out_dir, bool dump_cascades);

// deterministic 80/20-style volume split
std::pair<std::vector<int64_t>, std::vector<int64_t>> split_volumes(int64_t count,
                                                                    double val_fraction,
                                                                    uint64_t seed);

void set_thread_count(int threads);

}  // namespace humus
