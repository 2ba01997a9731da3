#pragma once

#include <map>

#include "humus/config.hpp"

namespace humus {

// Checkpoint file: magic "HUMUSCP1", u32-length-prefixed UTF-8 JSON echo
// (config plus training state), then per-parameter records
// (u32 name length + bytes, u32 rank, u32 extents, little-endian f32 payload),
// trailing CRC32 over everything after the magic. Adam moments ride along as
// records named adam.m.<param> / adam.v.<param>.
struct CheckpointState {
    RunConfig config;
    int64_t epoch = 0;        // completed epochs
    int64_t adam_step = 0;
    double best_val_ssim = 0;
    std::map<std::string, Tensor<float>> records;
};

void save_checkpoint(const std::string& path, const CheckpointState& state);
CheckpointState load_checkpoint(const std::string& path);

// parameter registry helpers
using ParamRegistry = std::vector<std::pair<std::string, Param<float>*>>;

template <class W>
ParamRegistry collect_params(W& weights, const std::string& prefix = "model") {
    ParamRegistry reg;
    visit_params(weights, prefix, [&](const std::string& name, Param<float>& p) {
        reg.emplace_back(name, &p);
    });
    return reg;
}

// copy model parameter records into the registry; throws on missing/mismatch
void restore_params(const CheckpointState& state, const ParamRegistry& reg);

}  // namespace humus
