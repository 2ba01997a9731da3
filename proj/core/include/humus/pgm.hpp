#pragma once

#include "humus/tensor.hpp"

namespace humus {

// 16-bit binary PGM (P5, maxval 65535, big-endian samples), min-max
// normalized per image. Returns the (min, max) used so a sidecar can record
// the scale.
std::pair<float, float> write_pgm16(const std::string& path, const Tensor<float>& image);

}  // namespace humus
