#pragma once

#include "humus/base.hpp"

namespace humus {

// Column undersampling mask over the phase-encode (width) axis. A centered
// block of round(W * center_fraction) columns is always sampled; the rest are
// kept independently with probability chosen to hit W/acceleration expected
// samples in total.
struct Mask {
    std::vector<uint8_t> cols;  // 1 = sampled
    double acceleration = 1.0;
    double center_fraction = 0.0;

    int64_t width() const { return int64_t(cols.size()); }
    int64_t num_sampled() const {
        int64_t n = 0;
        for (uint8_t c : cols) n += c;
        return n;
    }
};

int64_t mask_center_count(int64_t width, double center_fraction);
// first column of the centered ACS block
int64_t mask_center_start(int64_t width, double center_fraction);

Mask make_mask(int64_t width, double acceleration, double center_fraction, uint64_t seed);

// all-ones mask (no undersampling)
Mask full_mask(int64_t width);

uint64_t mask_hash(const Mask& m);

}  // namespace humus
