#include "humus/mask.hpp"

#include <cmath>

namespace humus {

int64_t mask_center_count(int64_t width, double center_fraction) {
    return int64_t(std::llround(double(width) * center_fraction));
}

int64_t mask_center_start(int64_t width, double center_fraction) {
    return (width - mask_center_count(width, center_fraction)) / 2;
}

Mask make_mask(int64_t width, double acceleration, double center_fraction, uint64_t seed) {
    if (width < 8) throw ConfigError(sstr("mask: width must be >= 8, got ", width));
    if (acceleration < 1.0) throw ConfigError(sstr("mask: acceleration must be >= 1, got ", acceleration));
    if (!(center_fraction > 0.0 && center_fraction < 1.0))
        throw ConfigError(sstr("mask: center_fraction must be in (0,1), got ", center_fraction));

    const int64_t n_center = mask_center_count(width, center_fraction);
    const double target = double(width) / acceleration;
    if (target < double(n_center))
        throw ConfigError(sstr("mask: infeasible, W/acceleration = ", target,
                               " is smaller than the ", n_center, "-column center block"));

    double p = (target - double(n_center)) / double(width - n_center);
    p = std::min(1.0, std::max(0.0, p));

    Mask m;
    m.cols.assign(size_t(width), 0);
    m.acceleration = acceleration;
    m.center_fraction = center_fraction;
    const int64_t c0 = mask_center_start(width, center_fraction);
    for (int64_t i = c0; i < c0 + n_center; ++i) m.cols[size_t(i)] = 1;

    Rng rng(mix64(seed, 0x6d61736bull));  // "mask"
    for (int64_t i = 0; i < width; ++i) {
        if (i >= c0 && i < c0 + n_center) continue;
        if (rng.bernoulli(p)) m.cols[size_t(i)] = 1;
    }
    return m;
}

Mask full_mask(int64_t width) {
    Mask m;
    m.cols.assign(size_t(width), 1);
    m.acceleration = 1.0;
    m.center_fraction = 0.5;
    return m;
}

uint64_t mask_hash(const Mask& m) {
    uint64_t h = 0x9ae16a3b2f90404full;
    for (size_t i = 0; i < m.cols.size(); ++i) h = mix64(h, (uint64_t(m.cols[i]) << 32) | i);
    return h;
}

}  // namespace humus
