#pragma once

#include <string>

#include "humus/phantom.hpp"

namespace humus {

// One generated volume: ground truth, coil maps, full noisy k-space, and the
// volume's fixed evaluation mask. Training applies fresh random masks to the
// stored (unmasked) k-space each epoch; validation/eval use `mask`.
struct PhantomVolume {
    int64_t id = 0;
    uint64_t seed = 0;
    CArray<float> slices;          // [K,H,W]
    SensitivityMaps<float> maps;   // [N,H,W]
    CArray<float> kspace;          // [K,N,H,W], unmasked
    Mask mask;
    float noise_sigma = 0;

    int64_t num_slices() const { return slices.shape()[0]; }
    int64_t height() const { return slices.shape()[1]; }
    int64_t width() const { return slices.shape()[2]; }
    int64_t coils() const { return maps.coils(); }

    Tensor<float> target(int64_t k) const { return slice_magnitude(slices, k); }

    // per-volume intensity scale used as the metric/loss data range
    float data_range() const {
        float m = 0;
        for (size_t i = 0; i < slices.re.data.size(); ++i)
            m = std::max(m, slices.re[i] * slices.re[i] + slices.im[i] * slices.im[i]);
        return std::sqrt(m);
    }

    // coil k-space of one slice, [N,H,W]
    CArray<float> slice_kspace(int64_t k) const {
        const int64_t n = coils(), h = height(), w = width();
        CArray<float> out(Shape{n, h, w});
        std::copy(kspace.re.data.begin() + k * n * h * w, kspace.re.data.begin() + (k + 1) * n * h * w,
                  out.re.data.begin());
        std::copy(kspace.im.data.begin() + k * n * h * w, kspace.im.data.begin() + (k + 1) * n * h * w,
                  out.im.data.begin());
        return out;
    }
};

struct DatasetSpec {
    int64_t volumes = 10;
    int64_t slices = 4;   // K
    int64_t coils = 4;    // N
    int64_t height = 64;
    int64_t width = 64;
    double acceleration = 4.0;
    double center_fraction = 0.08;
    double noise_sigma = 0.005;
    uint64_t seed = 1;
};

struct ManifestEntry {
    int64_t id = 0;
    uint64_t seed = 0;
    int64_t slices = 0, coils = 0, height = 0, width = 0;
    double acceleration = 0, center_fraction = 0, noise_sigma = 0;
    std::string file;
};

struct DatasetManifest {
    std::string version;
    std::vector<ManifestEntry> entries;
};

PhantomVolume make_volume(const DatasetSpec& spec, int64_t id);

// dir/manifest.json + dir/vol_<id>.bin per volume
void write_dataset(const std::string& dir, const DatasetSpec& spec);
void write_volume(const std::string& path, const PhantomVolume& vol);

DatasetManifest read_manifest(const std::string& dir);
PhantomVolume read_volume(const std::string& path, const ManifestEntry& entry);
std::vector<PhantomVolume> read_dataset(const std::string& dir);

}  // namespace humus
