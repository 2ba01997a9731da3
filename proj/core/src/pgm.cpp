#include "humus/pgm.hpp"

#include <fstream>

namespace humus {

std::pair<float, float> write_pgm16(const std::string& path, const Tensor<float>& image) {
    if (image.shape.size() != 2)
        throw ShapeError(sstr("pgm: expects a [H,W] image, got ", shape_str(image.shape)));
    const int64_t h = image.shape[0], w = image.shape[1];
    float lo = image.data[0], hi = image.data[0];
    for (float v : image.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = hi > lo ? hi - lo : 1.0f;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(sstr("cannot write image ", path));
    f << "P5\n" << w << " " << h << "\n65535\n";
    std::string bytes;
    bytes.reserve(size_t(h * w * 2));
    for (float v : image.data) {
        const uint32_t q = uint32_t(std::lround(double(v - lo) / span * 65535.0));
        bytes.push_back(char((q >> 8) & 0xFF));  // big-endian per the format
        bytes.push_back(char(q & 0xFF));
    }
    f.write(bytes.data(), long(bytes.size()));
    if (!f) throw DataError(sstr("short write to image ", path));
    return {lo, hi};
}

}  // namespace humus
