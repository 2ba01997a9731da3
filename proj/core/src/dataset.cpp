#include "humus/dataset.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

namespace humus {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'U', 'M', 'U', 'S', 'D', 'S', '1'};
constexpr const char* kVersion = "HUMUSDS1";

void put_u32(std::string& buf, uint32_t v) {
    char b[4] = {char(v & 0xFF), char((v >> 8) & 0xFF), char((v >> 16) & 0xFF), char((v >> 24) & 0xFF)};
    buf.append(b, 4);
}

void put_f32(std::string& buf, const std::vector<float>& v) {
    static_assert(sizeof(float) == 4);
    // little-endian host assumed; asserted at startup below
    buf.append(reinterpret_cast<const char*>(v.data()), v.size() * 4);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n) const {
        if (pos + n > buf.size())
            throw DataError(sstr("truncated volume file ", path, ": need ", n, " bytes at offset ", pos,
                                 ", have ", buf.size() - pos));
    }
    uint32_t u32() {
        need(4);
        uint32_t v = uint32_t(uint8_t(buf[pos])) | uint32_t(uint8_t(buf[pos + 1])) << 8 |
                     uint32_t(uint8_t(buf[pos + 2])) << 16 | uint32_t(uint8_t(buf[pos + 3])) << 24;
        pos += 4;
        return v;
    }
    void f32(std::vector<float>& v, size_t count) {
        need(count * 4);
        v.resize(count);
        std::memcpy(v.data(), buf.data() + pos, count * 4);
        pos += count * 4;
    }
    void bytes(std::vector<uint8_t>& v, size_t count) {
        need(count);
        v.assign(buf.begin() + long(pos), buf.begin() + long(pos + count));
        pos += count;
    }
};

void check_little_endian() {
    const uint32_t probe = 1;
    if (*reinterpret_cast<const uint8_t*>(&probe) != 1)
        throw Error("dataset io assumes a little-endian host");
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(sstr("cannot open ", path));
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return buf;
}

void write_file(const std::string& path, const std::string& buf) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(sstr("cannot write ", path));
    f.write(buf.data(), long(buf.size()));
    if (!f) throw DataError(sstr("short write to ", path));
}

}  // namespace

PhantomVolume make_volume(const DatasetSpec& spec, int64_t id) {
    PhantomVolume vol;
    vol.id = id;
    vol.seed = mix64(spec.seed, uint64_t(id));
    vol.slices = generate_phantom<float>(vol.seed, spec.height, spec.width, spec.slices);
    vol.maps = generate_coil_maps<float>(vol.seed, spec.coils, spec.height, spec.width);
    vol.kspace = simulate_acquisition(vol.slices, vol.maps, spec.noise_sigma, vol.seed);
    vol.mask = make_mask(spec.width, spec.acceleration, spec.center_fraction,
                         mix64(vol.seed, 0x6576616cull));  // "eval"
    vol.noise_sigma = float(spec.noise_sigma);
    return vol;
}

void write_volume(const std::string& path, const PhantomVolume& vol) {
    check_little_endian();
    std::string payload;
    put_u32(payload, uint32_t(vol.num_slices()));
    put_u32(payload, uint32_t(vol.coils()));
    put_u32(payload, uint32_t(vol.height()));
    put_u32(payload, uint32_t(vol.width()));
    put_f32(payload, vol.slices.re.data);
    put_f32(payload, vol.slices.im.data);
    put_f32(payload, vol.maps.maps.re.data);
    put_f32(payload, vol.maps.maps.im.data);
    put_f32(payload, vol.kspace.re.data);
    put_f32(payload, vol.kspace.im.data);
    payload.append(reinterpret_cast<const char*>(vol.mask.cols.data()), vol.mask.cols.size());

    std::string buf(kMagic, 8);
    buf += payload;
    put_u32(buf, crc32(payload.data(), payload.size()));
    write_file(path, buf);
}

void write_dataset(const std::string& dir, const DatasetSpec& spec) {
    fs::create_directories(dir);
    json manifest;
    manifest["version"] = kVersion;
    manifest["volume_count"] = spec.volumes;
    json entries = json::array();
    for (int64_t id = 0; id < spec.volumes; ++id) {
        PhantomVolume vol = make_volume(spec, id);
        const std::string file = sstr("vol_", id, ".bin");
        write_volume((fs::path(dir) / file).string(), vol);
        entries.push_back({{"id", id},
                           {"seed", vol.seed},
                           {"slices", spec.slices},
                           {"coils", spec.coils},
                           {"height", spec.height},
                           {"width", spec.width},
                           {"acceleration", spec.acceleration},
                           {"center_fraction", spec.center_fraction},
                           {"noise_sigma", spec.noise_sigma},
                           {"file", file}});
    }
    manifest["volumes"] = entries;
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw DataError(sstr("cannot write manifest in ", dir));
    f << manifest.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::string& dir) {
    const std::string path = (fs::path(dir) / "manifest.json").string();
    std::ifstream f(path);
    if (!f) throw DataError(sstr("cannot open ", path));
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw DataError(sstr("bad manifest ", path, ": ", e.what()));
    }
    DatasetManifest m;
    m.version = j.value("version", "");
    if (m.version != kVersion)
        throw DataError(sstr("manifest version mismatch in ", path, ": expected ", kVersion, ", got '",
                             m.version, "'"));
    const int64_t count = j.value("volume_count", int64_t(-1));
    for (const auto& e : j.at("volumes")) {
        ManifestEntry me;
        me.id = e.at("id").get<int64_t>();
        me.seed = e.at("seed").get<uint64_t>();
        me.slices = e.at("slices").get<int64_t>();
        me.coils = e.at("coils").get<int64_t>();
        me.height = e.at("height").get<int64_t>();
        me.width = e.at("width").get<int64_t>();
        me.acceleration = e.at("acceleration").get<double>();
        me.center_fraction = e.at("center_fraction").get<double>();
        me.noise_sigma = e.at("noise_sigma").get<double>();
        me.file = e.at("file").get<std::string>();
        m.entries.push_back(std::move(me));
    }
    if (count != int64_t(m.entries.size()))
        throw DataError(sstr("manifest volume_count ", count, " != listed volumes ", m.entries.size()));
    return m;
}

PhantomVolume read_volume(const std::string& path, const ManifestEntry& entry) {
    check_little_endian();
    const std::string buf = read_file(path);
    if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw DataError(sstr("version mismatch in ", path, ": bad magic, expected HUMUSDS1"));
    if (buf.size() < 12) throw DataError(sstr("truncated volume file ", path));

    // verify trailing CRC over the payload (everything between magic and CRC)
    const size_t payload_len = buf.size() - 8 - 4;
    const uint32_t stored = uint32_t(uint8_t(buf[buf.size() - 4])) |
                            uint32_t(uint8_t(buf[buf.size() - 3])) << 8 |
                            uint32_t(uint8_t(buf[buf.size() - 2])) << 16 |
                            uint32_t(uint8_t(buf[buf.size() - 1])) << 24;
    const uint32_t actual = crc32(buf.data() + 8, payload_len);
    if (stored != actual)
        throw DataError(sstr("checksum failure in ", path, ": stored ", stored, ", computed ", actual));

    Reader r{buf, 8, path};
    const int64_t K = r.u32(), N = r.u32(), H = r.u32(), W = r.u32();
    if (K != entry.slices || N != entry.coils || H != entry.height || W != entry.width)
        throw DataError(sstr("volume header ", K, "x", N, "x", H, "x", W, " in ", path,
                             " disagrees with manifest"));

    PhantomVolume vol;
    vol.id = entry.id;
    vol.seed = entry.seed;
    vol.noise_sigma = float(entry.noise_sigma);
    vol.slices = CArray<float>(Shape{K, H, W});
    vol.maps.maps = CArray<float>(Shape{N, H, W});
    vol.kspace = CArray<float>(Shape{K, N, H, W});
    r.f32(vol.slices.re.data, size_t(K * H * W));
    r.f32(vol.slices.im.data, size_t(K * H * W));
    r.f32(vol.maps.maps.re.data, size_t(N * H * W));
    r.f32(vol.maps.maps.im.data, size_t(N * H * W));
    r.f32(vol.kspace.re.data, size_t(K * N * H * W));
    r.f32(vol.kspace.im.data, size_t(K * N * H * W));
    std::vector<uint8_t> cols;
    r.bytes(cols, size_t(W));
    if (r.pos != buf.size() - 4)
        throw DataError(sstr("volume file ", path, " has ", buf.size() - 4 - r.pos, " unexpected bytes"));
    vol.mask.cols = std::move(cols);
    vol.mask.acceleration = entry.acceleration;
    vol.mask.center_fraction = entry.center_fraction;
    return vol;
}

std::vector<PhantomVolume> read_dataset(const std::string& dir) {
    DatasetManifest m = read_manifest(dir);
    std::vector<PhantomVolume> vols;
    vols.reserve(m.entries.size());
    for (const auto& e : m.entries) {
        const std::string path = (fs::path(dir) / e.file).string();
        if (!fs::exists(path)) throw DataError(sstr("manifest lists missing file ", path));
        vols.push_back(read_volume(path, e));
    }
    return vols;
}

}  // namespace humus
