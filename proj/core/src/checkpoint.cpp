#include "humus/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace humus {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'U', 'M', 'U', 'S', 'C', 'P', '1'};

void put_u32(std::string& buf, uint32_t v) {
    char b[4] = {char(v & 0xFF), char((v >> 8) & 0xFF), char((v >> 16) & 0xFF), char((v >> 24) & 0xFF)};
    buf.append(b, 4);
}

uint32_t read_u32(const std::string& buf, size_t& pos, const std::string& path) {
    if (pos + 4 > buf.size()) throw DataError(sstr("truncated checkpoint ", path));
    uint32_t v = uint32_t(uint8_t(buf[pos])) | uint32_t(uint8_t(buf[pos + 1])) << 8 |
                 uint32_t(uint8_t(buf[pos + 2])) << 16 | uint32_t(uint8_t(buf[pos + 3])) << 24;
    pos += 4;
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointState& state) {
    json echo;
    echo["config"] = json::parse(config_to_json(state.config));
    echo["state"] = {{"epoch", state.epoch},
                     {"adam_step", state.adam_step},
                     {"best_val_ssim", state.best_val_ssim}};
    const std::string echo_text = echo.dump();

    std::string payload;
    put_u32(payload, uint32_t(echo_text.size()));
    payload += echo_text;
    for (const auto& [name, tensor] : state.records) {
        put_u32(payload, uint32_t(name.size()));
        payload += name;
        put_u32(payload, uint32_t(tensor.shape.size()));
        for (int64_t e : tensor.shape) put_u32(payload, uint32_t(e));
        payload.append(reinterpret_cast<const char*>(tensor.data.data()), tensor.data.size() * 4);
    }

    std::string buf(kMagic, 8);
    buf += payload;
    put_u32(buf, crc32(payload.data(), payload.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(sstr("cannot write checkpoint ", path));
    f.write(buf.data(), long(buf.size()));
    if (!f) throw DataError(sstr("short write to checkpoint ", path));
}

CheckpointState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(sstr("cannot open checkpoint ", path));
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw DataError(sstr("version mismatch in ", path, ": bad magic, expected HUMUSCP1"));
    const size_t payload_len = buf.size() - 8 - 4;
    size_t crc_pos = buf.size() - 4;
    const uint32_t stored = read_u32(buf, crc_pos, path);
    const uint32_t actual = crc32(buf.data() + 8, payload_len);
    if (stored != actual)
        throw DataError(sstr("checksum failure in ", path, ": stored ", stored, ", computed ", actual));

    size_t pos = 8;
    const uint32_t echo_len = read_u32(buf, pos, path);
    if (pos + echo_len > buf.size() - 4) throw DataError(sstr("truncated checkpoint ", path));
    const std::string echo_text = buf.substr(pos, echo_len);
    pos += echo_len;

    CheckpointState state;
    json echo;
    try {
        echo = json::parse(echo_text);
    } catch (const json::exception& e) {
        throw DataError(sstr("bad checkpoint json echo in ", path, ": ", e.what()));
    }
    state.config = config_from_json(echo.at("config").dump());
    state.epoch = echo.at("state").at("epoch").get<int64_t>();
    state.adam_step = echo.at("state").at("adam_step").get<int64_t>();
    state.best_val_ssim = echo.at("state").at("best_val_ssim").get<double>();

    const size_t end = buf.size() - 4;
    while (pos < end) {
        const uint32_t name_len = read_u32(buf, pos, path);
        if (pos + name_len > end) throw DataError(sstr("truncated checkpoint ", path));
        std::string name = buf.substr(pos, name_len);
        pos += name_len;
        const uint32_t rank = read_u32(buf, pos, path);
        Shape shape;
        int64_t count = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            shape.push_back(int64_t(read_u32(buf, pos, path)));
            count *= shape.back();
        }
        if (pos + size_t(count) * 4 > end) throw DataError(sstr("truncated checkpoint ", path));
        Tensor<float> t(shape);
        std::memcpy(t.data.data(), buf.data() + pos, size_t(count) * 4);
        pos += size_t(count) * 4;
        state.records.emplace(std::move(name), std::move(t));
    }
    return state;
}

void restore_params(const CheckpointState& state, const ParamRegistry& reg) {
    for (const auto& [name, param] : reg) {
        auto it = state.records.find(name);
        if (it == state.records.end())
            throw DataError(sstr("checkpoint is missing parameter '", name, "'"));
        if (it->second.shape != param->shape)
            throw DataError(sstr("checkpoint parameter '", name, "' has shape ",
                                 shape_str(it->second.shape), ", model expects ",
                                 shape_str(param->shape)));
        param->value = it->second.data;
    }
}

}  // namespace humus
