#include "humus/config.hpp"

#include <json.hpp>

namespace humus {

using nlohmann::json;

RunConfig config_from_toml(const TomlTable& t) {
    RunConfig c;
    c.data_dir = t.get_string("data.dir", c.data_dir);
    c.volumes = t.get_int("data.volumes", c.volumes);
    c.slices = t.get_int("data.slices", c.slices);
    c.coils = t.get_int("data.coils", c.coils);
    c.height = t.get_int("data.height", c.height);
    c.width = t.get_int("data.width", c.width);
    c.acceleration = t.get_double("data.acceleration", c.acceleration);
    c.center_fraction = t.get_double("data.center_fraction", c.center_fraction);
    c.noise_sigma = t.get_double("data.noise_sigma", c.noise_sigma);
    c.val_fraction = t.get_double("data.val_fraction", c.val_fraction);

    c.variant = t.get_string("model.variant", c.variant);
    c.d_high = t.get_int("model.d_high", c.d_high);
    c.embed_dim = t.get_int("model.embed_dim", c.embed_dim);
    c.window = t.get_int("model.window", c.window);
    c.depths = t.get_int("model.depths", c.depths);
    c.cascades = t.get_int("model.cascades", c.cascades);
    c.patch_size = t.get_int("model.patch_size", c.patch_size);
    c.adjacent = t.get_int("model.adjacent", c.adjacent);
    c.heads = t.get_int_array("model.heads", c.heads);
    c.bottleneck_heads = t.get_int("model.bottleneck_heads", c.bottleneck_heads);
    c.single_scale_blocks = t.get_int("model.single_scale_blocks", c.single_scale_blocks);
    c.single_scale_heads = t.get_int("model.single_scale_heads", c.single_scale_heads);
    c.unet_channels = t.get_int("model.unet_channels", c.unet_channels);
    c.sme_channels = t.get_int("model.sme_channels", c.sme_channels);

    c.lr = t.get_double("train.lr", c.lr);
    c.epochs = t.get_int("train.epochs", c.epochs);
    c.lr_drop_epoch = t.get_int("train.lr_drop_epoch", c.lr_drop_epoch);
    c.lr_drop_factor = t.get_double("train.lr_drop_factor", c.lr_drop_factor);
    c.batch_size = t.get_int("train.batch_size", c.batch_size);
    c.seed = uint64_t(t.get_int("train.seed", int64_t(c.seed)));

    c.out_dir = t.get_string("output.dir", c.out_dir);
    return c;
}

RunConfig load_config(const std::string& path) {
    RunConfig c = config_from_toml(TomlTable::parse_file(path));
    validate_config(c);
    return c;
}

std::string config_to_toml_text(const RunConfig& c) {
    std::ostringstream os;
    os << "[data]\n";
    os << "dir = \"" << c.data_dir << "\"\n";
    os << "volumes = " << c.volumes << "\n";
    os << "slices = " << c.slices << "\n";
    os << "coils = " << c.coils << "\n";
    os << "height = " << c.height << "\n";
    os << "width = " << c.width << "\n";
    os << "acceleration = " << c.acceleration << "\n";
    os << "center_fraction = " << c.center_fraction << "\n";
    os << "noise_sigma = " << c.noise_sigma << "\n";
    os << "val_fraction = " << c.val_fraction << "\n\n";
    os << "[model]\n";
    os << "variant = \"" << c.variant << "\"\n";
    os << "d_high = " << c.d_high << "\n";
    os << "embed_dim = " << c.embed_dim << "\n";
    os << "window = " << c.window << "\n";
    os << "depths = " << c.depths << "\n";
    os << "cascades = " << c.cascades << "\n";
    os << "patch_size = " << c.patch_size << "\n";
    os << "adjacent = " << c.adjacent << "\n";
    os << "heads = [";
    for (size_t i = 0; i < c.heads.size(); ++i) os << (i ? ", " : "") << c.heads[i];
    os << "]\n";
    os << "bottleneck_heads = " << c.bottleneck_heads << "\n";
    os << "single_scale_blocks = " << c.single_scale_blocks << "\n";
    os << "single_scale_heads = " << c.single_scale_heads << "\n";
    os << "unet_channels = " << c.unet_channels << "\n";
    os << "sme_channels = " << c.sme_channels << "\n\n";
    os << "[train]\n";
    os << "lr = " << c.lr << "\n";
    os << "epochs = " << c.epochs << "\n";
    os << "lr_drop_epoch = " << c.lr_drop_epoch << "\n";
    os << "lr_drop_factor = " << c.lr_drop_factor << "\n";
    os << "batch_size = " << c.batch_size << "\n";
    os << "seed = " << c.seed << "\n\n";
    os << "[output]\n";
    os << "dir = \"" << c.out_dir << "\"\n";
    return os.str();
}

namespace {

json config_json_obj(const RunConfig& c) {
    return json{{"data",
                 {{"dir", c.data_dir},
                  {"volumes", c.volumes},
                  {"slices", c.slices},
                  {"coils", c.coils},
                  {"height", c.height},
                  {"width", c.width},
                  {"acceleration", c.acceleration},
                  {"center_fraction", c.center_fraction},
                  {"noise_sigma", c.noise_sigma},
                  {"val_fraction", c.val_fraction}}},
                {"model",
                 {{"variant", c.variant},
                  {"d_high", c.d_high},
                  {"embed_dim", c.embed_dim},
                  {"window", c.window},
                  {"depths", c.depths},
                  {"cascades", c.cascades},
                  {"patch_size", c.patch_size},
                  {"adjacent", c.adjacent},
                  {"heads", c.heads},
                  {"bottleneck_heads", c.bottleneck_heads},
                  {"single_scale_blocks", c.single_scale_blocks},
                  {"single_scale_heads", c.single_scale_heads},
                  {"unet_channels", c.unet_channels},
                  {"sme_channels", c.sme_channels}}},
                {"train",
                 {{"lr", c.lr},
                  {"epochs", c.epochs},
                  {"lr_drop_epoch", c.lr_drop_epoch},
                  {"lr_drop_factor", c.lr_drop_factor},
                  {"batch_size", c.batch_size},
                  {"seed", c.seed}}},
                {"output", {{"dir", c.out_dir}}}};
}

}  // namespace

std::string config_to_json(const RunConfig& c) { return config_json_obj(c).dump(); }

RunConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(sstr("bad config json: ", e.what()));
    }
    RunConfig c;
    const auto& d = j.at("data");
    c.data_dir = d.at("dir").get<std::string>();
    c.volumes = d.at("volumes").get<int64_t>();
    c.slices = d.at("slices").get<int64_t>();
    c.coils = d.at("coils").get<int64_t>();
    c.height = d.at("height").get<int64_t>();
    c.width = d.at("width").get<int64_t>();
    c.acceleration = d.at("acceleration").get<double>();
    c.center_fraction = d.at("center_fraction").get<double>();
    c.noise_sigma = d.at("noise_sigma").get<double>();
    c.val_fraction = d.at("val_fraction").get<double>();
    const auto& m = j.at("model");
    c.variant = m.at("variant").get<std::string>();
    c.d_high = m.at("d_high").get<int64_t>();
    c.embed_dim = m.at("embed_dim").get<int64_t>();
    c.window = m.at("window").get<int64_t>();
    c.depths = m.at("depths").get<int64_t>();
    c.cascades = m.at("cascades").get<int64_t>();
    c.patch_size = m.at("patch_size").get<int64_t>();
    c.adjacent = m.at("adjacent").get<int64_t>();
    c.heads = m.at("heads").get<std::vector<int64_t>>();
    c.bottleneck_heads = m.at("bottleneck_heads").get<int64_t>();
    c.single_scale_blocks = m.at("single_scale_blocks").get<int64_t>();
    c.single_scale_heads = m.at("single_scale_heads").get<int64_t>();
    c.unet_channels = m.at("unet_channels").get<int64_t>();
    c.sme_channels = m.at("sme_channels").get<int64_t>();
    const auto& t = j.at("train");
    c.lr = t.at("lr").get<double>();
    c.epochs = t.at("epochs").get<int64_t>();
    c.lr_drop_epoch = t.at("lr_drop_epoch").get<int64_t>();
    c.lr_drop_factor = t.at("lr_drop_factor").get<double>();
    c.batch_size = t.at("batch_size").get<int64_t>();
    c.seed = t.at("seed").get<uint64_t>();
    c.out_dir = j.at("output").at("dir").get<std::string>();
    return c;
}

DatasetSpec dataset_spec(const RunConfig& c) {
    DatasetSpec s;
    s.volumes = c.volumes;
    s.slices = c.slices;
    s.coils = c.coils;
    s.height = c.height;
    s.width = c.width;
    s.acceleration = c.acceleration;
    s.center_fraction = c.center_fraction;
    s.noise_sigma = c.noise_sigma;
    s.seed = c.seed;
    return s;
}

VarnetConfig varnet_config(const RunConfig& c) {
    VarnetConfig v;
    v.cascades = c.cascades;
    v.adjacent = c.adjacent;
    v.sme_channels = c.sme_channels;
    v.denoiser.variant = parse_variant(c.variant);
    v.denoiser.h = c.height;
    v.denoiser.w = c.width;
    v.denoiser.d_high = c.d_high;
    v.denoiser.embed_dim = c.embed_dim;
    v.denoiser.patch_size = c.patch_size;
    v.denoiser.window = c.window;
    v.denoiser.depths = c.depths;
    v.denoiser.heads = c.heads;
    v.denoiser.bottleneck_heads = c.bottleneck_heads;
    v.denoiser.single_scale_blocks = c.single_scale_blocks;
    v.denoiser.single_scale_heads = c.single_scale_heads;
    v.denoiser.unet_channels = c.unet_channels;
    return v;
}

void validate_config(const RunConfig& c) {
    if (!is_pow2(c.height) || !is_pow2(c.width))
        throw ConfigError(sstr("config: image extents must be powers of two for the FFT, got ",
                               c.height, "x", c.width));
    if (c.height < 16 || c.width < 16)
        throw ConfigError(sstr("config: image extents must be at least 16, got ", c.height, "x",
                               c.width, " (the metrics window needs 7 pixels and the map estimator "
                               "downsamples twice)"));
    if (c.volumes < 1) throw ConfigError("config: data.volumes must be >= 1");
    if (c.slices < 1) throw ConfigError("config: data.slices must be >= 1");
    if (c.coils < 1) throw ConfigError("config: data.coils must be >= 1");
    if (c.acceleration < 1.0) throw ConfigError("config: data.acceleration must be >= 1");
    if (!(c.center_fraction > 0.0 && c.center_fraction < 1.0))
        throw ConfigError("config: data.center_fraction must be in (0,1)");
    if (mask_center_count(c.width, c.center_fraction) < 1)
        throw ConfigError(sstr("config: center_fraction ", c.center_fraction, " of width ", c.width,
                               " rounds to an empty ACS block; increase it to at least ",
                               0.5 / double(c.width)));
    if (double(c.width) / c.acceleration < double(mask_center_count(c.width, c.center_fraction)))
        throw ConfigError(sstr("config: acceleration ", c.acceleration,
                               " keeps fewer lines than the ACS block; lower it or shrink "
                               "center_fraction"));
    if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0))
        throw ConfigError("config: data.val_fraction must be in (0,1)");
    if (int64_t(double(c.volumes) * c.val_fraction) < 1)
        throw ConfigError(sstr("config: ", c.volumes, " volumes with val_fraction ", c.val_fraction,
                               " leave no validation volumes"));

    if (c.cascades < 1) throw ConfigError("config: model.cascades must be >= 1");
    if (c.adjacent < 0) throw ConfigError("config: model.adjacent must be >= 0");
    if (c.patch_size != 1 && c.patch_size != 2)
        throw ConfigError("config: model.patch_size must be 1 or 2");
    if (c.epochs < 1) throw ConfigError("config: train.epochs must be >= 1");
    if (c.batch_size < 1) throw ConfigError("config: train.batch_size must be >= 1");
    if (c.lr <= 0) throw ConfigError("config: train.lr must be positive");
    if (c.lr_drop_factor < 1.0) throw ConfigError("config: train.lr_drop_factor must be >= 1");

    // instantiating the model config runs the full divisibility checking
    VarnetConfig v = varnet_config(c);
    v.denoiser.in_channels = v.in_channels();
    switch (v.denoiser.variant) {
        case DenoiserVariant::humus: {
            if (c.height % 2 || c.width % 2)
                throw ConfigError("config: humus variant needs even image extents");
            MustConfig mc;
            mc.in_channels = 2 * c.d_high;
            mc.in_h = c.height / 2;
            mc.in_w = c.width / 2;
            mc.embed_dim = 2 * c.d_high;
            mc.depths = c.depths;
            mc.heads = c.heads;
            mc.bottleneck_heads = c.bottleneck_heads;
            mc.window = c.window;
            validate_must_config(mc);
            break;
        }
        case DenoiserVariant::un_ms:
        case DenoiserVariant::un_ms_patch2: {
            MustConfig mc;
            mc.in_channels = 12;
            mc.in_h = c.height;
            mc.in_w = c.width;
            mc.patch_size = v.denoiser.variant == DenoiserVariant::un_ms_patch2 ? 2 : c.patch_size;
            mc.embed_dim = c.embed_dim;
            mc.depths = c.depths;
            mc.heads = c.heads;
            mc.bottleneck_heads = c.bottleneck_heads;
            mc.window = c.window;
            validate_must_config(mc);
            break;
        }
        case DenoiserVariant::un_ss:
            if (c.embed_dim % c.single_scale_heads)
                throw ConfigError(sstr("config: embed_dim ", c.embed_dim, " not divisible by ",
                                       c.single_scale_heads, " heads"));
            break;
        case DenoiserVariant::unet:
            if (c.height % 4 || c.width % 4)
                throw ConfigError("config: unet-denoiser needs extents divisible by 4");
            break;
    }
}

std::vector<std::string> preset_names() {
    return {"un-ss", "un-ms", "un-ms-patch2", "humus", "unet-denoiser"};
}

RunConfig ablation_preset(const std::string& name) {
    RunConfig c;  // desk-scale defaults
    c.adjacent = 0;  // single-slice reconstruction for ablation comparisons
    c.variant = name == "humus" ? "humus" : name;
    if (name == "un-ss") {
        c.embed_dim = 12;
        c.single_scale_blocks = 3;
        c.single_scale_heads = 6;
        c.patch_size = 1;
    } else if (name == "un-ms") {
        c.embed_dim = 12;
        c.heads = {3, 6, 12};
        c.bottleneck_heads = 24;
        c.patch_size = 1;
    } else if (name == "un-ms-patch2") {
        c.embed_dim = 36;  // 3x the base dim, 2x2 patches
        c.heads = {3, 6, 12};
        c.bottleneck_heads = 24;
        c.patch_size = 2;
    } else if (name == "humus") {
        c.d_high = 6;
        c.heads = {3, 6, 12};
        c.bottleneck_heads = 24;
        c.patch_size = 1;
    } else if (name == "unet-denoiser") {
        c.unet_channels = 16;
    } else {
        throw ConfigError(sstr("unknown ablation preset '", name, "'; available: un-ss, un-ms, "
                               "un-ms-patch2, humus, unet-denoiser"));
    }
    c.out_dir = "runs/" + name;
    validate_config(c);
    return c;
}

}  // namespace humus
