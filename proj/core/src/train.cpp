#include "humus/train.hpp"

#include <json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "humus/pgm.hpp"

namespace humus {

namespace fs = std::filesystem;
using nlohmann::json;

void set_thread_count(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

void Adam::init(const ParamRegistry& reg) {
    m.clear();
    v.clear();
    for (const auto& [name, p] : reg) {
        m.emplace_back(p->value.size(), 0.0f);
        v.emplace_back(p->value.size(), 0.0f);
    }
    step = 0;
}

void Adam::update(const ParamRegistry& reg, double lr, double scale) {
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, double(step));
    const double bc2 = 1.0 - std::pow(beta2, double(step));
    for (size_t pi = 0; pi < reg.size(); ++pi) {
        Param<float>& p = *reg[pi].second;
        auto& mi = m[pi];
        auto& vi = v[pi];
        for (size_t i = 0; i < p.value.size(); ++i) {
            const double g = double(p.grad[i]) * scale;
            mi[i] = float(beta1 * mi[i] + (1.0 - beta1) * g);
            vi[i] = float(beta2 * vi[i] + (1.0 - beta2) * g * g);
            const double mhat = double(mi[i]) / bc1;
            const double vhat = double(vi[i]) / bc2;
            p.value[i] -= float(lr * mhat / (std::sqrt(vhat) + eps));
        }
        p.zero_grad();
    }
}

std::pair<std::vector<int64_t>, std::vector<int64_t>> split_volumes(int64_t count,
                                                                    double val_fraction,
                                                                    uint64_t seed) {
    std::vector<int64_t> order(static_cast<size_t>(count), 0);
    for (int64_t i = 0; i < count; ++i) order[size_t(i)] = i;
    Rng rng(mix64(seed, 0x73706c69ull));  // "spli"
    for (int64_t i = count - 1; i > 0; --i)
        std::swap(order[size_t(i)], order[size_t(rng.uniform_int(0, i))]);
    int64_t n_val = int64_t(double(count) * val_fraction);
    n_val = std::max<int64_t>(1, std::min(count - 1, n_val));
    std::vector<int64_t> val(order.begin(), order.begin() + n_val);
    std::vector<int64_t> train(order.begin() + n_val, order.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {train, val};
}

GenDataSummary generate_dataset(const RunConfig& cfg) {
    validate_config(cfg);
    write_dataset(cfg.data_dir, dataset_spec(cfg));
    return {cfg.volumes, cfg.slices, cfg.coils, cfg.height, cfg.width, cfg.data_dir};
}

namespace {

void check_dataset_matches(const RunConfig& cfg, const std::vector<PhantomVolume>& vols) {
    if (int64_t(vols.size()) != cfg.volumes)
        throw DataError(sstr("dataset in ", cfg.data_dir, " has ", vols.size(),
                             " volumes, config expects ", cfg.volumes));
    for (const auto& v : vols)
        if (v.height() != cfg.height || v.width() != cfg.width || v.num_slices() != cfg.slices ||
            v.coils() != cfg.coils)
            throw DataError(sstr("volume ", v.id, " geometry ", v.num_slices(), "x", v.coils(), "x",
                                 v.height(), "x", v.width(), " disagrees with config ", cfg.slices,
                                 "x", cfg.coils, "x", cfg.height, "x", cfg.width));
}

struct SliceEval {
    double ssim = 0, psnr = 0, nmse = 0;
};

SliceEval eval_slice(UnrolledWeights<float>& model, const PhantomVolume& vol, int64_t slice,
                     Tensor<float>* recon_out = nullptr,
                     std::vector<Tensor<float>>* intermediates = nullptr) {
    const AsrSpec spec{model.cfg.adjacent, slice, vol.num_slices()};
    CArray<float> window = asr_assemble(vol.kspace, spec);
    apply_mask(window, vol.mask);
    Tape<float> tp;
    tp.set_grad_enabled(false);  // evaluation never backpropagates
    auto out = varnet_forward(tp, complex_leaf(tp, window), vol.mask, model,
                              intermediates != nullptr);
    Tensor<float> recon = out.magnitude.tensor();
    Tensor<float> target = vol.target(slice);
    const float dr = vol.data_range();
    SliceEval ev;
    ev.ssim = double(ssim_value(recon, target, dr));
    ev.psnr = psnr(recon, target, double(dr));
    ev.nmse = nmse(recon, target);
    if (recon_out) *recon_out = std::move(recon);
    if (intermediates) *intermediates = std::move(out.intermediates);
    return ev;
}

double train_example(UnrolledWeights<float>& model, const PhantomVolume& vol, int64_t slice,
                     const Mask& mask) {
    const AsrSpec spec{model.cfg.adjacent, slice, vol.num_slices()};
    CArray<float> window = asr_assemble(vol.kspace, spec);
    apply_mask(window, mask);
    Tape<float> tp;
    auto out = varnet_forward(tp, complex_leaf(tp, window), mask, model);
    Tensor<float> target = vol.target(slice);
    Var<float> loss = ssim_loss(out.magnitude, tp.leaf(target), vol.data_range());
    const double l = double(loss.scalar());
    if (!std::isfinite(l))
        throw NumericError(sstr("training loss is not finite (volume ", vol.id, ", slice ", slice, ")"));
    tp.backward(loss);
    return l;
}

CheckpointState make_checkpoint(const RunConfig& cfg, const ParamRegistry& reg, const Adam& adam,
                                int64_t epoch, double best_ssim) {
    CheckpointState st;
    st.config = cfg;
    st.epoch = epoch;
    st.adam_step = adam.step;
    st.best_val_ssim = best_ssim;
    for (size_t pi = 0; pi < reg.size(); ++pi) {
        const auto& [name, p] = reg[pi];
        st.records.emplace(name, p->tensor_like());
        st.records.emplace("adam.m." + name, Tensor<float>(p->shape, adam.m[pi]));
        st.records.emplace("adam.v." + name, Tensor<float>(p->shape, adam.v[pi]));
    }
    return st;
}

void restore_adam(const CheckpointState& st, const ParamRegistry& reg, Adam& adam) {
    adam.init(reg);
    adam.step = st.adam_step;
    for (size_t pi = 0; pi < reg.size(); ++pi) {
        const auto& name = reg[pi].first;
        auto mi = st.records.find("adam.m." + name);
        auto vi = st.records.find("adam.v." + name);
        if (mi == st.records.end() || vi == st.records.end())
            throw DataError(sstr("checkpoint is missing optimizer state for '", name, "'"));
        adam.m[pi] = mi->second.data;
        adam.v[pi] = vi->second.data;
    }
}

UnrolledWeights<float> build_model(const RunConfig& cfg) {
    Rng rng(mix64(cfg.seed, 0x696e6974ull));  // "init"
    return make_varnet<float>(rng, varnet_config(cfg));
}

}  // namespace

TrainOutcome run_training(const RunConfig& cfg, const TrainOptions& opts) {
    tune_allocator_for_graphs();
    validate_config(cfg);
    auto vols = read_dataset(cfg.data_dir);
    check_dataset_matches(cfg, vols);
    auto [train_idx, val_idx] = split_volumes(cfg.volumes, cfg.val_fraction, cfg.seed);

    UnrolledWeights<float> model = build_model(cfg);
    ParamRegistry reg = collect_params(model);
    Adam adam;
    adam.init(reg);

    fs::create_directories(cfg.out_dir);
    TrainOutcome outcome;
    outcome.log_path = (fs::path(cfg.out_dir) / "train.log").string();
    outcome.best_checkpoint = (fs::path(cfg.out_dir) / "best.ckpt").string();
    outcome.last_checkpoint = (fs::path(cfg.out_dir) / "last.ckpt").string();

    int64_t start_epoch = 0;
    double best_ssim = 0;
    if (!opts.resume_from.empty()) {
        CheckpointState st = load_checkpoint(opts.resume_from);
        restore_params(st, reg);
        restore_adam(st, reg, adam);
        start_epoch = st.epoch;
        best_ssim = st.best_val_ssim;
    }

    std::ofstream log(outcome.log_path,
                      start_epoch > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError(sstr("cannot write ", outcome.log_path));

    // no-learning baseline on the fixed validation masks
    {
        double zf = 0;
        int64_t n = 0;
        for (int64_t vi : val_idx) {
            const auto& vol = vols[size_t(vi)];
            for (int64_t s = 0; s < vol.num_slices(); ++s) {
                auto z = zero_filled_magnitude(vol.slice_kspace(s), vol.mask);
                zf += double(ssim_value(z, vol.target(s), vol.data_range()));
                ++n;
            }
        }
        outcome.zero_filled_val_ssim = zf / double(std::max<int64_t>(1, n));
    }

    uint64_t val_mask_hash = 0x12345;
    for (int64_t vi : val_idx) val_mask_hash = mix64(val_mask_hash, mask_hash(vols[size_t(vi)].mask));

    // (volume, slice) pairs over the training split
    std::vector<std::pair<int64_t, int64_t>> examples;
    for (int64_t vi : train_idx)
        for (int64_t s = 0; s < cfg.slices; ++s) examples.emplace_back(vi, s);

    for (int64_t epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = epoch > cfg.lr_drop_epoch ? cfg.lr / cfg.lr_drop_factor : cfg.lr;

        // fresh undersampling pattern per volume each epoch
        std::map<int64_t, Mask> epoch_masks;
        for (int64_t vi : train_idx)
            epoch_masks.emplace(vi, make_mask(cfg.width, cfg.acceleration, cfg.center_fraction,
                                              mix64(cfg.seed, 0x74726d6bull, /*"trmk"*/
                                                    mix64(uint64_t(epoch), uint64_t(vi)))));

        std::vector<std::pair<int64_t, int64_t>> order = examples;
        Rng shuffle_rng(mix64(cfg.seed, 0x6f726472ull, uint64_t(epoch)));  // "ordr"
        for (int64_t i = int64_t(order.size()) - 1; i > 0; --i)
            std::swap(order[size_t(i)], order[size_t(shuffle_rng.uniform_int(0, i))]);

        double loss_sum = 0;
        int64_t batch_count = 0;
        for (size_t i = 0; i < order.size();) {
            const size_t batch_end = std::min(order.size(), i + size_t(cfg.batch_size));
            const double batch_n = double(batch_end - i);
            for (; i < batch_end; ++i) {
                const auto& [vi, s] = order[i];
                loss_sum += train_example(model, vols[size_t(vi)], s, epoch_masks.at(vi));
            }
            adam.update(reg, lr, 1.0 / batch_n);
            ++batch_count;
        }
        (void)batch_count;
        const double train_loss = loss_sum / double(order.size());

        double vssim = 0, vpsnr = 0, vnmse = 0;
        int64_t vn = 0;
        for (int64_t vi : val_idx) {
            const auto& vol = vols[size_t(vi)];
            for (int64_t s = 0; s < vol.num_slices(); ++s) {
                SliceEval ev = eval_slice(model, vol, s);
                vssim += ev.ssim;
                vpsnr += ev.psnr;
                vnmse += ev.nmse;
                ++vn;
            }
        }
        vssim /= double(vn);
        vpsnr /= double(vn);
        vnmse /= double(vn);

        EpochLog el;
        el.epoch = epoch;
        el.lr = lr;
        el.train_loss = train_loss;
        el.val_ssim = vssim;
        el.val_psnr = vpsnr;
        el.val_nmse = vnmse;
        for (const auto& mu : model.mu) {
            if (!std::isfinite(double(mu.value[0])))
                throw NumericError("step size mu became non-finite");
            el.mu.push_back(double(mu.value[0]));
        }
        el.val_mask_hash = val_mask_hash;
        el.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        outcome.epochs.push_back(el);

        json line = {{"epoch", el.epoch},
                     {"lr", el.lr},
                     {"train_loss", el.train_loss},
                     {"val_ssim", el.val_ssim},
                     {"val_psnr", el.val_psnr},
                     {"val_nmse", el.val_nmse},
                     {"mu", el.mu},
                     {"val_mask_hash", el.val_mask_hash}};
        log << line.dump() << "\n";
        log.flush();
        if (!opts.quiet)
            std::cout << "epoch " << el.epoch << "  lr " << el.lr << "  loss " << el.train_loss
                      << "  val_ssim " << el.val_ssim << "  (" << el.seconds << "s)\n";

        save_checkpoint(outcome.last_checkpoint, make_checkpoint(cfg, reg, adam, epoch, best_ssim));
        if (vssim > best_ssim) {
            best_ssim = vssim;
            save_checkpoint(outcome.best_checkpoint,
                            make_checkpoint(cfg, reg, adam, epoch, best_ssim));
        }
    }
    outcome.best_val_ssim = best_ssim;
    return outcome;
}

MetricReport evaluate_checkpoint(const std::string& checkpoint_path, const std::string& data_dir,
                                 const std::string& images_dir) {
    tune_allocator_for_graphs();
    CheckpointState st = load_checkpoint(checkpoint_path);
    RunConfig cfg = st.config;
    cfg.data_dir = data_dir;
    auto vols = read_dataset(data_dir);
    check_dataset_matches(cfg, vols);
    UnrolledWeights<float> model = build_model(cfg);
    ParamRegistry reg = collect_params(model);
    restore_params(st, reg);

    auto [train_idx, val_idx] = split_volumes(cfg.volumes, cfg.val_fraction, cfg.seed);
    (void)train_idx;
    if (!images_dir.empty()) fs::create_directories(images_dir);

    MetricReport report;
    double dr_sum = 0;
    for (int64_t vi : val_idx) {
        const auto& vol = vols[size_t(vi)];
        dr_sum += double(vol.data_range());
        for (int64_t s = 0; s < vol.num_slices(); ++s) {
            Tensor<float> recon;
            SliceEval ev = eval_slice(model, vol, s, &recon);
            report.add({ev.ssim, ev.psnr, ev.nmse});
            if (!images_dir.empty()) {
                // side by side: target | zero-filled | reconstruction
                Tensor<float> target = vol.target(s);
                Tensor<float> zf = zero_filled_magnitude(vol.slice_kspace(s), vol.mask);
                const int64_t h = target.shape[0], w = target.shape[1];
                Tensor<float> strip(Shape{h, 3 * w});
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        strip.data[size_t(y * 3 * w + x)] = target.data[size_t(y * w + x)];
                        strip.data[size_t(y * 3 * w + w + x)] = zf.data[size_t(y * w + x)];
                        strip.data[size_t(y * 3 * w + 2 * w + x)] = recon.data[size_t(y * w + x)];
                    }
                write_pgm16((fs::path(images_dir) / sstr("vol", vol.id, "_s", s, ".pgm")).string(),
                            strip);
            }
        }
    }
    report.data_range = val_idx.empty() ? 0.0 : dr_sum / double(val_idx.size());
    report.finalize();
    return report;
}

ReconstructOutcome reconstruct_volume(const std::string& checkpoint_path,
                                      const std::string& volume_file, int64_t slice,
                                      const std::string& out_dir, bool dump_cascades) {
    CheckpointState st = load_checkpoint(checkpoint_path);
    UnrolledWeights<float> model = build_model(st.config);
    ParamRegistry reg = collect_params(model);
    restore_params(st, reg);

    const fs::path vol_path(volume_file);
    DatasetManifest manifest = read_manifest(vol_path.parent_path().string());
    const ManifestEntry* entry = nullptr;
    for (const auto& e : manifest.entries)
        if (e.file == vol_path.filename().string()) entry = &e;
    if (!entry)
        throw DataError(sstr("manifest in ", vol_path.parent_path().string(), " does not list ",
                             vol_path.filename().string()));
    PhantomVolume vol = read_volume(volume_file, *entry);
    if (slice < 0 || slice >= vol.num_slices())
        throw ConfigError(sstr("slice ", slice, " out of range [0,", vol.num_slices(), ")"));

    fs::create_directories(out_dir);
    ReconstructOutcome out;
    json scales = json::object();
    auto emit = [&](const std::string& name, const Tensor<float>& img) {
        const std::string path = (fs::path(out_dir) / (name + ".pgm")).string();
        auto [lo, hi] = write_pgm16(path, img);
        scales[name + ".pgm"] = {{"min", lo}, {"max", hi}};
        out.files.push_back(path);
    };

    emit("ground_truth", vol.target(slice));
    emit("zero_filled", zero_filled_magnitude(vol.slice_kspace(slice), vol.mask));
    Tensor<float> recon;
    std::vector<Tensor<float>> intermediates;
    eval_slice(model, vol, slice, &recon, dump_cascades ? &intermediates : nullptr);
    for (size_t t = 0; t < intermediates.size(); ++t)
        emit(sstr("cascade_", t + 1 < 10 ? "0" : "", t + 1), intermediates[t]);
    emit("final", recon);

    const std::string sidecar = (fs::path(out_dir) / "scales.json").string();
    std::ofstream sf(sidecar);
    sf << scales.dump(2) << "\n";
    out.files.push_back(sidecar);
    return out;
}

}  // namespace humus
