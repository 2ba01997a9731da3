#include <benchmark/benchmark.h>

#include <humus/humus_block.hpp>
#include <humus/metrics.hpp>
#include <humus/phantom.hpp>
#include <humus/varnet.hpp>

using namespace humus;

namespace {

void BM_Conv2dForward(benchmark::State& state) {
    const int64_t c = state.range(0);
    Rng rng(1);
    Tape<float> warm;
    auto x = Tensor<float>::random_uniform(Shape{1, c, 64, 64}, rng);
    auto w = Tensor<float>::random_uniform(Shape{c, c, 3, 3}, rng);
    auto b = Tensor<float>::random_uniform(Shape{c}, rng);
    for (auto _ : state) {
        Tape<float> tp;
        tp.set_grad_enabled(false);
        auto y = ops::conv2d(tp.leaf(x), tp.leaf(w), tp.leaf(b), 1, 1);
        benchmark::DoNotOptimize(y.values().data());
    }
    state.SetItemsProcessed(state.iterations() * 64 * 64 * c * c * 9);
}
BENCHMARK(BM_Conv2dForward)->Arg(6)->Arg(12)->Arg(24);

void BM_Fft2cRoundTrip(benchmark::State& state) {
    const int64_t n = state.range(0);
    Rng rng(2);
    CArray<float> x(Shape{n, n});
    for (auto& v : x.re.data) v = float(rng.uniform(-1, 1));
    for (auto _ : state) {
        fft2c(x);
        fft2c(x, true);
        benchmark::DoNotOptimize(x.re.data.data());
    }
    state.SetItemsProcessed(state.iterations() * n * n * 2);
}
BENCHMARK(BM_Fft2cRoundTrip)->Arg(64)->Arg(256);

void BM_WindowAttention(benchmark::State& state) {
    Rng rng(3);
    auto p = make_stl<float>(rng, 12, 3, 4, 0);
    auto tokens = Tensor<float>::random_uniform(Shape{32 * 32, 12}, rng);
    for (auto _ : state) {
        Tape<float> tp;
        tp.set_grad_enabled(false);
        auto out = window_attention(tp, TokenGrid<float>{tp.leaf(tokens), 32, 32}, p);
        benchmark::DoNotOptimize(out.tokens.values().data());
    }
}
BENCHMARK(BM_WindowAttention);

void BM_DenoiserBlockForward(benchmark::State& state) {
    Rng rng(4);
    HumusBlockConfig cfg;
    cfg.in_channels = 6;
    cfg.h = cfg.w = 64;
    cfg.d_high = 6;
    auto block = make_humus_block<float>(rng, cfg);
    auto x = Tensor<float>::random_uniform(Shape{6, 64, 64}, rng);
    for (auto _ : state) {
        Tape<float> tp;
        tp.set_grad_enabled(false);
        auto y = humus_block_forward(tp, tp.leaf(x), block);
        benchmark::DoNotOptimize(y.values().data());
    }
}
BENCHMARK(BM_DenoiserBlockForward);

void BM_TrainStep(benchmark::State& state) {
    Rng rng(5);
    VarnetConfig vc;
    vc.cascades = 2;
    vc.adjacent = 1;
    vc.sme_channels = 8;
    vc.denoiser.variant = DenoiserVariant::humus;
    vc.denoiser.h = vc.denoiser.w = 64;
    vc.denoiser.d_high = 6;
    auto net = make_varnet<float>(rng, vc);
    auto slices = generate_phantom<float>(6, 64, 64, 3);
    auto maps = generate_coil_maps<float>(6, 4, 64, 64);
    auto kspace = simulate_acquisition(slices, maps, 0.005, 6);
    auto mask = make_mask(64, 4.0, 0.08, 6);
    auto window = asr_assemble(kspace, AsrSpec{1, 1, 3});
    apply_mask(window, mask);
    auto target = slice_magnitude(slices, 1);
    for (auto _ : state) {
        Tape<float> tp;
        auto out = varnet_forward(tp, complex_leaf(tp, window), mask, net);
        auto loss = ssim_loss(out.magnitude, tp.leaf(target), 1.0f);
        tp.backward(loss);
        benchmark::DoNotOptimize(loss.scalar());
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
    humus::tune_allocator_for_graphs();
    ::benchmark::Initialize(&argc, argv);
    if (::benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    ::benchmark::RunSpecifiedBenchmarks();
    ::benchmark::Shutdown();
    return 0;
}
