// Microbenchmarks for the hot paths: the frequency filters, one conditioned
// network forward, a full optimizer step, sampler integration, and the
// sequence loss. Run ./benchmarks/bench_core --benchmark_filter=<regex> to
// narrow the set.

#include <benchmark/benchmark.h>

#include "docdpm/diffusion.hpp"
#include "docdpm/freq.hpp"
#include "docdpm/ocr.hpp"

using namespace docdpm;

namespace {

void BM_LowpassFilter(benchmark::State& state) {
    auto fp = make_filter_pair();
    Rng rng(1);
    auto x = rng.uniform_tensor<float>({1, 1, static_cast<int>(state.range(0)),
                                        static_cast<int>(state.range(0))},
                                       -1.0, 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(filter2d_reflect(x, fp.low));
    state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_LowpassFilter)->Arg(64)->Arg(128)->Arg(256);

void BM_DenoiserForward(benchmark::State& state) {
    auto models = make_models<float>(ModelConfig{}, 3);
    Rng rng(4);
    int p = static_cast<int>(state.range(0));
    auto r_t = rng.normal_tensor<float>({1, 1, p, p});
    auto cond = rng.uniform_tensor<float>({1, 1, p, p}, -1.0, 1.0);
    auto denoise = model_denoiser<float>(models.den_net, cond);
    for (auto _ : state) benchmark::DoNotOptimize(denoise(r_t, 50.0));
}
BENCHMARK(BM_DenoiserForward)->Arg(32)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
    auto models = make_models<float>(ModelConfig{}, 5);
    auto sched = make_linear_schedule(100, 1e-4, 0.02);
    auto fp = make_filter_pair();
    Adam<float> opt;
    Rng rng(6);
    Batch<float> batch;
    batch.gt = rng.uniform_tensor<float>({4, 1, 32, 32}, -1.0, 1.0);
    batch.degraded = rng.uniform_tensor<float>({4, 1, 32, 32}, -1.0, 1.0);
    for (auto _ : state)
        benchmark::DoNotOptimize(train_step(models, opt, rng, batch, sched, fp));
}
BENCHMARK(BM_TrainStep);

void BM_OdeSampler(benchmark::State& state) {
    auto models = make_models<float>(ModelConfig{}, 7);
    auto sched = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(8);
    auto y = rng.uniform_tensor<float>({1, 1, 32, 32}, -1.0, 1.0);
    SamplerSpec spec;
    spec.steps = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(restore(y, models, sched, spec, 9));
    state.SetItemsProcessed(state.iterations() * spec.steps);
}
BENCHMARK(BM_OdeSampler)->Arg(5)->Arg(20);

void BM_CtcLoss(benchmark::State& state) {
    Rng rng(10);
    int frames = static_cast<int>(state.range(0));
    int classes = static_cast<int>(default_alphabet().classes());
    Tensor<double> lp({frames, classes});
    for (int t = 0; t < frames; ++t) {
        double lse = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < classes; ++k) {
            double v = rng.normal();
            lp[static_cast<std::int64_t>(t) * classes + k] = v;
            lse = detail::log_add(lse, v);
        }
        for (int k = 0; k < classes; ++k)
            lp[static_cast<std::int64_t>(t) * classes + k] -= lse;
    }
    std::vector<int> target;
    for (int i = 0; i < 8; ++i) target.push_back(static_cast<int>(rng.uniform_int(1, 40)));
    for (auto _ : state) benchmark::DoNotOptimize(ctc_loss_value(lp, target));
}
BENCHMARK(BM_CtcLoss)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
