#include <benchmark/benchmark.h>

#include "deid/facegen.hpp"
#include "deid/losses.hpp"
#include "deid/msssim.hpp"
#include "deid/nets.hpp"
#include "deid/ops.hpp"
#include "deid/rng.hpp"

using namespace deid;

namespace {

Tensor randt(Rng& rng, std::vector<std::size_t> shape, double s = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * s;
    return t;
}

nets::NetConfig bench_net() {
    nets::NetConfig cfg;
    cfg.resolution = 64;
    return cfg;
}

void BM_Conv2dForward(benchmark::State& state) {
    Rng rng(1);
    Variable x = Variable::constant(randt(rng, {4, 16, 32, 32}));
    Variable w = Variable::constant(randt(rng, {16, 16, 3, 3}, 0.1));
    for (auto _ : state) {
        Variable y = ops::conv2d(x, w, 1, 1);
        benchmark::DoNotOptimize(y.value()[0]);
    }
}
BENCHMARK(BM_Conv2dForward)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
    Rng rng(2);
    Tensor xt = randt(rng, {4, 16, 32, 32});
    Tensor wt = randt(rng, {16, 16, 3, 3}, 0.1);
    for (auto _ : state) {
        Variable x = Variable::leaf(xt, true);
        Variable w = Variable::leaf(wt, true);
        Variable y = ops::mean_all(ops::conv2d(x, w, 1, 1));
        y.backward();
        benchmark::DoNotOptimize(w.grad()[0]);
    }
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMillisecond);

void BM_RenderFace(benchmark::State& state) {
    auto factors = facegen::sample_factors(3, 1, facegen::SampleMode::Independent);
    std::size_t r = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        auto out = facegen::render_face(factors[0], r);
        benchmark::DoNotOptimize(out.image[0]);
    }
}
BENCHMARK(BM_RenderFace)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_GeneratorSynthesize(benchmark::State& state) {
    Rng rng(4);
    nets::Generator g(bench_net(), rng);
    Variable w = Variable::constant(randt(rng, {1, bench_net().d_w}));
    autograd::NoGradGuard guard;
    for (auto _ : state) {
        Variable img = g.synthesize(w);
        benchmark::DoNotOptimize(img.value()[0]);
    }
}
BENCHMARK(BM_GeneratorSynthesize)->Unit(benchmark::kMillisecond);

void BM_MappingForward(benchmark::State& state) {
    Rng rng(5);
    nets::MappingNetwork m(bench_net(), rng);
    Variable z = Variable::constant(randt(rng, {8, bench_net().d_id + bench_net().d_expr}));
    autograd::NoGradGuard guard;
    for (auto _ : state) {
        Variable w = m.forward(z);
        benchmark::DoNotOptimize(w.value()[0]);
    }
}
BENCHMARK(BM_MappingForward)->Unit(benchmark::kMicrosecond);

void BM_MsSsim(benchmark::State& state) {
    Rng rng(6);
    Variable a = Variable::constant(randt(rng, {1, 3, 64, 64}, 0.3));
    Variable b = Variable::constant(randt(rng, {1, 3, 64, 64}, 0.3));
    autograd::NoGradGuard guard;
    for (auto _ : state) {
        Variable s = msssim::ms_ssim(a, b, 3);
        benchmark::DoNotOptimize(s.value()[0]);
    }
}
BENCHMARK(BM_MsSsim)->Unit(benchmark::kMillisecond);

void BM_ClipLatent(benchmark::State& state) {
    Rng rng(7);
    Variable w = Variable::constant(randt(rng, {64, 128}));
    Variable wa = Variable::constant(randt(rng, {64, 128}, 2.0));
    for (auto _ : state) {
        Variable c = losses::clip_latent(wa, w, 0.5);
        benchmark::DoNotOptimize(c.value()[0]);
    }
}
BENCHMARK(BM_ClipLatent)->Unit(benchmark::kMicrosecond);

} // namespace

BENCHMARK_MAIN();
