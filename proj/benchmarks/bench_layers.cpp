#include <benchmark/benchmark.h>

#include "glowflow/layers.hpp"
#include "glowflow/rng.hpp"
#include "glowflow/tensor.hpp"

using namespace glow;

namespace {

Tensor4<float> random_input(int n, int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor4<float> x(n, h, w, c);
  fill_normal(x, rng, 0.0, 1.0);
  return x;
}

}  // namespace

static void BM_Conv2d3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Tensor4<float> x = random_input(8, 8, 8, c, 1);
  ConvKernel<float> k(3, 3, c, 64);
  Rng rng(2);
  fill_normal(k.w, rng, 0.0, 0.05);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(x, k));
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_Conv2d3x3)->Arg(4)->Arg(16)->Arg(64);

static void BM_ActNormForward(benchmark::State& state) {
  const Tensor4<float> x = random_input(16, 8, 8, 16, 3);
  ActNorm<float> a(16);
  Rng rng(4);
  for (auto& v : a.s) v = static_cast<float>(rng.uniform(0.5, 1.5));
  a.initialized = true;
  for (auto _ : state) {
    benchmark::DoNotOptimize(a.forward(x));
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_ActNormForward);

static void BM_InvConvForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const bool lu = state.range(1) != 0;
  Rng rng(5);
  const auto conv = InvConv<float>::random_rotation_init(
      c, lu ? InvConvParam::lu : InvConvParam::dense, rng);
  const Tensor4<float> x = random_input(16, 8, 8, c, 6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv.forward(x));
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_InvConvForward)
    ->Args({8, 0})
    ->Args({8, 1})
    ->Args({32, 0})
    ->Args({32, 1});

static void BM_InvConvInverse(benchmark::State& state) {
  const bool lu = state.range(0) != 0;
  Rng rng(7);
  const auto conv = InvConv<float>::random_rotation_init(
      32, lu ? InvConvParam::lu : InvConvParam::dense, rng);
  const Tensor4<float> y = random_input(16, 8, 8, 32, 8);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv.inverse(y));
  }
}
BENCHMARK(BM_InvConvInverse)->Arg(0)->Arg(1);

static void BM_CouplingForward(benchmark::State& state) {
  const bool affine = state.range(0) != 0;
  Rng rng(9);
  Coupling<float> cp = Coupling<float>::init(
      16, 64, affine ? CouplingMode::affine : CouplingMode::additive, rng);
  fill_normal(cp.net2.w, rng, 0.0, 0.05);
  const Tensor4<float> x = random_input(16, 8, 8, 16, 10);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cp.forward(x));
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_CouplingForward)->Arg(0)->Arg(1);

static void BM_Squeeze(benchmark::State& state) {
  const Tensor4<float> x = random_input(16, 16, 16, 8, 11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(squeeze(x));
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_Squeeze);
