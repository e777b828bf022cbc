#include <benchmark/benchmark.h>

#include "glowflow/model.hpp"
#include "glowflow/objective.hpp"
#include "glowflow/train.hpp"
#include "glowflow/verify.hpp"

using namespace glow;

namespace {

GlowConfig desk_config(PermVariant pv) {
  GlowConfig cfg;
  cfg.K = 4;
  cfg.L = 2;
  cfg.coupling = CouplingMode::affine;
  cfg.perm = pv;
  cfg.hidden_channels = 32;
  cfg.input = {8, 8, 1};
  cfg.n_bits = 3;
  return cfg;
}

}  // namespace

static void BM_Encode(benchmark::State& state) {
  const PermVariant pv = static_cast<PermVariant>(state.range(0));
  FlowModel<float> m = FlowModel<float>::build(desk_config(pv), 1);
  verify::randomize_model(m, 2, 0.05);
  Rng rng(3);
  Tensor4<float> x(32, 8, 8, 1);
  fill_normal(x, rng, 0.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.encode(x));
  }
  state.SetItemsProcessed(state.iterations() * x.n());
}
BENCHMARK(BM_Encode)
    ->Arg(static_cast<int>(PermVariant::reverse))
    ->Arg(static_cast<int>(PermVariant::shuffle))
    ->Arg(static_cast<int>(PermVariant::invconv));

static void BM_Decode(benchmark::State& state) {
  FlowModel<float> m =
      FlowModel<float>::build(desk_config(PermVariant::invconv), 4);
  verify::randomize_model(m, 5, 0.05);
  const LatentRecord<float> z = m.sample_latents(32, 0.7, 6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.decode(z));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Decode);

static void BM_TrainStep(benchmark::State& state) {
  FlowModel<float> m =
      FlowModel<float>::build(desk_config(PermVariant::invconv), 7);
  const Dataset ds = toy_generate(ToyKind::checker8x8, 256, 8);
  Batcher batcher(ds, 32, 9);
  Rng noise(10);
  {
    Rng ddi_noise(11);
    ddi_pass(m, dequantize<float>(batcher.peek_first(), 3, ddi_noise));
  }
  AdamState<float> adam = AdamState<float>::init(m);
  auto grads = m.zero_grads();
  for (auto _ : state) {
    const Tensor4<float> x = dequantize<float>(batcher.next(), 3, noise);
    grads = m.zero_grads();
    benchmark::DoNotOptimize(nll_loss_grad(m, x, grads));
    adam_step(m, grads, adam);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep);

static void BM_LogProb(benchmark::State& state) {
  FlowModel<float> m =
      FlowModel<float>::build(desk_config(PermVariant::invconv), 12);
  verify::randomize_model(m, 13, 0.05);
  Rng rng(14);
  Tensor4<float> x(32, 8, 8, 1);
  fill_normal(x, rng, 0.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.log_prob(x));
  }
  state.SetItemsProcessed(state.iterations() * x.n());
}
BENCHMARK(BM_LogProb);
