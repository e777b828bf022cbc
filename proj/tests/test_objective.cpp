#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "glowflow/objective.hpp"
#include "glowflow/rng.hpp"

using namespace glow;

namespace {

IntBatch constant_batch(int n, int h, int w, int c, std::uint8_t value) {
  IntBatch b;
  b.n = n;
  b.h = h;
  b.w = w;
  b.c = c;
  b.pixels.assign(b.size(), value);
  return b;
}

}  // namespace

TEST_CASE("dequantize keeps pixel 0 inside [0, 1/256) at 8 bits") {
  Rng noise(1);
  const IntBatch b = constant_batch(16, 2, 2, 1, 0);
  const Tensor4<double> x = dequantize<double>(b, 8, noise);
  for (const double v : x.flat()) {
    CHECK(v >= 0.0);
    CHECK(v < 1.0 / 256.0);
  }
}

TEST_CASE("dequantize keeps pixel 31 inside [31/32, 1) at 5 bits") {
  Rng noise(2);
  const IntBatch b = constant_batch(16, 2, 2, 1, 31);
  const Tensor4<float> x = dequantize<float>(b, 5, noise);
  for (const float v : x.flat()) {
    CHECK(v >= 31.0f / 32.0f);
    CHECK(v < 1.0f);
  }
}

TEST_CASE("dequantize rejects out-of-range pixels") {
  Rng noise(3);
  const IntBatch b = constant_batch(1, 1, 1, 1, 32);
  CHECK_THROWS_AS(dequantize<float>(b, 5, noise), DataError);
}

TEST_CASE("dequantized constant image is uniform on its bin (KS test)") {
  Rng noise(77);
  const int n = 4096;
  const IntBatch b = constant_batch(n, 1, 1, 1, 7);
  const Tensor4<double> x = dequantize<double>(b, 4, noise);
  // Map back to [0,1) within the bin and run a one-sample KS test against
  // the uniform CDF.
  std::vector<double> u(x.flat());
  for (double& v : u) v = v * 16.0 - 7.0;
  std::sort(u.begin(), u.end());
  double ks = 0;
  for (int i = 0; i < n; ++i) {
    const double cdf = u[i];
    ks = std::max(ks, std::abs(cdf - static_cast<double>(i + 1) / n));
    ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n));
  }
  // alpha = 0.001 critical value ~ 1.95 / sqrt(n)
  CHECK(ks < 1.95 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("quantize -> dequantize -> quantize is the identity") {
  Rng rng(5), noise(6);
  for (const int n_bits : {3, 5, 8}) {
    IntBatch b;
    b.n = 64;
    b.h = 2;
    b.w = 2;
    b.c = 1;
    b.pixels.resize(b.size());
    const int levels = 1 << n_bits;
    for (auto& p : b.pixels) {
      p = static_cast<std::uint8_t>(rng.uniform_int(0, levels - 1));
    }
    const Tensor4<float> xf = dequantize<float>(b, n_bits, noise);
    const IntBatch back_f = quantize(xf, n_bits);
    CHECK(back_f.pixels == b.pixels);
    const Tensor4<double> xd = dequantize<double>(b, n_bits, noise);
    const IntBatch back_d = quantize(xd, n_bits);
    CHECK(back_d.pixels == b.pixels);
  }
}

TEST_CASE("uniform-density hypothetical gives bpd == n_bits") {
  // If -log p = 0 (uniform on the unit cube), the remaining term is
  // c/(M log 2) = n_bits exactly.
  for (const int n_bits : {3, 5, 8}) {
    const BitsPerDim b = make_bpd(0.0, 48, n_bits);
    CHECK(b.value ==
          doctest::Approx(static_cast<double>(n_bits)).epsilon(1e-12));
  }
}

TEST_CASE("raising n_bits by one adds exactly one bit/dim via c") {
  const double nll = 17.3;
  const BitsPerDim a = make_bpd(nll, 64, 5);
  const BitsPerDim b = make_bpd(nll, 64, 6);
  CHECK(b.value - a.value == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fresh model on standardized toy data gives finite positive bpd") {
  GlowConfig cfg;
  cfg.K = 2;
  cfg.L = 1;
  cfg.coupling = CouplingMode::affine;
  cfg.perm = PermVariant::invconv;
  cfg.hidden_channels = 8;
  cfg.input = {1, 1, 2};
  cfg.n_bits = 8;
  FlowModel<float> m = FlowModel<float>::build(cfg, 9);
  m.mark_actnorms_identity();

  Rng noise(10);
  IntBatch b = constant_batch(32, 1, 1, 2, 0);
  Rng rng(11);
  for (auto& p : b.pixels) {
    p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  }
  const Tensor4<float> x = dequantize<float>(b, 8, noise);
  const NllResult<float> res = nll_loss(m, x);
  CHECK(std::isfinite(res.bpd));
  CHECK(res.bpd > 0.0);
  CHECK(res.nats_mean ==
        doctest::Approx(res.bpd * 2.0 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("hand-built Gaussian flow matches the closed-form entropy") {
  // A K=1 additive model whose actnorm is hand-set so the flow maps data
  // x -> (x - mu)/sd exactly: -E[log p(x)] then has the closed form
  // 0.5 log(2 pi e sd^2) per dimension, and bpd follows by adding c.
  GlowConfig cfg;
  cfg.K = 1;
  cfg.L = 1;
  cfg.coupling = CouplingMode::additive;
  cfg.perm = PermVariant::reverse;
  cfg.hidden_channels = 4;
  cfg.input = {1, 1, 2};
  cfg.n_bits = 8;
  FlowModel<double> m = FlowModel<double>::build(cfg, 12);

  const double mu = 0.5, sd = 0.05;
  for (auto& step : m.levels[0]) {
    step.actnorm.s = {1.0 / sd, 1.0 / sd};
    step.actnorm.b = {-mu / sd, -mu / sd};
    step.actnorm.initialized = true;
  }

  Rng rng(13);
  const int n = 20000;
  Tensor4<double> x(n, 1, 1, 2);
  for (double& v : x.flat()) v = mu + sd * rng.normal();

  const std::vector<double> lp = m.log_prob(x);
  double mean_nll = 0;
  for (const double v : lp) mean_nll += -v;
  mean_nll /= n;

  const double dims = 2.0;
  const double entropy_per_dim =
      0.5 * std::log(2.0 * 3.14159265358979323846 * std::exp(1.0) * sd * sd);
  CHECK(mean_nll / dims == doctest::Approx(entropy_per_dim).epsilon(0.02));

  const BitsPerDim bpd = make_bpd(mean_nll, 2, 8);
  const double expected_bpd =
      (entropy_per_dim + 8.0 * std::log(2.0)) / std::log(2.0);
  CHECK(bpd.value == doctest::Approx(expected_bpd).epsilon(0.02));
}

TEST_CASE("bpd is invariant to batch order and equal-size partitioning") {
  GlowConfig cfg;
  cfg.K = 1;
  cfg.L = 1;
  cfg.coupling = CouplingMode::affine;
  cfg.perm = PermVariant::invconv;
  cfg.hidden_channels = 4;
  cfg.input = {1, 1, 2};
  cfg.n_bits = 8;
  FlowModel<double> m = FlowModel<double>::build(cfg, 21);
  m.mark_actnorms_identity();

  Rng rng(22), noise(23);
  IntBatch b = constant_batch(64, 1, 1, 2, 0);
  for (auto& p : b.pixels) {
    p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  }
  const Tensor4<double> x = dequantize<double>(b, 8, noise);

  const NllResult<double> whole = nll_loss(m, x);

  Tensor4<double> rev(64, 1, 1, 2);
  for (int i = 0; i < 64; ++i)
    for (int k = 0; k < 2; ++k) rev(i, 0, 0, k) = x(63 - i, 0, 0, k);
  const NllResult<double> reversed = nll_loss(m, rev);
  CHECK(whole.nats_mean == doctest::Approx(reversed.nats_mean).epsilon(1e-12));

  Tensor4<double> h1(32, 1, 1, 2), h2(32, 1, 1, 2);
  for (int i = 0; i < 32; ++i)
    for (int k = 0; k < 2; ++k) {
      h1(i, 0, 0, k) = x(i, 0, 0, k);
      h2(i, 0, 0, k) = x(32 + i, 0, 0, k);
    }
  const double mean_of_means =
      0.5 * (nll_loss(m, h1).nats_mean + nll_loss(m, h2).nats_mean);
  CHECK(whole.nats_mean == doctest::Approx(mean_of_means).epsilon(1e-12));
}
