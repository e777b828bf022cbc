#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "glowflow/model.hpp"
#include "glowflow/oracle.hpp"
#include "glowflow/rng.hpp"

using namespace glow;

namespace {

GlowConfig small_config(int K, int L, CouplingMode cm, PermVariant pv,
                        InvConvParam ip, int h, int w, int c, int hidden = 16) {
  GlowConfig cfg;
  cfg.K = K;
  cfg.L = L;
  cfg.coupling = cm;
  cfg.perm = pv;
  cfg.invconv_param = ip;
  cfg.hidden_channels = hidden;
  cfg.input = {h, w, c};
  cfg.n_bits = 8;
  return cfg;
}

// Randomizes all trainable parameters so round trips are nontrivial.
template <typename T>
void randomize(FlowModel<T>& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& level : m.levels) {
    for (auto& step : level) {
      for (std::size_t i = 0; i < step.actnorm.s.size(); ++i) {
        step.actnorm.s[i] = static_cast<T>(rng.uniform(0.7, 1.4));
        step.actnorm.b[i] = static_cast<T>(rng.uniform(-0.5, 0.5));
      }
      step.actnorm.initialized = true;
      fill_normal(step.coupling.net0.w, rng, 0.0, 0.1);
      fill_normal(step.coupling.net1.w, rng, 0.0, 0.1);
      fill_normal(step.coupling.net2.w, rng, 0.0, 0.1);
      fill_normal(step.coupling.net2.b, rng, 0.0, 0.05);
    }
  }
}

}  // namespace

TEST_CASE("config validation names the divisibility constraint") {
  GlowConfig cfg = small_config(1, 3, CouplingMode::affine,
                                PermVariant::reverse, InvConvParam::dense,
                                4, 4, 2);
  // 4 is not divisible by 2^3.
  CHECK_THROWS_WITH_AS(cfg.validate(),
                       doctest::Contains("divisible by 2^L"), ShapeError);
  cfg.L = 2;
  CHECK_NOTHROW(cfg.validate());

  GlowConfig toy = small_config(2, 1, CouplingMode::affine,
                                PermVariant::invconv, InvConvParam::dense,
                                1, 1, 2);
  CHECK_NOTHROW(toy.validate());
  toy.L = 2;
  CHECK_THROWS_AS(toy.validate(), ShapeError);
}

TEST_CASE("config validation lists every failure at once") {
  GlowConfig cfg = small_config(0, 3, CouplingMode::affine,
                                PermVariant::reverse, InvConvParam::dense,
                                4, 4, 2);
  cfg.n_bits = 12;
  const std::vector<std::string> errs = cfg.validation_errors();
  CHECK(errs.size() == 3);  // bad K, bad n_bits, bad divisibility
  try {
    cfg.validate();
    CHECK(false);
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("K must be >= 1") != std::string::npos);
    CHECK(msg.find("n_bits") != std::string::npos);
    CHECK(msg.find("divisible by 2^L") != std::string::npos);
  }
}

TEST_CASE("fresh model: zero logdet, orthogonal encode, decode(0) = 0") {
  for (const PermVariant pv :
       {PermVariant::reverse, PermVariant::shuffle, PermVariant::invconv}) {
    FlowModel<double> m = FlowModel<double>::build(
        small_config(2, 2, CouplingMode::affine, pv, InvConvParam::dense,
                     8, 8, 2),
        7);
    m.mark_actnorms_identity();  // s=1, b=0

    Rng rng(3);
    Tensor4<double> x(2, 8, 8, 2);
    fill_normal(x, rng, 0.0, 1.0);
    const EncodeResult<double> enc = m.encode(x);

    for (const double ld : enc.logdet) {
      CHECK(std::abs(ld) < 1e-5);
    }

    // Norm preservation per sample.
    for (int in = 0; in < x.n(); ++in) {
      double nx = 0, nz = 0;
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
          for (int k = 0; k < 2; ++k) nx += x(in, i, j, k) * x(in, i, j, k);
      for (const auto& part : enc.lat.parts)
        for (int i = 0; i < part.h(); ++i)
          for (int j = 0; j < part.w(); ++j)
            for (int k = 0; k < part.c(); ++k)
              nz += part(in, i, j, k) * part(in, i, j, k);
      CHECK(std::sqrt(nz) == doctest::Approx(std::sqrt(nx)).epsilon(1e-4));
    }

    // decode(0) == 0 for the identity-initialized model.
    LatentRecord<double> zero;
    for (const LatentShape& ls : m.latent_shapes()) {
      zero.parts.emplace_back(1, ls.h, ls.w, ls.c);
    }
    const Tensor4<double> x0 = m.decode(zero);
    for (const double v : x0.flat()) {
      CHECK(v == doctest::Approx(0.0).scale(1.0).epsilon(1e-10));
    }
  }
}

TEST_CASE("latent dimensions add up to the input dimension") {
  FlowModel<float> m = FlowModel<float>::build(
      small_config(2, 2, CouplingMode::affine, PermVariant::invconv,
                   InvConvParam::dense, 8, 8, 2),
      1);
  std::size_t total = 0;
  for (const LatentShape& ls : m.latent_shapes()) total += ls.elements();
  CHECK(total == 8u * 8 * 2);
  CHECK(total == 128u);

  m.mark_actnorms_identity();
  Rng rng(5);
  Tensor4<float> x(3, 8, 8, 2);
  fill_normal(x, rng, 0.0, 1.0);
  const EncodeResult<float> enc = m.encode(x);
  CHECK(enc.lat.total_elements() == 3u * 128);
}

TEST_CASE("bijectivity across the full config matrix") {
  // {K in {1,2,4}} x {L in {1,2,3}} x coupling x perm x invconv-param on
  // random inputs, f32, 1e-4.
  Rng rng(11);
  int checked = 0;
  for (const int K : {1, 2, 4}) {
    for (const int L : {1, 2, 3}) {
      for (const CouplingMode cm :
           {CouplingMode::additive, CouplingMode::affine}) {
        for (const PermVariant pv : {PermVariant::reverse, PermVariant::shuffle,
                                     PermVariant::invconv}) {
          const auto params =
              pv == PermVariant::invconv
                  ? std::vector<InvConvParam>{InvConvParam::dense,
                                              InvConvParam::lu}
                  : std::vector<InvConvParam>{InvConvParam::dense};
          for (const InvConvParam ip : params) {
            FlowModel<float> m = FlowModel<float>::build(
                small_config(K, L, cm, pv, ip, 8, 8, 2, 8),
                1000 + checked);
            randomize(m, 2000 + checked);
            Tensor4<float> x(2, 8, 8, 2);
            fill_normal(x, rng, 0.0, 1.0);
            const EncodeResult<float> enc = m.encode(x);
            const Tensor4<float> back = m.decode(enc.lat);
            float worst = 0;
            for (std::size_t i = 0; i < x.size(); ++i) {
              worst = std::max(worst,
                               std::abs(back.flat()[i] - x.flat()[i]));
            }
            CAPTURE(K);
            CAPTURE(L);
            CAPTURE(checked);
            CHECK(worst < 1e-4f);
            ++checked;
          }
        }
      }
    }
  }
  CHECK(checked == 3 * 3 * 2 * 4);
}

TEST_CASE("f64 round trip is tight") {
  FlowModel<double> m = FlowModel<double>::build(
      small_config(2, 2, CouplingMode::affine, PermVariant::invconv,
                   InvConvParam::lu, 4, 4, 2, 8),
      77);
  randomize(m, 78);
  Rng rng(79);
  Tensor4<double> x(2, 4, 4, 2);
  fill_normal(x, rng, 0.0, 1.0);
  const Tensor4<double> back = m.decode(m.encode(x).lat);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(back.flat()[i] == doctest::Approx(x.flat()[i]).epsilon(1e-8));
  }
  // encode(decode(z)) == z as well.
  const LatentRecord<double> z = m.sample_latents(2, 1.0, 5);
  const EncodeResult<double> enc2 = m.encode(m.decode(z));
  for (std::size_t p = 0; p < z.parts.size(); ++p) {
    for (std::size_t i = 0; i < z.parts[p].flat().size(); ++i) {
      CHECK(enc2.lat.parts[p].flat()[i] ==
            doctest::Approx(z.parts[p].flat()[i]).epsilon(1e-8).scale(1.0));
    }
  }
}

TEST_CASE("log_prob of zero input on a fresh model is the Gaussian constant") {
  FlowModel<double> m = FlowModel<double>::build(
      small_config(2, 1, CouplingMode::affine, PermVariant::invconv,
                   InvConvParam::dense, 1, 1, 2, 4),
      3);
  m.mark_actnorms_identity();
  Tensor4<double> x(1, 1, 1, 2);  // zeros; D = 2
  const std::vector<double> lp = m.log_prob(x);
  const double want = -1.0 * std::log(2.0 * 3.14159265358979323846);
  CHECK(lp[0] == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("log_prob equals manual recomposition from encode") {
  FlowModel<double> m = FlowModel<double>::build(
      small_config(2, 2, CouplingMode::affine, PermVariant::invconv,
                   InvConvParam::dense, 4, 4, 2, 8),
      31);
  randomize(m, 32);
  Rng rng(33);
  Tensor4<double> x(3, 4, 4, 2);
  fill_normal(x, rng, 0.0, 1.0);

  const std::vector<double> lp = m.log_prob(x);
  const EncodeResult<double> enc = m.encode(x);
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  for (int in = 0; in < 3; ++in) {
    double manual = enc.logdet[in];
    std::size_t dims = 0;
    for (const auto& part : enc.lat.parts) {
      dims += part.size() / 3;
      for (int i = 0; i < part.h(); ++i)
        for (int j = 0; j < part.w(); ++j)
          for (int k = 0; k < part.c(); ++k)
            manual -= 0.5 * part(in, i, j, k) * part(in, i, j, k);
    }
    manual -= 0.5 * kLog2Pi * static_cast<double>(dims);
    CHECK(lp[in] == doctest::Approx(manual).epsilon(1e-12));
  }
}

TEST_CASE("2-dim log_prob matches the brute-force Jacobian density") {
  // p(x) = N(f(x); 0, I) |det df/dx| with both factors from the oracle.
  FlowModel<double> m = FlowModel<double>::build(
      small_config(2, 1, CouplingMode::affine, PermVariant::invconv,
                   InvConvParam::dense, 1, 1, 2, 4),
      41);
  randomize(m, 42);

  Rng rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> x0 = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const auto f = [&](const std::vector<double>& v) {
      Tensor4<double> x(1, 1, 1, 2);
      x.flat() = v;
      return m.encode(x).lat.parts[0].flat();
    };
    const auto jac = oracle::numeric_jacobian(f, x0);
    const std::vector<double> z = f(x0);
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    const double brute = -0.5 * (z[0] * z[0] + z[1] * z[1]) - kLog2Pi +
                         oracle::logabsdet(jac);

    Tensor4<double> x(1, 1, 1, 2);
    x.flat() = x0;
    CHECK(m.log_prob(x)[0] == doctest::Approx(brute).epsilon(1e-3));
  }
}

TEST_CASE("sampling: T=0 deterministic, same seed bit-identical") {
  FlowModel<float> m = FlowModel<float>::build(
      small_config(2, 2, CouplingMode::additive, PermVariant::shuffle,
                   InvConvParam::dense, 4, 4, 2, 8),
      51);
  randomize(m, 52);

  const Tensor4<float> a = m.sample(3, 0.0, 1);
  const Tensor4<float> b = m.sample(3, 0.0, 999);
  CHECK(a.flat() == b.flat());  // T=0 ignores the seed

  const Tensor4<float> c = m.sample(3, 0.7, 42);
  const Tensor4<float> d = m.sample(3, 0.7, 42);
  CHECK(c.flat() == d.flat());
  const Tensor4<float> e = m.sample(3, 0.7, 43);
  bool any_diff = false;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c.flat()[i] != e.flat()[i]) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("fresh-model samples at T=1 have unit variance through rotations") {
  FlowModel<double> m = FlowModel<double>::build(
      small_config(1, 1, CouplingMode::affine, PermVariant::invconv,
                   InvConvParam::dense, 4, 4, 2, 4),
      61);
  m.mark_actnorms_identity();
  const Tensor4<double> s = m.sample(1024, 1.0, 7);
  double acc = 0, acc2 = 0;
  for (const double v : s.flat()) {
    acc += v;
    acc2 += v * v;
  }
  const double n = static_cast<double>(s.size());
  const double var = acc2 / n - (acc / n) * (acc / n);
  CHECK(var == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("temperature monotonicity of z magnitudes") {
  FlowModel<float> m = FlowModel<float>::build(
      small_config(1, 2, CouplingMode::affine, PermVariant::invconv,
                   InvConvParam::dense, 4, 4, 2, 4),
      71);
  double prev = -1.0;
  for (const double T : {0.0, 0.25, 0.5, 1.0}) {
    const LatentRecord<float> lat = m.sample_latents(256, T, 11);
    double acc = 0;
    std::size_t cnt = 0;
    for (const auto& part : lat.parts) {
      for (const float v : part.flat()) {
        acc += std::abs(static_cast<double>(v));
        ++cnt;
      }
    }
    const double mean_abs = acc / static_cast<double>(cnt);
    CHECK(mean_abs > prev);
    prev = mean_abs;
  }
}

TEST_CASE("invconv adds exactly sum_levels c_level^2 parameters per step") {
  const int K = 2, L = 2;
  GlowConfig with = small_config(K, L, CouplingMode::affine,
                                 PermVariant::invconv, InvConvParam::dense,
                                 8, 8, 2, 8);
  GlowConfig without = with;
  without.perm = PermVariant::reverse;
  FlowModel<float> a = FlowModel<float>::build(with, 1);
  FlowModel<float> b = FlowModel<float>::build(without, 1);

  std::size_t expected = 0;
  for (const int c : with.level_channels()) {
    expected += static_cast<std::size_t>(K) * c * c;
  }
  CHECK(a.param_count() - b.param_count() == expected);
}

TEST_CASE("encode validates input shape") {
  FlowModel<float> m = FlowModel<float>::build(
      small_config(1, 1, CouplingMode::affine, PermVariant::reverse,
                   InvConvParam::dense, 4, 4, 2, 4),
      81);
  m.mark_actnorms_identity();
  Tensor4<float> bad(1, 4, 4, 3);
  CHECK_THROWS_AS(m.encode(bad), ShapeError);
  LatentRecord<float> empty;
  CHECK_THROWS_AS(m.decode(empty), ShapeError);
}
