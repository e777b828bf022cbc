#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "glowflow/gtb.hpp"
#include "glowflow/linalg.hpp"
#include "glowflow/rng.hpp"
#include "glowflow/tensor.hpp"

using namespace glow;

namespace {

// Independent naive convolution: direct triple loop over output positions,
// kernel taps and channels. This is the oracle conv2d is checked against.
template <typename T>
Tensor4<T> naive_conv2d(const Tensor4<T>& x, const ConvKernel<T>& k) {
  const int py = k.kh / 2, px = k.kw / 2;
  Tensor4<T> y(x.n(), x.h(), x.w(), k.cout);
  for (int n = 0; n < x.n(); ++n)
    for (int oy = 0; oy < x.h(); ++oy)
      for (int ox = 0; ox < x.w(); ++ox)
        for (int co = 0; co < k.cout; ++co) {
          T acc = k.b[co];
          for (int ky = 0; ky < k.kh; ++ky)
            for (int kx = 0; kx < k.kw; ++kx)
              for (int ci = 0; ci < k.cin; ++ci) {
                const int iy = oy + ky - py;
                const int ix = ox + kx - px;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                acc += x(n, iy, ix, ci) * k.at(ky, kx, ci, co);
              }
          y(n, oy, ox, co) = acc;
        }
  return y;
}

template <typename T>
void fill_uniform(Tensor4<T>& t, Rng& rng, double lo, double hi) {
  for (T& v : t.flat()) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace

TEST_CASE("tensor dims are validated") {
  CHECK_THROWS_AS(Tensor4<float>(0, 1, 1, 1), ShapeError);
  CHECK_THROWS_AS(Tensor4<float>(1, 1, -3, 1), ShapeError);
  Tensor4<float> t(2, 3, 4, 5);
  CHECK(t.size() == 2u * 3 * 4 * 5);
  CHECK(t(1, 2, 3, 4) == 0.0f);
}

TEST_CASE("ensure_finite rejects NaN and Inf") {
  Tensor4<double> t(1, 1, 1, 2);
  t(0, 0, 0, 0) = std::nan("");
  CHECK_THROWS_AS(ensure_finite(t, "test"), NumericsError);
  t(0, 0, 0, 0) = 0;
  t(0, 0, 0, 1) = INFINITY;
  CHECK_THROWS_AS(ensure_finite(t, "test"), NumericsError);
}

TEST_CASE("conv2d 1x1 identity kernel is the identity") {
  Rng rng(11);
  Tensor4<float> x(2, 3, 3, 4);
  fill_normal(x, rng, 0.0, 1.0);
  ConvKernel<float> k(1, 1, 4, 4);
  for (int i = 0; i < 4; ++i) k.at(0, 0, i, i) = 1.0f;
  const Tensor4<float> y = conv2d(x, k);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(y.flat()[i] == x.flat()[i]);
  }
}

TEST_CASE("conv2d zero weight broadcasts the bias") {
  Tensor4<float> x(1, 4, 4, 3);
  Rng rng(2);
  fill_normal(x, rng, 0.0, 1.0);
  ConvKernel<float> k(3, 3, 3, 2);
  k.b = {0.5f, -1.25f};
  const Tensor4<float> y = conv2d(x, k);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      CHECK(y(0, i, j, 0) == 0.5f);
      CHECK(y(0, i, j, 1) == -1.25f);
    }
}

TEST_CASE("conv2d matches the naive triple-loop oracle") {
  Rng rng(37);
  Tensor4<double> x(1, 4, 4, 2);
  fill_normal(x, rng, 0.0, 1.0);
  ConvKernel<double> k(3, 3, 2, 3);
  fill_normal(k.w, rng, 0.0, 0.7);
  fill_normal(k.b, rng, 0.0, 0.3);
  const Tensor4<double> got = conv2d(x, k);
  const Tensor4<double> want = naive_conv2d(x, k);
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got.flat()[i] == doctest::Approx(want.flat()[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor4<float> x(1, 2, 2, 3);
  ConvKernel<float> k(1, 1, 2, 2);
  CHECK_THROWS_AS(conv2d(x, k), ShapeError);
}

TEST_CASE("conv2d is linear") {
  Rng rng(5);
  Tensor4<float> x(1, 4, 4, 2), y(1, 4, 4, 2);
  fill_normal(x, rng, 0.0, 1.0);
  fill_normal(y, rng, 0.0, 1.0);
  ConvKernel<float> k(3, 3, 2, 2);
  fill_normal(k.w, rng, 0.0, 0.5);
  const float a = 0.3f, b = -1.7f;
  Tensor4<float> mix(1, 4, 4, 2);
  for (std::size_t i = 0; i < mix.size(); ++i) {
    mix.flat()[i] = a * x.flat()[i] + b * y.flat()[i];
  }
  const Tensor4<float> lhs = conv2d(mix, k);
  const Tensor4<float> cx = conv2d(x, k);
  const Tensor4<float> cy = conv2d(y, k);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    const float rhs = a * cx.flat()[i] + b * cy.flat()[i];
    CHECK(lhs.flat()[i] == doctest::Approx(rhs).epsilon(1e-5));
  }
}

TEST_CASE("conv2d_vjp trivial cases") {
  Rng rng(8);
  Tensor4<double> x(2, 3, 3, 2);
  fill_normal(x, rng, 0.0, 1.0);

  SUBCASE("zero upstream gives zero gradients") {
    ConvKernel<double> k(3, 3, 2, 2);
    fill_normal(k.w, rng, 0.0, 0.5);
    const Tensor4<double> up(2, 3, 3, 2);
    const ConvVjp<double> g = conv2d_vjp(x, k, up);
    for (const double v : g.dx.flat()) CHECK(v == 0.0);
    for (const double v : g.dw) CHECK(v == 0.0);
    for (const double v : g.db) CHECK(v == 0.0);
  }

  SUBCASE("identity 1x1 kernel passes upstream through") {
    ConvKernel<double> k(1, 1, 2, 2);
    k.at(0, 0, 0, 0) = 1;
    k.at(0, 0, 1, 1) = 1;
    Tensor4<double> up(2, 3, 3, 2);
    fill_normal(up, rng, 0.0, 1.0);
    const ConvVjp<double> g = conv2d_vjp(x, k, up);
    for (std::size_t i = 0; i < up.size(); ++i) {
      CHECK(g.dx.flat()[i] == up.flat()[i]);
    }
  }

  SUBCASE("upstream dims are validated") {
    ConvKernel<double> k(3, 3, 2, 2);
    const Tensor4<double> bad(2, 3, 3, 1);
    CHECK_THROWS_AS(conv2d_vjp(x, k, bad), ShapeError);
  }
}

TEST_CASE("conv2d_vjp matches central finite differences") {
  Rng rng(123);
  Tensor4<double> x(1, 4, 4, 2);
  fill_normal(x, rng, 0.0, 1.0);
  ConvKernel<double> k(3, 3, 2, 2);
  fill_normal(k.w, rng, 0.0, 0.5);
  fill_normal(k.b, rng, 0.0, 0.2);
  Tensor4<double> up(1, 4, 4, 2);
  fill_normal(up, rng, 0.0, 1.0);

  auto loss = [&](const Tensor4<double>& xx, const ConvKernel<double>& kk) {
    const Tensor4<double> y = conv2d(xx, kk);
    double acc = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      acc += y.flat()[i] * up.flat()[i];
    }
    return acc;
  };

  const ConvVjp<double> g = conv2d_vjp(x, k, up);
  const double h = 1e-6;

  for (std::size_t i = 0; i < x.size(); i += 7) {
    Tensor4<double> xp = x, xm = x;
    xp.flat()[i] += h;
    xm.flat()[i] -= h;
    const double num = (loss(xp, k) - loss(xm, k)) / (2 * h);
    CHECK(g.dx.flat()[i] ==
          doctest::Approx(num).epsilon(1e-3).scale(std::abs(num) + 1e-8));
  }
  for (std::size_t i = 0; i < k.w.size(); i += 5) {
    ConvKernel<double> kp = k, km = k;
    kp.w[i] += h;
    km.w[i] -= h;
    const double num = (loss(x, kp) - loss(x, km)) / (2 * h);
    CHECK(g.dw[i] ==
          doctest::Approx(num).epsilon(1e-3).scale(std::abs(num) + 1e-8));
  }
  for (std::size_t i = 0; i < k.b.size(); ++i) {
    ConvKernel<double> kp = k, km = k;
    kp.b[i] += h;
    km.b[i] -= h;
    const double num = (loss(x, kp) - loss(x, km)) / (2 * h);
    CHECK(g.db[i] ==
          doctest::Approx(num).epsilon(1e-3).scale(std::abs(num) + 1e-8));
  }
}

TEST_CASE("relu forward cases") {
  Tensor4<float> x(1, 1, 1, 4);
  x(0, 0, 0, 0) = -2;
  x(0, 0, 0, 1) = -0.5f;
  x(0, 0, 0, 2) = 0.5f;
  x(0, 0, 0, 3) = 3;
  const Tensor4<float> y = relu(x);
  CHECK(y(0, 0, 0, 0) == 0);
  CHECK(y(0, 0, 0, 1) == 0);
  CHECK(y(0, 0, 0, 2) == 0.5f);
  CHECK(y(0, 0, 0, 3) == 3.0f);
}

TEST_CASE("relu vjp matches finite differences away from the kink") {
  Rng rng(77);
  Tensor4<double> x(1, 2, 2, 8);
  fill_normal(x, rng, 0.0, 1.0);
  Tensor4<double> up(1, 2, 2, 8);
  fill_normal(up, rng, 0.0, 1.0);
  const Tensor4<double> g = relu_vjp(x, up);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x.flat()[i]) < 1e-4) continue;  // exclude kink neighborhood
    Tensor4<double> xp = x, xm = x;
    xp.flat()[i] += h;
    xm.flat()[i] -= h;
    double fp = 0, fm = 0;
    const Tensor4<double> rp = relu(xp), rm = relu(xm);
    for (std::size_t j = 0; j < x.size(); ++j) {
      fp += rp.flat()[j] * up.flat()[j];
      fm += rm.flat()[j] * up.flat()[j];
    }
    const double num = (fp - fm) / (2 * h);
    CHECK(g.flat()[i] ==
          doctest::Approx(num).epsilon(1e-3).scale(std::abs(num) + 1e-8));
  }
}

TEST_CASE("channel_affine identity and scaling") {
  Tensor4<float> ones(1, 2, 2, 2);
  for (float& v : ones.flat()) v = 1.0f;

  const Tensor4<float> id = channel_affine<float>(ones, {1, 1}, {0, 0});
  for (const float v : id.flat()) CHECK(v == 1.0f);

  const Tensor4<float> twos = channel_affine<float>(ones, {2, 2}, {0, 0});
  for (const float v : twos.flat()) CHECK(v == 2.0f);

  CHECK_THROWS_AS(channel_affine<float>(ones, {1.0f}, {0, 0}), ShapeError);
}

TEST_CASE("channel_affine vjp matches finite differences") {
  Rng rng(91);
  Tensor4<double> x(2, 2, 2, 3);
  fill_normal(x, rng, 0.0, 1.0);
  std::vector<double> s = {0.7, -1.3, 2.1}, b = {0.1, 0.0, -0.4};
  Tensor4<double> up(2, 2, 2, 3);
  fill_normal(up, rng, 0.0, 1.0);
  const ChannelAffineVjp<double> g = channel_affine_vjp(x, s, up);

  auto loss = [&](const Tensor4<double>& xx, const std::vector<double>& ss,
                  const std::vector<double>& bb) {
    const Tensor4<double> y = channel_affine(xx, ss, bb);
    double acc = 0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y.flat()[i] * up.flat()[i];
    return acc;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); i += 3) {
    Tensor4<double> xp = x, xm = x;
    xp.flat()[i] += h;
    xm.flat()[i] -= h;
    const double num = (loss(xp, s, b) - loss(xm, s, b)) / (2 * h);
    CHECK(g.dx.flat()[i] == doctest::Approx(num).epsilon(1e-4));
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto sp = s, sm = s;
    sp[i] += h;
    sm[i] -= h;
    const double num = (loss(x, sp, b) - loss(x, sm, b)) / (2 * h);
    CHECK(g.ds[i] == doctest::Approx(num).epsilon(1e-4));
    auto bp = b, bm = b;
    bp[i] += h;
    bm[i] -= h;
    const double numb = (loss(x, s, bp) - loss(x, s, bm)) / (2 * h);
    CHECK(g.db[i] == doctest::Approx(numb).epsilon(1e-4));
  }
}

TEST_CASE("reductions: constant tensor has zero variance") {
  Tensor4<float> t(2, 4, 4, 3);
  for (float& v : t.flat()) v = 5.0f;
  const std::vector<double> var = var_per_channel(t);
  for (const double v : var) CHECK(v == doctest::Approx(0.0));
  const std::vector<double> mean = mean_per_channel(t);
  for (const double v : mean) CHECK(v == doctest::Approx(5.0));
}

TEST_CASE("reductions: two-element channel {0,2} has mean 1 var 1") {
  Tensor4<double> t(2, 1, 1, 1);
  t(0, 0, 0, 0) = 0;
  t(1, 0, 0, 0) = 2;
  CHECK(mean_per_channel(t)[0] == doctest::Approx(1.0));
  CHECK(var_per_channel(t)[0] == doctest::Approx(1.0));
}

TEST_CASE("reductions: seeded standard normal has near-zero mean") {
  Rng rng(4242);
  Tensor4<double> t(16, 16, 16, 2);  // 4096 values per channel
  fill_normal(t, rng, 0.0, 1.0);
  for (const double m : mean_per_channel(t)) CHECK(std::abs(m) < 0.1);
  for (const double v : var_per_channel(t)) CHECK(v == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("linalg LU round trips and flags singularity") {
  Rng rng(3);
  const int n = 6;
  std::vector<double> a(n * n);
  for (double& v : a) v = rng.normal();

  const linalg::LuFactors<double> f = linalg::lu_factor(a, n);
  // Solve against a known vector.
  std::vector<double> x_true(n), rhs(n, 0.0);
  for (int i = 0; i < n; ++i) x_true[i] = rng.normal();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) rhs[i] += a[i * n + j] * x_true[j];
  linalg::lu_solve(f, rhs.data());
  for (int i = 0; i < n; ++i) {
    CHECK(rhs[i] == doctest::Approx(x_true[i]).epsilon(1e-9));
  }

  std::vector<double> sing(4, 0.0);  // 2x2 all zeros
  CHECK_THROWS_AS(linalg::lu_factor(sing, 2), SingularError);
}

TEST_CASE("linalg inverse and rotation init") {
  Rng rng(19);
  const int n = 5;
  const std::vector<double> q = linalg::random_rotation(n, rng);

  // Orthogonality: Q Q^T = I.
  const std::vector<double> qt = linalg::transpose(q, n);
  const std::vector<double> qqt = linalg::mat_mul(q, qt, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      CHECK(qqt[i * n + j] ==
            doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10).scale(1.0));
    }

  // Proper rotation: det = +1.
  const linalg::LuFactors<double> f = linalg::lu_factor(q, n);
  const double det = linalg::lu_det_sign(f) * std::exp(linalg::lu_logabsdet(f));
  CHECK(det == doctest::Approx(1.0).epsilon(1e-5));

  const std::vector<double> inv = linalg::mat_inverse(q, n);
  const std::vector<double> should_be_id = linalg::mat_mul(q, inv, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      CHECK(should_be_id[i * n + j] ==
            doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10).scale(1.0));
    }
}

TEST_CASE("GTB round trip preserves bytes and validates input") {
  Rng rng(55);
  Tensor4<float> t(2, 3, 4, 5);
  fill_normal(t, rng, 0.0, 1.0);
  const std::string path = std::string(GLOW_TEST_TMPDIR) + "/roundtrip.gtb";
  write_gtb_file(path, make_blob(t));
  const GtbBlob back = read_gtb_file(path);
  CHECK(back.dtype == 0);
  REQUIRE(back.dims.size() == 4);
  CHECK(back.dims[0] == 2);
  CHECK(back.dims[3] == 5);
  const Tensor4<float> t2 = blob_tensor4<float>(back);
  CHECK(t2.flat() == t.flat());

  CHECK_THROWS_AS(read_gtb_file(std::string(GLOW_TEST_TMPDIR) + "/nope.gtb"),
                  DataError);
}

TEST_CASE("rng determinism and normal moments") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng rng(7);
  double sum = 0, sum2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.02));
}
