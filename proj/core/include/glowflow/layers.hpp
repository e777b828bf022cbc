#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "glowflow/errors.hpp"
#include "glowflow/linalg.hpp"
#include "glowflow/rng.hpp"
#include "glowflow/tensor.hpp"

// The invertible transforms of one flow step plus squeeze and channel split.
// Every layer exposes forward(x) -> (y, per-sample logdet in nats),
// inverse(y) -> x, and a backward pass producing parameter gradients.
//
// Backward convention: given dL/dy and the per-sample sensitivity
// dL/dlogdet_i, each layer returns dL/dx and accumulates parameter
// gradients into its grad struct. For the mean NLL every dlogdet_i is -1/n.
namespace glow {

template <typename T>
using LogDet = std::vector<T>;  // one value per sample

// ---------------------------------------------------------------------------
// squeeze / split / concat: volume-preserving reshapes, logdet 0.
// ---------------------------------------------------------------------------

// (n,h,w,c) -> (n,h/2,w/2,4c): each 2x2 spatial block becomes channels, block
// positions in row-major order with original channels fastest.
template <typename T>
Tensor4<T> squeeze(const Tensor4<T>& x) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw ShapeError("squeeze: h and w must be even, got " + x.dims_str());
  }
  Tensor4<T> y(x.n(), x.h() / 2, x.w() / 2, x.c() * 4);
  const int c = x.c();
  for (int n = 0; n < x.n(); ++n)
    for (int i = 0; i < y.h(); ++i)
      for (int j = 0; j < y.w(); ++j)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            for (int k = 0; k < c; ++k)
              y(n, i, j, (dy * 2 + dx) * c + k) =
                  x(n, 2 * i + dy, 2 * j + dx, k);
  return y;
}

template <typename T>
Tensor4<T> unsqueeze(const Tensor4<T>& y) {
  if (y.c() % 4 != 0) {
    throw ShapeError("unsqueeze: channels must be divisible by 4");
  }
  Tensor4<T> x(y.n(), y.h() * 2, y.w() * 2, y.c() / 4);
  const int c = x.c();
  for (int n = 0; n < y.n(); ++n)
    for (int i = 0; i < y.h(); ++i)
      for (int j = 0; j < y.w(); ++j)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            for (int k = 0; k < c; ++k)
              x(n, 2 * i + dy, 2 * j + dx, k) =
                  y(n, i, j, (dy * 2 + dx) * c + k);
  return x;
}

// First half of the channels continues the flow, second half factors out.
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>& x) {
  if (x.c() % 2 != 0) {
    throw ShapeError("split: channel count must be even, got " + x.dims_str());
  }
  const int half = x.c() / 2;
  Tensor4<T> a(x.n(), x.h(), x.w(), half);
  Tensor4<T> b(x.n(), x.h(), x.w(), half);
  for (int n = 0; n < x.n(); ++n)
    for (int i = 0; i < x.h(); ++i)
      for (int j = 0; j < x.w(); ++j) {
        const T* xp = &x(n, i, j, 0);
        T* ap = &a(n, i, j, 0);
        T* bp = &b(n, i, j, 0);
        for (int k = 0; k < half; ++k) {
          ap[k] = xp[k];
          bp[k] = xp[half + k];
        }
      }
  return {std::move(a), std::move(b)};
}

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ShapeError("concat: spatial dims mismatch");
  }
  Tensor4<T> x(a.n(), a.h(), a.w(), a.c() + b.c());
  for (int n = 0; n < a.n(); ++n)
    for (int i = 0; i < a.h(); ++i)
      for (int j = 0; j < a.w(); ++j) {
        T* xp = &x(n, i, j, 0);
        const T* ap = &a(n, i, j, 0);
        const T* bp = &b(n, i, j, 0);
        for (int k = 0; k < a.c(); ++k) xp[k] = ap[k];
        for (int k = 0; k < b.c(); ++k) xp[a.c() + k] = bp[k];
      }
  return x;
}

// ---------------------------------------------------------------------------
// Actnorm: per-channel scale and bias with data-dependent initialization.
// ---------------------------------------------------------------------------

template <typename T>
struct ActNormGrad {
  std::vector<T> ds, db;
  explicit ActNormGrad(int c) : ds(c, T(0)), db(c, T(0)) {}
};

template <typename T>
struct ActNorm {
  std::vector<T> s, b;
  bool initialized = false;

  ActNorm() = default;
  explicit ActNorm(int c) : s(c, T(1)), b(c, T(0)) {}

  int channels() const { return static_cast<int>(s.size()); }

  void check_scale() const {
    for (const T v : s) {
      if (v == T(0)) throw SingularError("actnorm scale contains 0");
    }
  }

  // y = s*x + b per position; logdet = h*w*sum(log|s|) for every sample.
  std::pair<Tensor4<T>, LogDet<T>> forward(const Tensor4<T>& x,
                                           bool init_pass = false) const {
    if (!initialized && !init_pass) {
      throw StateError("actnorm used before data-dependent initialization");
    }
    check_scale();
    Tensor4<T> y = channel_affine(x, s, b);
    double ld = 0;
    for (const T v : s) ld += std::log(std::abs(static_cast<double>(v)));
    ld *= static_cast<double>(x.h()) * x.w();
    return {std::move(y), LogDet<T>(x.n(), static_cast<T>(ld))};
  }

  Tensor4<T> inverse(const Tensor4<T>& y) const {
    check_scale();
    const int c = channels();
    if (y.c() != c) throw ShapeError("actnorm inverse: channel mismatch");
    Tensor4<T> x = y;
    std::vector<T>& f = x.flat();
    for (std::size_t i = 0; i < f.size(); ++i) {
      const int k = static_cast<int>(i % c);
      f[i] = (f[i] - b[k]) / s[k];
    }
    ensure_finite(x, "actnorm inverse");
    return x;
  }

  // Sets s = 1/std, b = -mean/std from the batch that reaches this layer.
  // A zero-variance channel gets std += 1e-6 so init can proceed; returns
  // true when that fallback fired so the caller can log it.
  bool init_from_batch(const Tensor4<T>& batch) {
    if (initialized) throw StateError("actnorm already initialized");
    if (batch.c() != channels()) {
      throw ShapeError("actnorm init: channel mismatch");
    }
    if (batch.n() * batch.h() * batch.w() < 2) {
      throw ShapeError("actnorm init: need at least 2 values per channel");
    }
    const std::vector<double> mean = mean_per_channel(batch);
    const std::vector<double> var = var_per_channel(batch);
    bool degenerate = false;
    for (int k = 0; k < channels(); ++k) {
      double sd = std::sqrt(var[k]);
      if (sd < 1e-12) {
        sd += 1e-6;
        degenerate = true;
      }
      s[k] = static_cast<T>(1.0 / sd);
      b[k] = static_cast<T>(-mean[k] / sd);
    }
    initialized = true;
    return degenerate;
  }

  Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& dy,
                      T dlogdet_sum, ActNormGrad<T>& g) const {
    ChannelAffineVjp<T> v = channel_affine_vjp(x, s, dy);
    const T hw = static_cast<T>(x.h()) * static_cast<T>(x.w());
    for (int k = 0; k < channels(); ++k) {
      g.ds[k] += v.ds[k] + dlogdet_sum * hw / s[k];
      g.db[k] += v.db[k];
    }
    return std::move(v.dx);
  }
};

// ---------------------------------------------------------------------------
// Invertible 1x1 convolution: per-pixel multiplication by a shared c x c
// matrix, either stored densely or parameterized as W = P L (U + diag(s)).
// ---------------------------------------------------------------------------

enum class InvConvParam { dense, lu };

template <typename T>
struct InvConvGrad {
  std::vector<T> dw;          // dense
  std::vector<T> dl, du, ds;  // lu
  InvConvGrad(InvConvParam p, int c) {
    if (p == InvConvParam::dense) {
      dw.assign(static_cast<std::size_t>(c) * c, T(0));
    } else {
      dl.assign(static_cast<std::size_t>(c) * c, T(0));
      du.assign(static_cast<std::size_t>(c) * c, T(0));
      ds.assign(c, T(0));
    }
  }
};

template <typename T>
struct InvConv {
  InvConvParam param = InvConvParam::dense;
  int c = 0;
  std::vector<T> w;       // dense: c*c row-major
  std::vector<int> perm;  // lu: W[i] = (L(U+diag s))[perm[i]]; fixed after init
  std::vector<T> lower;   // lu: strictly-lower entries of L (unit diagonal)
  std::vector<T> upper;   // lu: strictly-upper entries of U (zero diagonal)
  std::vector<T> svec;    // lu: signed diagonal s

  // Initializes from a random rotation matrix so the initial logdet is 0.
  // In LU mode P is computed once from that rotation and never trained.
  static InvConv random_rotation_init(int c, InvConvParam p, Rng& rng) {
    InvConv conv;
    conv.param = p;
    conv.c = c;
    const std::vector<double> q = linalg::random_rotation(c, rng);
    if (p == InvConvParam::dense) {
      conv.w.resize(q.size());
      for (std::size_t i = 0; i < q.size(); ++i)
        conv.w[i] = static_cast<T>(q[i]);
      return conv;
    }
    const linalg::LuFactors<double> f = linalg::lu_factor(q, c);
    // Replay the row swaps: rows[k] is the source row of W that landed at
    // position k of the L*(U+diag s) product.
    std::vector<int> rows(c);
    for (int i = 0; i < c; ++i) rows[i] = i;
    for (int k = 0; k < c; ++k) std::swap(rows[k], rows[f.piv[k]]);
    conv.perm.assign(c, 0);
    for (int k = 0; k < c; ++k) conv.perm[rows[k]] = k;
    conv.lower.assign(static_cast<std::size_t>(c) * c, T(0));
    conv.upper.assign(static_cast<std::size_t>(c) * c, T(0));
    conv.svec.assign(c, T(0));
    for (int i = 0; i < c; ++i) {
      for (int j = 0; j < i; ++j)
        conv.lower[static_cast<std::size_t>(i) * c + j] =
            static_cast<T>(linalg::at(f.lu, c, i, j));
      conv.svec[i] = static_cast<T>(linalg::at(f.lu, c, i, i));
      for (int j = i + 1; j < c; ++j)
        conv.upper[static_cast<std::size_t>(i) * c + j] =
            static_cast<T>(linalg::at(f.lu, c, i, j));
    }
    return conv;
  }

  void check_svec() const {
    for (const T v : svec) {
      if (v == T(0)) throw SingularError("invconv LU scale contains 0");
    }
  }

  std::vector<T> weight_matrix() const {
    if (param == InvConvParam::dense) return w;
    std::vector<T> m(static_cast<std::size_t>(c) * c, T(0));
    for (int i = 0; i < c; ++i) {
      const int k = perm[i];
      for (int j = 0; j < c; ++j) {
        // (L V)[k][j] with L unit-lower and V = U + diag(s) upper.
        T acc = 0;
        const int tmax = k < j ? k : j;
        for (int t = 0; t <= tmax; ++t) {
          const T l =
              t == k ? T(1) : lower[static_cast<std::size_t>(k) * c + t];
          const T v =
              t == j ? svec[t] : upper[static_cast<std::size_t>(t) * c + j];
          acc += l * v;
        }
        m[static_cast<std::size_t>(i) * c + j] = acc;
      }
    }
    return m;
  }

  // Per-pixel log|det W|: dense via LU factorization at call time, LU
  // parameterization as sum(log|s|).
  double logabsdet_weight() const {
    if (param == InvConvParam::dense) {
      return linalg::lu_logabsdet(linalg::lu_factor(w, c));
    }
    check_svec();
    double acc = 0;
    for (const T v : svec) acc += std::log(std::abs(static_cast<double>(v)));
    return acc;
  }

  std::pair<Tensor4<T>, LogDet<T>> forward(const Tensor4<T>& x) const {
    if (x.c() != c) throw ShapeError("invconv: channel mismatch");
    const double ld = logabsdet_weight() * x.h() * x.w();
    Tensor4<T> y = apply_matrix(x, weight_matrix());
    ensure_finite(y, "invconv forward");
    return {std::move(y), LogDet<T>(x.n(), static_cast<T>(ld))};
  }

  Tensor4<T> inverse(const Tensor4<T>& y) const {
    if (y.c() != c) throw ShapeError("invconv inverse: channel mismatch");
    Tensor4<T> x = zeros_like(y);
    std::vector<T> v(c);
    if (param == InvConvParam::dense) {
      const linalg::LuFactors<T> f = linalg::lu_factor(w, c);
      for_each_pixel(y, x, [&](const T* yp, T* xp) {
        for (int k = 0; k < c; ++k) v[k] = yp[k];
        linalg::lu_solve(f, v.data());
        for (int k = 0; k < c; ++k) xp[k] = v[k];
      });
    } else {
      check_svec();
      for_each_pixel(y, x, [&](const T* yp, T* xp) {
        // W x = y with W = P L (U + diag s): undo P, then two triangular
        // substitutions.
        for (int i = 0; i < c; ++i) v[perm[i]] = yp[i];
        for (int i = 1; i < c; ++i) {
          T acc = v[i];
          for (int j = 0; j < i; ++j)
            acc -= lower[static_cast<std::size_t>(i) * c + j] * v[j];
          v[i] = acc;
        }
        for (int i = c - 1; i >= 0; --i) {
          T acc = v[i];
          for (int j = i + 1; j < c; ++j)
            acc -= upper[static_cast<std::size_t>(i) * c + j] * v[j];
          v[i] = acc / svec[i];
        }
        for (int k = 0; k < c; ++k) xp[k] = v[k];
      });
    }
    ensure_finite(x, "invconv inverse");
    return x;
  }

  Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& dy,
                      T dlogdet_sum, InvConvGrad<T>& g) const {
    const std::vector<T> m = weight_matrix();
    Tensor4<T> dx = apply_matrix(dy, linalg::transpose(m, c));

    // dW = sum_pixels dy x^T + dlogdet_sum * h*w * W^{-T}.
    std::vector<T> dw(static_cast<std::size_t>(c) * c, T(0));
    const int n = x.n(), h = x.h(), w_ = x.w();
    for (int in = 0; in < n; ++in)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w_; ++j) {
          const T* dyp = &dy(in, i, j, 0);
          const T* xp = &x(in, i, j, 0);
          for (int r = 0; r < c; ++r)
            for (int q = 0; q < c; ++q)
              dw[static_cast<std::size_t>(r) * c + q] += dyp[r] * xp[q];
        }
    const std::vector<T> winv = linalg::mat_inverse(m, c);
    const T coeff = dlogdet_sum * static_cast<T>(h) * static_cast<T>(w_);
    for (int r = 0; r < c; ++r)
      for (int q = 0; q < c; ++q)
        dw[static_cast<std::size_t>(r) * c + q] +=
            coeff * linalg::at(winv, c, q, r);

    if (param == InvConvParam::dense) {
      for (std::size_t i = 0; i < dw.size(); ++i) g.dw[i] += dw[i];
      return dx;
    }

    // Chain through W = P L V, V = U + diag(s):
    //   dL = (P^T dW) V^T masked strictly lower,
    //   dV = L^T (P^T dW) masked upper; its diagonal is ds.
    std::vector<T> pt_dw(static_cast<std::size_t>(c) * c, T(0));
    for (int i = 0; i < c; ++i) {
      const int k = perm[i];
      for (int j = 0; j < c; ++j)
        pt_dw[static_cast<std::size_t>(k) * c + j] =
            dw[static_cast<std::size_t>(i) * c + j];
    }
    std::vector<T> lmat(static_cast<std::size_t>(c) * c, T(0));
    std::vector<T> vmat(static_cast<std::size_t>(c) * c, T(0));
    for (int i = 0; i < c; ++i) {
      lmat[static_cast<std::size_t>(i) * c + i] = T(1);
      vmat[static_cast<std::size_t>(i) * c + i] = svec[i];
      for (int j = 0; j < i; ++j)
        lmat[static_cast<std::size_t>(i) * c + j] =
            lower[static_cast<std::size_t>(i) * c + j];
      for (int j = i + 1; j < c; ++j)
        vmat[static_cast<std::size_t>(i) * c + j] =
            upper[static_cast<std::size_t>(i) * c + j];
    }
    const std::vector<T> dl_full =
        linalg::mat_mul(pt_dw, linalg::transpose(vmat, c), c);
    const std::vector<T> dv_full =
        linalg::mat_mul(linalg::transpose(lmat, c), pt_dw, c);
    for (int i = 0; i < c; ++i) {
      for (int j = 0; j < i; ++j)
        g.dl[static_cast<std::size_t>(i) * c + j] +=
            dl_full[static_cast<std::size_t>(i) * c + j];
      for (int j = i + 1; j < c; ++j)
        g.du[static_cast<std::size_t>(i) * c + j] +=
            dv_full[static_cast<std::size_t>(i) * c + j];
      g.ds[i] += dv_full[static_cast<std::size_t>(i) * c + i];
    }
    return dx;
  }

 private:
  Tensor4<T> apply_matrix(const Tensor4<T>& x, const std::vector<T>& m) const {
    Tensor4<T> y = zeros_like(x);
    parallel_for(x.n(), [&](int in) {
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j) {
          const T* xp = &x(in, i, j, 0);
          T* yp = &y(in, i, j, 0);
          for (int r = 0; r < c; ++r) {
            T acc = 0;
            const T* mr = &m[static_cast<std::size_t>(r) * c];
            for (int q = 0; q < c; ++q) acc += mr[q] * xp[q];
            yp[r] = acc;
          }
        }
    });
    return y;
  }

  template <typename F>
  void for_each_pixel(const Tensor4<T>& y, Tensor4<T>& x, F&& fn) const {
    for (int in = 0; in < y.n(); ++in)
      for (int i = 0; i < y.h(); ++i)
        for (int j = 0; j < y.w(); ++j) fn(&y(in, i, j, 0), &x(in, i, j, 0));
  }
};

// ---------------------------------------------------------------------------
// Fixed channel permutations (reverse / seeded shuffle), logdet 0.
// ---------------------------------------------------------------------------

struct ChannelPerm {
  std::vector<int> fwd;  // y[..., k] = x[..., fwd[k]]
  std::vector<int> inv;

  static ChannelPerm reverse(int c) {
    ChannelPerm p;
    p.fwd.resize(c);
    for (int k = 0; k < c; ++k) p.fwd[k] = c - 1 - k;
    p.inv = p.fwd;  // reversing is an involution
    return p;
  }

  static ChannelPerm shuffle(int c, Rng& rng) {
    ChannelPerm p;
    p.fwd.resize(c);
    const std::vector<std::size_t> perm = rng.permutation(c);
    for (int k = 0; k < c; ++k) p.fwd[k] = static_cast<int>(perm[k]);
    p.inv.assign(c, 0);
    for (int k = 0; k < c; ++k) p.inv[p.fwd[k]] = k;
    return p;
  }
};

template <typename T>
Tensor4<T> permute_channels(const Tensor4<T>& x, const std::vector<int>& map) {
  if (static_cast<int>(map.size()) != x.c()) {
    throw ShapeError("permute_channels: map length must equal channels");
  }
  Tensor4<T> y = zeros_like(x);
  const int c = x.c();
  const std::size_t pixels = x.size() / c;
  const T* xp = x.data();
  T* yp = y.data();
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int k = 0; k < c; ++k) yp[k] = xp[map[k]];
    xp += c;
    yp += c;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Affine / additive coupling with a 3-layer conv net on the untouched half.
// ---------------------------------------------------------------------------

enum class CouplingMode { additive, affine };

template <typename T>
struct ConvKernelGrad {
  std::vector<T> dw, db;
  explicit ConvKernelGrad(const ConvKernel<T>& k)
      : dw(k.w.size(), T(0)), db(k.b.size(), T(0)) {}
};

template <typename T>
struct Coupling;

template <typename T>
struct CouplingGrad {
  ConvKernelGrad<T> g0, g1, g2;
  explicit CouplingGrad(const Coupling<T>& c);
};

template <typename T>
struct Coupling {
  CouplingMode mode = CouplingMode::affine;
  int c = 0;  // full channel count, must be even
  int hidden = 0;
  ConvKernel<T> net0, net1, net2;  // 3x3 -> 1x1 -> 3x3

  // Zero init of the last convolution makes the layer start as identity,
  // with s = exp(0) = 1 everywhere.
  static Coupling init(int c, int hidden, CouplingMode mode, Rng& rng) {
    if (c % 2 != 0) throw ShapeError("coupling: channel count must be even");
    Coupling cp;
    cp.mode = mode;
    cp.c = c;
    cp.hidden = hidden;
    const int half = c / 2;
    const int out = mode == CouplingMode::affine ? c : half;
    cp.net0 = ConvKernel<T>(3, 3, half, hidden);
    cp.net1 = ConvKernel<T>(1, 1, hidden, hidden);
    cp.net2 = ConvKernel<T>(3, 3, hidden, out);
    fill_normal(cp.net0.w, rng, 0.0, 0.05);
    fill_normal(cp.net1.w, rng, 0.0, 0.05);
    // net2 stays all-zero (weight and bias).
    return cp;
  }

  struct Cache {
    Tensor4<T> xa, xb;  // input halves
    Tensor4<T> a1, a2;  // pre-activation hidden layers
    Tensor4<T> scale;   // affine only: s = exp(log s)
  };

  // x_a = first c/2 channels (transformed), x_b = last c/2 (conditioning);
  // (log s, t) = NN(x_b); y_a = s*x_a + t; logdet = sum(log|s|) per sample.
  std::pair<Tensor4<T>, LogDet<T>> forward(const Tensor4<T>& x,
                                           Cache* cache = nullptr) const {
    if (x.c() != c) throw ShapeError("coupling: channel mismatch");
    auto [xa, xb] = split_channels(x);
    Tensor4<T> a1 = conv2d(xb, net0);
    Tensor4<T> h1 = relu(a1);
    Tensor4<T> a2 = conv2d(h1, net1);
    Tensor4<T> h2 = relu(a2);
    const Tensor4<T> nn = conv2d(h2, net2);

    const int half = c / 2;
    Tensor4<T> ya = zeros_like(xa);
    LogDet<T> ld(x.n(), T(0));
    Tensor4<T> scale;
    if (mode == CouplingMode::affine) {
      scale = Tensor4<T>(x.n(), x.h(), x.w(), half);
      for (int in = 0; in < x.n(); ++in) {
        double acc = 0;
        for (int i = 0; i < x.h(); ++i)
          for (int j = 0; j < x.w(); ++j)
            for (int k = 0; k < half; ++k) {
              const T logs = nn(in, i, j, k);
              const T t = nn(in, i, j, half + k);
              const T s = std::exp(logs);
              scale(in, i, j, k) = s;
              ya(in, i, j, k) = s * xa(in, i, j, k) + t;
              acc += static_cast<double>(logs);
            }
        ld[in] = static_cast<T>(acc);
      }
    } else {
      for (int in = 0; in < x.n(); ++in)
        for (int i = 0; i < x.h(); ++i)
          for (int j = 0; j < x.w(); ++j)
            for (int k = 0; k < half; ++k)
              ya(in, i, j, k) = xa(in, i, j, k) + nn(in, i, j, k);
    }
    ensure_finite(ya, "coupling forward");
    ensure_finite(ld, "coupling logdet");
    Tensor4<T> y = concat_channels(ya, xb);
    if (cache) {
      cache->xa = std::move(xa);
      cache->xb = std::move(xb);
      cache->a1 = std::move(a1);
      cache->a2 = std::move(a2);
      cache->scale = std::move(scale);
    }
    return {std::move(y), std::move(ld)};
  }

  Tensor4<T> inverse(const Tensor4<T>& y) const {
    if (y.c() != c) throw ShapeError("coupling inverse: channel mismatch");
    auto [ya, yb] = split_channels(y);
    const Tensor4<T> nn =
        conv2d(relu(conv2d(relu(conv2d(yb, net0)), net1)), net2);
    const int half = c / 2;
    Tensor4<T> xa = zeros_like(ya);
    if (mode == CouplingMode::affine) {
      for (int in = 0; in < y.n(); ++in)
        for (int i = 0; i < y.h(); ++i)
          for (int j = 0; j < y.w(); ++j)
            for (int k = 0; k < half; ++k) {
              const T logs = nn(in, i, j, k);
              const T t = nn(in, i, j, half + k);
              xa(in, i, j, k) = (ya(in, i, j, k) - t) * std::exp(-logs);
            }
    } else {
      for (int in = 0; in < y.n(); ++in)
        for (int i = 0; i < y.h(); ++i)
          for (int j = 0; j < y.w(); ++j)
            for (int k = 0; k < half; ++k)
              xa(in, i, j, k) = ya(in, i, j, k) - nn(in, i, j, k);
    }
    ensure_finite(xa, "coupling inverse");
    return concat_channels(xa, yb);
  }

  Tensor4<T> backward(const Cache& cache, const Tensor4<T>& dy,
                      const LogDet<T>& dlogdet, CouplingGrad<T>& g) const {
    auto [dya, dyb] = split_channels(dy);
    const int half = c / 2;

    Tensor4<T> dxa = zeros_like(cache.xa);
    Tensor4<T> dnn(dy.n(), dy.h(), dy.w(),
                   mode == CouplingMode::affine ? c : half);
    if (mode == CouplingMode::affine) {
      for (int in = 0; in < dy.n(); ++in)
        for (int i = 0; i < dy.h(); ++i)
          for (int j = 0; j < dy.w(); ++j)
            for (int k = 0; k < half; ++k) {
              const T s = cache.scale(in, i, j, k);
              const T up = dya(in, i, j, k);
              dxa(in, i, j, k) = up * s;
              // d(s*xa + t)/dlogs plus the logdet term itself
              dnn(in, i, j, k) = up * s * cache.xa(in, i, j, k) + dlogdet[in];
              dnn(in, i, j, half + k) = up;
            }
    } else {
      dxa = dya;
      dnn = dya;
    }

    const Tensor4<T> h1 = relu(cache.a1);
    const Tensor4<T> h2 = relu(cache.a2);
    ConvVjp<T> v2 = conv2d_vjp(h2, net2, dnn);
    const Tensor4<T> da2 = relu_vjp(cache.a2, v2.dx);
    ConvVjp<T> v1 = conv2d_vjp(h1, net1, da2);
    const Tensor4<T> da1 = relu_vjp(cache.a1, v1.dx);
    ConvVjp<T> v0 = conv2d_vjp(cache.xb, net0, da1);

    accumulate(g.g0, v0);
    accumulate(g.g1, v1);
    accumulate(g.g2, v2);

    Tensor4<T> dxb = std::move(v0.dx);
    for (std::size_t i = 0; i < dxb.flat().size(); ++i)
      dxb.flat()[i] += dyb.flat()[i];
    return concat_channels(dxa, dxb);
  }

 private:
  static void accumulate(ConvKernelGrad<T>& g, const ConvVjp<T>& v) {
    for (std::size_t i = 0; i < v.dw.size(); ++i) g.dw[i] += v.dw[i];
    for (std::size_t i = 0; i < v.db.size(); ++i) g.db[i] += v.db[i];
  }
};

template <typename T>
CouplingGrad<T>::CouplingGrad(const Coupling<T>& c)
    : g0(c.net0), g1(c.net1), g2(c.net2) {}

}  // namespace glow
