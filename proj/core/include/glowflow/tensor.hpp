#pragma once

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "glowflow/errors.hpp"
#include "glowflow/rng.hpp"

namespace glow {

// Rank-4 tensor in batch-major (n, h, w, c) layout, the value type flowing
// through every layer. Data is row-major with channels fastest.
template <typename T>
class Tensor4 {
  static_assert(std::is_floating_point_v<T>, "Tensor4 requires f32 or f64");

 public:
  Tensor4() = default;

  Tensor4(int n, int h, int w, int c) : n_(n), h_(h), w_(w), c_(c) {
    if (n < 1 || h < 1 || w < 1 || c < 1) {
      throw ShapeError("Tensor4 dims must all be >= 1, got (" +
                       std::to_string(n) + "," + std::to_string(h) + "," +
                       std::to_string(w) + "," + std::to_string(c) + ")");
    }
    data_.assign(static_cast<std::size_t>(n) * h * w * c, T(0));
  }

  int n() const { return n_; }
  int h() const { return h_; }
  int w() const { return w_; }
  int c() const { return c_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int n, int i, int j, int k) {
    return data_[((static_cast<std::size_t>(n) * h_ + i) * w_ + j) * c_ + k];
  }
  const T& operator()(int n, int i, int j, int k) const {
    return data_[((static_cast<std::size_t>(n) * h_ + i) * w_ + j) * c_ + k];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& flat() { return data_; }
  const std::vector<T>& flat() const { return data_; }

  bool same_dims(const Tensor4& o) const {
    return n_ == o.n_ && h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }

  std::string dims_str() const {
    return "(" + std::to_string(n_) + "," + std::to_string(h_) + "," +
           std::to_string(w_) + "," + std::to_string(c_) + ")";
  }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(n_, h_, w_, c_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out.flat()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  int n_ = 0, h_ = 0, w_ = 0, c_ = 0;
  std::vector<T> data_;
};

template <typename T>
Tensor4<T> zeros_like(const Tensor4<T>& x) {
  return Tensor4<T>(x.n(), x.h(), x.w(), x.c());
}

// NaN/Inf are forbidden after any op; violations raise NumericsError.
template <typename T>
void ensure_finite(const Tensor4<T>& t, const char* what) {
  for (const T v : t.flat()) {
    if (!std::isfinite(v)) {
      throw NumericsError(std::string("non-finite value after ") + what);
    }
  }
}

template <typename T>
void ensure_finite(const std::vector<T>& v, const char* what) {
  for (const T x : v) {
    if (!std::isfinite(x)) {
      throw NumericsError(std::string("non-finite value after ") + what);
    }
  }
}

// Worker count for batch-parallel ops, capped by the FLOW_THREADS env var.
// Defaults to 1; results are bit-identical for any setting because every
// output element is written by exactly one worker.
inline int flow_threads() {
  static const int n = [] {
    const char* env = std::getenv("FLOW_THREADS");
    if (!env) return 1;
    const int v = std::atoi(env);
    if (v < 1) return 1;
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    return hw > 0 && v > hw ? hw : v;
  }();
  return n;
}

// Runs fn(i) for i in [0, count), sharding contiguous chunks over workers.
template <typename F>
void parallel_for(int count, F&& fn) {
  const int threads = flow_threads() < count ? flow_threads() : count;
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const int chunk = (count + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int lo = t * chunk;
    const int hi = lo + chunk < count ? lo + chunk : count;
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// 2D convolution kernel, (kh, kw, c_in, c_out) layout plus a c_out bias.
template <typename T>
struct ConvKernel {
  int kh = 0, kw = 0, cin = 0, cout = 0;
  std::vector<T> w;  // kh*kw*cin*cout
  std::vector<T> b;  // cout

  ConvKernel() = default;
  ConvKernel(int kh_, int kw_, int cin_, int cout_)
      : kh(kh_), kw(kw_), cin(cin_), cout(cout_),
        w(static_cast<std::size_t>(kh_) * kw_ * cin_ * cout_, T(0)),
        b(cout_, T(0)) {
    if ((kh != 1 && kh != 3) || (kw != 1 && kw != 3)) {
      throw ShapeError("conv kernel sizes must be 1 or 3");
    }
  }

  T& at(int ky, int kx, int ci, int co) {
    return w[((static_cast<std::size_t>(ky) * kw + kx) * cin + ci) * cout + co];
  }
  T at(int ky, int kx, int ci, int co) const {
    return w[((static_cast<std::size_t>(ky) * kw + kx) * cin + ci) * cout + co];
  }

  template <typename U>
  ConvKernel<U> cast() const {
    ConvKernel<U> out(kh, kw, cin, cout);
    for (std::size_t i = 0; i < w.size(); ++i) out.w[i] = static_cast<U>(w[i]);
    for (std::size_t i = 0; i < b.size(); ++i) out.b[i] = static_cast<U>(b[i]);
    return out;
  }
};

// 'Same' zero-padded convolution; output is (n, h, w, c_out).
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvKernel<T>& k) {
  if (x.c() != k.cin) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c()) +
                     " channels, kernel expects " + std::to_string(k.cin));
  }
  const int n = x.n(), h = x.h(), w = x.w();
  const int py = k.kh / 2, px = k.kw / 2;
  Tensor4<T> y(n, h, w, k.cout);
  parallel_for(n, [&](int in) {
    std::vector<T> acc(k.cout);
    for (int oy = 0; oy < h; ++oy) {
      for (int ox = 0; ox < w; ++ox) {
        for (int co = 0; co < k.cout; ++co) acc[co] = k.b[co];
        for (int ky = 0; ky < k.kh; ++ky) {
          const int iy = oy + ky - py;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k.kw; ++kx) {
            const int ix = ox + kx - px;
            if (ix < 0 || ix >= w) continue;
            const T* xp = &x(in, iy, ix, 0);
            for (int ci = 0; ci < k.cin; ++ci) {
              const T xv = xp[ci];
              const T* wp = &k.w[((static_cast<std::size_t>(ky) * k.kw + kx) *
                                      k.cin + ci) * k.cout];
              for (int co = 0; co < k.cout; ++co) acc[co] += xv * wp[co];
            }
          }
        }
        T* yp = &y(in, oy, ox, 0);
        for (int co = 0; co < k.cout; ++co) yp[co] = acc[co];
      }
    }
  });
  ensure_finite(y, "conv2d");
  return y;
}

template <typename T>
struct ConvVjp {
  Tensor4<T> dx;
  std::vector<T> dw;
  std::vector<T> db;
};

// Analytic gradients of sum(upstream * conv2d(x, k)) w.r.t. x, weight, bias.
template <typename T>
ConvVjp<T> conv2d_vjp(const Tensor4<T>& x, const ConvKernel<T>& k,
                      const Tensor4<T>& up) {
  if (x.c() != k.cin) throw ShapeError("conv2d_vjp: channel mismatch");
  if (up.n() != x.n() || up.h() != x.h() || up.w() != x.w() ||
      up.c() != k.cout) {
    throw ShapeError("conv2d_vjp: upstream dims " + up.dims_str() +
                     " do not match forward output");
  }
  const int n = x.n(), h = x.h(), w = x.w();
  const int py = k.kh / 2, px = k.kw / 2;
  ConvVjp<T> g;
  g.dx = zeros_like(x);
  g.dw.assign(k.w.size(), T(0));
  g.db.assign(k.b.size(), T(0));

  // dx: each sample is written by exactly one worker.
  parallel_for(n, [&](int in) {
    for (int oy = 0; oy < h; ++oy) {
      for (int ox = 0; ox < w; ++ox) {
        const T* upp = &up(in, oy, ox, 0);
        for (int ky = 0; ky < k.kh; ++ky) {
          const int iy = oy + ky - py;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k.kw; ++kx) {
            const int ix = ox + kx - px;
            if (ix < 0 || ix >= w) continue;
            T* dxp = &g.dx(in, iy, ix, 0);
            for (int ci = 0; ci < k.cin; ++ci) {
              const T* wp = &k.w[((static_cast<std::size_t>(ky) * k.kw + kx) *
                                      k.cin + ci) * k.cout];
              T s = 0;
              for (int co = 0; co < k.cout; ++co) s += wp[co] * upp[co];
              dxp[ci] += s;
            }
          }
        }
      }
    }
  });

  // dw/db: sharded over output channels so each weight has one writer and a
  // fixed accumulation order regardless of thread count.
  parallel_for(k.cout, [&](int co) {
    T bsum = 0;
    for (int in = 0; in < n; ++in) {
      for (int oy = 0; oy < h; ++oy) {
        for (int ox = 0; ox < w; ++ox) {
          const T u = up(in, oy, ox, co);
          bsum += u;
          for (int ky = 0; ky < k.kh; ++ky) {
            const int iy = oy + ky - py;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k.kw; ++kx) {
              const int ix = ox + kx - px;
              if (ix < 0 || ix >= w) continue;
              const T* xp = &x(in, iy, ix, 0);
              for (int ci = 0; ci < k.cin; ++ci) {
                g.dw[((static_cast<std::size_t>(ky) * k.kw + kx) * k.cin + ci) *
                         k.cout + co] += xp[ci] * u;
              }
            }
          }
        }
      }
    }
    g.db[co] = bsum;
  });
  ensure_finite(g.dx, "conv2d_vjp");
  ensure_finite(g.dw, "conv2d_vjp dw");
  return g;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (T& v : y.flat()) v = v > T(0) ? v : T(0);
  return y;
}

// Masks upstream where x <= 0 (the kink itself propagates no gradient).
template <typename T>
Tensor4<T> relu_vjp(const Tensor4<T>& x, const Tensor4<T>& up) {
  if (!x.same_dims(up)) throw ShapeError("relu_vjp: dims mismatch");
  Tensor4<T> dx = up;
  const std::vector<T>& xf = x.flat();
  std::vector<T>& df = dx.flat();
  for (std::size_t i = 0; i < xf.size(); ++i) {
    if (xf[i] <= T(0)) df[i] = T(0);
  }
  return dx;
}

// Per-channel y = s * x + b at every spatial position.
template <typename T>
Tensor4<T> channel_affine(const Tensor4<T>& x, const std::vector<T>& s,
                          const std::vector<T>& b) {
  if (static_cast<int>(s.size()) != x.c() ||
      static_cast<int>(b.size()) != x.c()) {
    throw ShapeError("channel_affine: scale/bias length must equal channels");
  }
  Tensor4<T> y = x;
  const int c = x.c();
  std::vector<T>& f = y.flat();
  for (std::size_t i = 0; i < f.size(); ++i) {
    const int k = static_cast<int>(i % c);
    f[i] = s[k] * f[i] + b[k];
  }
  ensure_finite(y, "channel_affine");
  return y;
}

template <typename T>
struct ChannelAffineVjp {
  Tensor4<T> dx;
  std::vector<T> ds;
  std::vector<T> db;
};

template <typename T>
ChannelAffineVjp<T> channel_affine_vjp(const Tensor4<T>& x,
                                       const std::vector<T>& s,
                                       const Tensor4<T>& up) {
  if (static_cast<int>(s.size()) != x.c())
    throw ShapeError("channel_affine_vjp: scale length mismatch");
  if (!x.same_dims(up)) throw ShapeError("channel_affine_vjp: dims mismatch");
  ChannelAffineVjp<T> g;
  g.dx = zeros_like(x);
  g.ds.assign(x.c(), T(0));
  g.db.assign(x.c(), T(0));
  const int c = x.c();
  const std::vector<T>& xf = x.flat();
  const std::vector<T>& uf = up.flat();
  std::vector<T>& dxf = g.dx.flat();
  for (std::size_t i = 0; i < xf.size(); ++i) {
    const int k = static_cast<int>(i % c);
    dxf[i] = uf[i] * s[k];
    g.ds[k] += uf[i] * xf[i];
    g.db[k] += uf[i];
  }
  return g;
}

template <typename T>
double sum(const Tensor4<T>& x) {
  double acc = 0;
  for (const T v : x.flat()) acc += static_cast<double>(v);
  return acc;
}

// Statistics over the n*h*w axis per channel; variance uses the population
// denominator because actnorm init targets the batch itself.
template <typename T>
std::vector<double> mean_per_channel(const Tensor4<T>& x) {
  const int c = x.c();
  std::vector<double> m(c, 0.0);
  const std::vector<T>& f = x.flat();
  for (std::size_t i = 0; i < f.size(); ++i) m[i % c] += f[i];
  const double count = static_cast<double>(x.size() / c);
  for (double& v : m) v /= count;
  return m;
}

template <typename T>
std::vector<double> var_per_channel(const Tensor4<T>& x) {
  const int c = x.c();
  const std::vector<double> m = mean_per_channel(x);
  std::vector<double> v(c, 0.0);
  const std::vector<T>& f = x.flat();
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double d = static_cast<double>(f[i]) - m[i % c];
    v[i % c] += d * d;
  }
  const double count = static_cast<double>(x.size() / c);
  for (double& x2 : v) x2 /= count;
  return v;
}

template <typename T>
void fill_normal(std::vector<T>& v, Rng& rng, double mean, double stddev) {
  for (T& x : v) x = static_cast<T>(mean + stddev * rng.normal());
}

template <typename T>
void fill_normal(Tensor4<T>& t, Rng& rng, double mean, double stddev) {
  fill_normal(t.flat(), rng, mean, stddev);
}

}  // namespace glow
