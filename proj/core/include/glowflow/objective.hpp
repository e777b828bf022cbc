#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "glowflow/data.hpp"
#include "glowflow/errors.hpp"
#include "glowflow/model.hpp"
#include "glowflow/rng.hpp"
#include "glowflow/tensor.hpp"

// Dequantization, NLL in nats and bits-per-dimension reporting.
namespace glow {

// NLL bookkeeping: total nats include the discretization constant
// c = -M log a with bin width a = 2^-n_bits after scaling pixels to [0,1).
struct BitsPerDim {
  double nats_total = 0;   // mean(-log p) + c, per sample
  std::size_t dims = 0;    // M
  double bin_width = 0;    // a
  double value = 0;        // nats_total / (M log 2)
};

inline double dequant_constant(std::size_t dims, int n_bits) {
  // c = -M log a = M * n_bits * log 2
  return static_cast<double>(dims) * n_bits * std::log(2.0);
}

inline BitsPerDim make_bpd(double mean_nll_nats, std::size_t dims, int n_bits) {
  BitsPerDim b;
  b.dims = dims;
  b.bin_width = std::pow(2.0, -n_bits);
  b.nats_total = mean_nll_nats + dequant_constant(dims, n_bits);
  b.value = b.nats_total / (static_cast<double>(dims) * std::log(2.0));
  if (!std::isfinite(b.value)) throw NumericsError("bits/dim is non-finite");
  return b;
}

// Scales integer pixels to [0,1) and adds u ~ U(0, 2^-n_bits) from the given
// noise stream. The result always stays strictly inside the pixel's bin so
// re-quantization is the identity.
template <typename T>
Tensor4<T> dequantize(const IntBatch& batch, int n_bits, Rng& noise) {
  const int levels = 1 << n_bits;
  const double inv = 1.0 / levels;
  Tensor4<T> x(batch.n, batch.h, batch.w, batch.c);
  std::vector<T>& f = x.flat();
  for (std::size_t i = 0; i < f.size(); ++i) {
    const int p = batch.pixels[i];
    if (p >= levels) {
      throw DataError("pixel value " + std::to_string(p) +
                      " out of range for " + std::to_string(n_bits) + " bits");
    }
    const double v = (p + noise.uniform01()) * inv;
    T t = static_cast<T>(v);
    const T hi = static_cast<T>((p + 1) * inv);
    if (t >= hi) t = std::nextafter(hi, T(0));  // keep inside the bin
    f[i] = t;
  }
  return x;
}

// floor(x * 2^n_bits) clamped to the valid range.
template <typename T>
IntBatch quantize(const Tensor4<T>& x, int n_bits) {
  const int levels = 1 << n_bits;
  IntBatch b;
  b.n = x.n();
  b.h = x.h();
  b.w = x.w();
  b.c = x.c();
  b.pixels.resize(x.size());
  const std::vector<T>& f = x.flat();
  for (std::size_t i = 0; i < f.size(); ++i) {
    int p = static_cast<int>(std::floor(static_cast<double>(f[i]) * levels));
    if (p < 0) p = 0;
    if (p >= levels) p = levels - 1;
    b.pixels[i] = static_cast<std::uint8_t>(p);
  }
  return b;
}

template <typename T>
struct NllResult {
  double nats_mean = 0;          // mean(-log p) + c
  double bpd = 0;
  std::vector<T> per_sample;     // -log p per sample, without c
};

// Mean NLL of an already-dequantized batch, plus bits/dim.
template <typename T>
NllResult<T> nll_loss(const FlowModel<T>& model, const Tensor4<T>& x) {
  const std::vector<T> lp = model.log_prob(x);
  NllResult<T> res;
  res.per_sample.resize(lp.size());
  double acc = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    res.per_sample[i] = -lp[i];
    acc += -static_cast<double>(lp[i]);
  }
  acc /= static_cast<double>(lp.size());
  const std::size_t dims =
      static_cast<std::size_t>(x.h()) * x.w() * x.c();
  const BitsPerDim b = make_bpd(acc, dims, model.cfg.n_bits);
  res.nats_mean = b.nats_total;
  res.bpd = b.value;
  return res;
}

}  // namespace glow
