#pragma once

#include <string>
#include <vector>

#include "glowflow/data.hpp"
#include "glowflow/errors.hpp"
#include "glowflow/model.hpp"
#include "glowflow/objective.hpp"

// Latent-space machinery: interpolation between encoded datapoints and
// attribute-direction manipulation. Both are exact affine operations in z;
// all approximation error comes from the flow round-trip.
namespace glow {

// decode((1-t) z1 + t z2) for t evenly spaced in [0,1]; endpoints decode
// back to the inputs.
template <typename T>
std::vector<Tensor4<T>> interpolate(const FlowModel<T>& model,
                                    const Tensor4<T>& x1, const Tensor4<T>& x2,
                                    int steps) {
  if (steps < 2) throw ArgError("interpolate: steps must be >= 2");
  if (!x1.same_dims(x2)) {
    throw ShapeError("interpolate: endpoint dims differ");
  }
  const LatentRecord<T> z1 = model.encode(x1).lat;
  const LatentRecord<T> z2 = model.encode(x2).lat;
  std::vector<Tensor4<T>> out;
  out.reserve(steps);
  for (int i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / (steps - 1);
    out.push_back(model.decode(lerp(z1, z2, t)));
  }
  return out;
}

// Mean-latent difference z_pos - z_neg over a binary-labeled dataset. The
// direction is kept unnormalized; alpha is the caller's scale knob.
template <typename T>
struct AttributeDirection {
  LatentRecord<T> direction;
  std::string attribute;
  std::size_t positive_count = 0;
  std::size_t negative_count = 0;
};

template <typename T>
AttributeDirection<T> attribute_direction(const FlowModel<T>& model,
                                          const Dataset& data,
                                          const std::vector<int>& labels,
                                          std::uint64_t noise_seed = 0,
                                          const std::string& name = "attr") {
  if (labels.size() != data.count) {
    throw ShapeError("attribute_direction: one label per dataset item");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (labels[i] ? pos : neg).push_back(i);
  }
  if (pos.empty() || neg.empty()) {
    throw DataError("attribute_direction: both label classes must be nonempty");
  }

  // Noise is keyed to the item index, so the direction only depends on the
  // label partition, not on the order items are processed in.
  const std::uint64_t base = derive_seed(noise_seed, seed_stream::dequant_noise);
  auto mean_latent = [&](const std::vector<std::size_t>& idx) {
    LatentRecord<T> acc;
    const std::size_t chunk = 64;
    std::size_t done = 0;
    while (done < idx.size()) {
      const std::size_t n = std::min(chunk, idx.size() - done);
      const IntBatch b = data.gather(
          {idx.begin() + done, idx.begin() + done + n});
      Tensor4<T> x(b.n, b.h, b.w, b.c);
      const std::size_t item = data.item_size();
      for (std::size_t q = 0; q < n; ++q) {
        Rng noise(derive_seed(base, idx[done + q]));
        IntBatch one;
        one.n = 1;
        one.h = b.h;
        one.w = b.w;
        one.c = b.c;
        one.pixels.assign(b.pixels.begin() + q * item,
                          b.pixels.begin() + (q + 1) * item);
        const Tensor4<T> xi = dequantize<T>(one, data.n_bits, noise);
        std::copy(xi.flat().begin(), xi.flat().end(),
                  x.flat().begin() + q * item);
      }
      const LatentRecord<T> z = model.encode(x).lat;
      for (std::size_t p = 0; p < z.parts.size(); ++p) {
        const Tensor4<T>& part = z.parts[p];
        if (acc.parts.size() <= p) {
          acc.parts.emplace_back(1, part.h(), part.w(), part.c());
        }
        for (int in = 0; in < part.n(); ++in)
          for (int i = 0; i < part.h(); ++i)
            for (int j = 0; j < part.w(); ++j)
              for (int k = 0; k < part.c(); ++k)
                acc.parts[p](0, i, j, k) += part(in, i, j, k);
      }
      done += n;
    }
    for (Tensor4<T>& part : acc.parts) {
      for (T& v : part.flat()) v /= static_cast<T>(idx.size());
    }
    return acc;
  };

  const LatentRecord<T> zp = mean_latent(pos);
  const LatentRecord<T> zn = mean_latent(neg);
  AttributeDirection<T> dir;
  dir.attribute = name;
  dir.positive_count = pos.size();
  dir.negative_count = neg.size();
  for (std::size_t p = 0; p < zp.parts.size(); ++p) {
    Tensor4<T> d = zp.parts[p];
    const std::vector<T>& nf = zn.parts[p].flat();
    std::vector<T>& df = d.flat();
    for (std::size_t i = 0; i < df.size(); ++i) df[i] -= nf[i];
    dir.direction.parts.push_back(std::move(d));
  }
  return dir;
}

// decode(encode(x) + alpha * dir) per alpha; alpha = 0 reproduces x up to
// the round-trip tolerance. The direction applies uniformly to all parts.
template <typename T>
std::vector<Tensor4<T>> manipulate(const FlowModel<T>& model,
                                   const Tensor4<T>& x,
                                   const LatentRecord<T>& dir,
                                   const std::vector<double>& alphas) {
  const LatentRecord<T> z = model.encode(x).lat;
  // A direction is computed for batch 1; broadcast it over x's batch.
  std::vector<Tensor4<T>> out;
  out.reserve(alphas.size());
  for (const double a : alphas) {
    LatentRecord<T> shifted;
    for (std::size_t p = 0; p < z.parts.size(); ++p) {
      Tensor4<T> part = z.parts[p];
      const Tensor4<T>& d = dir.parts[p];
      if (d.h() != part.h() || d.w() != part.w() || d.c() != part.c()) {
        throw ShapeError("manipulate: direction dims mismatch");
      }
      for (int in = 0; in < part.n(); ++in)
        for (int i = 0; i < part.h(); ++i)
          for (int j = 0; j < part.w(); ++j)
            for (int k = 0; k < part.c(); ++k)
              part(in, i, j, k) =
                  static_cast<T>(part(in, i, j, k) + a * d(0, i, j, k));
      shifted.parts.push_back(std::move(part));
    }
    out.push_back(model.decode(shifted));
  }
  return out;
}

}  // namespace glow
