#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "glowflow/errors.hpp"
#include "glowflow/layers.hpp"
#include "glowflow/rng.hpp"
#include "glowflow/tensor.hpp"

// The composed Glow flow: L levels, each squeeze -> K steps of
// (actnorm -> channel mixer -> coupling) -> split, except that the last
// level keeps everything. Split-off latents carry a standard normal prior.
namespace glow {

enum class PermVariant { reverse, shuffle, invconv };

inline const char* to_string(PermVariant v) {
  switch (v) {
    case PermVariant::reverse: return "reverse";
    case PermVariant::shuffle: return "shuffle";
    case PermVariant::invconv: return "invconv";
  }
  return "?";
}
inline const char* to_string(CouplingMode m) {
  return m == CouplingMode::affine ? "affine" : "additive";
}
inline const char* to_string(InvConvParam p) {
  return p == InvConvParam::dense ? "dense" : "lu";
}

struct InputShape {
  int h = 0, w = 0, c = 0;
};

struct GlowConfig {
  int K = 2;                 // steps of flow per level
  int L = 1;                 // levels
  CouplingMode coupling = CouplingMode::affine;
  PermVariant perm = PermVariant::invconv;
  InvConvParam invconv_param = InvConvParam::dense;
  int hidden_channels = 512;
  InputShape input;
  int n_bits = 8;

  // A 1x1 spatial input is the degenerate toy case: the squeeze is skipped
  // and only L = 1 is meaningful.
  bool degenerate_spatial() const { return input.h == 1 && input.w == 1; }

  // Collects every problem instead of stopping at the first; shape_issue
  // distinguishes divisibility/channel constraints from plain bad values.
  std::vector<std::string> validation_errors(bool* shape_issue = nullptr) const {
    std::vector<std::string> errs;
    bool shape = false;
    if (K < 1) errs.push_back("K must be >= 1");
    if (L < 1) errs.push_back("L must be >= 1");
    if (L > 16) errs.push_back("L must be <= 16");
    if (n_bits < 1 || n_bits > 8) errs.push_back("n_bits must be in [1,8]");
    if (hidden_channels < 1) errs.push_back("hidden_channels must be >= 1");
    if (input.h < 1 || input.w < 1 || input.c < 1) {
      errs.push_back("input shape must be set");
    } else if (degenerate_spatial()) {
      if (L != 1) {
        errs.push_back("1x1 spatial input requires L == 1");
        shape = true;
      }
      if (input.c % 2 != 0) {
        errs.push_back("1x1 input needs an even channel count");
        shape = true;
      }
    } else if (L >= 1 && L <= 16) {
      const int div = 1 << L;
      if (input.h % div != 0 || input.w % div != 0) {
        errs.push_back("h and w must be divisible by 2^L = " +
                       std::to_string(div) + ", got " +
                       std::to_string(input.h) + "x" + std::to_string(input.w));
        shape = true;
      } else {
        int c = input.c;
        for (int l = 0; l < L; ++l) {
          c *= 4;  // squeeze
          if (c % 2 != 0) {
            errs.push_back("channels after squeeze at level " +
                           std::to_string(l) + " must be even");
            shape = true;
          }
          if (l < L - 1) c /= 2;  // split
        }
      }
    }
    if (shape_issue) *shape_issue = shape;
    return errs;
  }

  void validate() const {
    bool shape = false;
    const std::vector<std::string> errs = validation_errors(&shape);
    if (errs.empty()) return;
    std::string msg = "config:";
    for (const std::string& e : errs) msg += " " + e + ";";
    msg.pop_back();
    if (shape) throw ShapeError(msg);
    throw ArgError(msg);
  }

  // Channel count entering the steps of each level.
  std::vector<int> level_channels() const {
    std::vector<int> out;
    int c = input.c;
    for (int l = 0; l < L; ++l) {
      if (!degenerate_spatial()) c *= 4;
      out.push_back(c);
      if (l < L - 1) c /= 2;
    }
    return out;
  }
};

template <typename T>
struct ChannelMixer {
  PermVariant kind = PermVariant::reverse;
  ChannelPerm perm;      // reverse / shuffle
  InvConv<T> conv;       // invconv

  std::pair<Tensor4<T>, LogDet<T>> forward(const Tensor4<T>& x) const {
    if (kind == PermVariant::invconv) return conv.forward(x);
    return {permute_channels(x, perm.fwd), LogDet<T>(x.n(), T(0))};
  }

  Tensor4<T> inverse(const Tensor4<T>& y) const {
    if (kind == PermVariant::invconv) return conv.inverse(y);
    return permute_channels(y, perm.inv);
  }

  Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& dy,
                      T dlogdet_sum, InvConvGrad<T>* g) const {
    if (kind == PermVariant::invconv) return conv.backward(x, dy, dlogdet_sum, *g);
    // A fixed permutation is orthogonal: the vjp is the inverse map.
    return permute_channels(dy, perm.inv);
  }
};

template <typename T>
struct FlowStep {
  ActNorm<T> actnorm;
  ChannelMixer<T> mixer;
  Coupling<T> coupling;
};

template <typename T>
struct StepGrad {
  ActNormGrad<T> actnorm;
  InvConvGrad<T> invconv;  // unused for reverse/shuffle
  CouplingGrad<T> coupling;
  explicit StepGrad(const FlowStep<T>& s)
      : actnorm(s.actnorm.channels()),
        invconv(s.mixer.kind == PermVariant::invconv ? s.mixer.conv.param
                                                     : InvConvParam::dense,
                s.mixer.kind == PermVariant::invconv ? s.mixer.conv.c : 1),
        coupling(s.coupling) {}
};

// Latent image of one datapoint: one tensor per split plus the final level
// output, in flow order. Total element count equals the input's.
template <typename T>
struct LatentRecord {
  std::vector<Tensor4<T>> parts;

  std::size_t total_elements() const {
    std::size_t s = 0;
    for (const auto& p : parts) s += p.size();
    return s;
  }
  int batch() const { return parts.empty() ? 0 : parts.front().n(); }
};

template <typename T>
struct EncodeResult {
  LatentRecord<T> lat;
  LogDet<T> logdet;  // per sample, nats
};

template <typename T>
struct StepTape {
  Tensor4<T> x_act;  // input to actnorm
  Tensor4<T> x_mix;  // input to the channel mixer
  typename Coupling<T>::Cache cpl;
};

template <typename T>
struct EncodeTape {
  std::vector<std::vector<StepTape<T>>> levels;
};

struct LatentShape {
  int h = 0, w = 0, c = 0;
  std::size_t elements() const {
    return static_cast<std::size_t>(h) * w * c;
  }
};

template <typename T>
class FlowModel {
 public:
  GlowConfig cfg;
  std::vector<std::vector<FlowStep<T>>> levels;  // [L][K]
  std::uint64_t build_seed = 0;

  static FlowModel build(const GlowConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    FlowModel m;
    m.cfg = cfg;
    m.build_seed = seed;
    Rng rng(derive_seed(seed, seed_stream::model_init));
    const std::vector<int> chans = cfg.level_channels();
    m.levels.resize(cfg.L);
    for (int l = 0; l < cfg.L; ++l) {
      const int c = chans[l];
      for (int k = 0; k < cfg.K; ++k) {
        FlowStep<T> step;
        step.actnorm = ActNorm<T>(c);
        step.mixer.kind = cfg.perm;
        if (cfg.perm == PermVariant::reverse) {
          step.mixer.perm = ChannelPerm::reverse(c);
        } else if (cfg.perm == PermVariant::shuffle) {
          step.mixer.perm = ChannelPerm::shuffle(c, rng);
        } else {
          step.mixer.conv =
              InvConv<T>::random_rotation_init(c, cfg.invconv_param, rng);
        }
        step.coupling =
            Coupling<T>::init(c, cfg.hidden_channels, cfg.coupling, rng);
        m.levels[l].push_back(std::move(step));
      }
    }
    return m;
  }

  bool squeezes() const { return !cfg.degenerate_spatial(); }

  // Marks every actnorm initialized at the identity (s=1, b=0), for use
  // where data-dependent initialization is deliberately skipped.
  void mark_actnorms_identity() {
    for (auto& level : levels)
      for (auto& step : level) step.actnorm.initialized = true;
  }

  bool actnorms_initialized() const {
    for (const auto& level : levels)
      for (const auto& step : level)
        if (!step.actnorm.initialized) return false;
    return true;
  }

  std::vector<LatentShape> latent_shapes() const {
    std::vector<LatentShape> out;
    int h = cfg.input.h, w = cfg.input.w, c = cfg.input.c;
    for (int l = 0; l < cfg.L; ++l) {
      if (squeezes()) {
        h /= 2;
        w /= 2;
        c *= 4;
      }
      if (l < cfg.L - 1) {
        c /= 2;
        out.push_back({h, w, c});
      } else {
        out.push_back({h, w, c});
      }
    }
    return out;
  }

  EncodeResult<T> encode(const Tensor4<T>& x, EncodeTape<T>* tape = nullptr,
                         bool init_pass = false) const {
    check_input(x);
    EncodeResult<T> res;
    res.logdet.assign(x.n(), T(0));
    if (tape) tape->levels.assign(cfg.L, {});
    Tensor4<T> h = x;
    for (int l = 0; l < cfg.L; ++l) {
      if (squeezes()) h = squeeze(h);
      for (int k = 0; k < cfg.K; ++k) {
        const FlowStep<T>& step = levels[l][k];
        StepTape<T>* st = nullptr;
        if (tape) {
          tape->levels[l].emplace_back();
          st = &tape->levels[l].back();
        }
        if (st) st->x_act = h;
        auto [y1, ld1] = step.actnorm.forward(h, init_pass);
        if (st) st->x_mix = y1;
        auto [y2, ld2] = step.mixer.forward(y1);
        auto [y3, ld3] =
            step.coupling.forward(y2, st ? &st->cpl : nullptr);
        h = std::move(y3);
        for (int i = 0; i < x.n(); ++i)
          res.logdet[i] += ld1[i] + ld2[i] + ld3[i];
      }
      if (l < cfg.L - 1) {
        auto [keep, z] = split_channels(h);
        res.lat.parts.push_back(std::move(z));
        h = std::move(keep);
      } else {
        res.lat.parts.push_back(std::move(h));
      }
    }
    ensure_finite(res.logdet, "encode logdet");
    return res;
  }

  Tensor4<T> decode(const LatentRecord<T>& lat) const {
    check_latents(lat);
    Tensor4<T> h = lat.parts.back();
    for (int l = cfg.L - 1; l >= 0; --l) {
      if (l < cfg.L - 1) h = concat_channels(h, lat.parts[l]);
      for (int k = cfg.K - 1; k >= 0; --k) {
        const FlowStep<T>& step = levels[l][k];
        h = step.actnorm.inverse(
            step.mixer.inverse(step.coupling.inverse(h)));
      }
      if (squeezes()) h = unsqueeze(h);
    }
    return h;
  }

  // log p(x) per sample in nats: standard-normal log density of the latents
  // plus the accumulated log-determinant (exact constant included).
  std::vector<T> log_prob(const Tensor4<T>& x) const {
    const EncodeResult<T> enc = encode(x);
    return log_prob_from(enc);
  }

  std::vector<T> log_prob_from(const EncodeResult<T>& enc) const {
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    const int n = static_cast<int>(enc.logdet.size());
    std::vector<double> acc(n, 0.0);
    std::size_t dims = 0;
    for (const Tensor4<T>& part : enc.lat.parts) {
      dims += part.size() / n;
      for (int in = 0; in < n; ++in)
        for (int i = 0; i < part.h(); ++i)
          for (int j = 0; j < part.w(); ++j)
            for (int k = 0; k < part.c(); ++k) {
              const double z = part(in, i, j, k);
              acc[in] -= 0.5 * z * z;
            }
    }
    std::vector<T> out(n);
    for (int in = 0; in < n; ++in) {
      out[in] = static_cast<T>(acc[in] - 0.5 * kLog2Pi * dims +
                               enc.logdet[in]);
    }
    ensure_finite(out, "log_prob");
    return out;
  }

  // Draws z ~ N(0, T^2 I) per element with a dedicated seeded stream.
  LatentRecord<T> sample_latents(int n, double temperature,
                                 std::uint64_t seed) const {
    if (temperature < 0) throw ArgError("temperature must be >= 0");
    Rng rng(derive_seed(seed, seed_stream::sample));
    LatentRecord<T> lat;
    for (const LatentShape& ls : latent_shapes()) {
      Tensor4<T> z(n, ls.h, ls.w, ls.c);
      for (T& v : z.flat())
        v = static_cast<T>(temperature * rng.normal());
      lat.parts.push_back(std::move(z));
    }
    return lat;
  }

  Tensor4<T> sample(int n, double temperature, std::uint64_t seed) const {
    return decode(sample_latents(n, temperature, seed));
  }

  // Reverse-mode pass. dlat holds dL/dz per latent part, dlogdet the
  // per-sample dL/dlogdet_i. Returns dL/dx and accumulates per-parameter
  // gradients into grads (which must be built from this model).
  Tensor4<T> backward(const EncodeTape<T>& tape, const LatentRecord<T>& dlat,
                      const LogDet<T>& dlogdet,
                      std::vector<std::vector<StepGrad<T>>>& grads) const {
    T dld_sum = 0;
    for (const T v : dlogdet) dld_sum += v;

    Tensor4<T> g = dlat.parts.back();
    for (int l = cfg.L - 1; l >= 0; --l) {
      if (l < cfg.L - 1) g = concat_channels(g, dlat.parts[l]);
      for (int k = cfg.K - 1; k >= 0; --k) {
        const FlowStep<T>& step = levels[l][k];
        const StepTape<T>& st = tape.levels[l][k];
        StepGrad<T>& sg = grads[l][k];
        g = step.coupling.backward(st.cpl, g, dlogdet, sg.coupling);
        g = step.mixer.backward(
            st.x_mix, g, dld_sum,
            step.mixer.kind == PermVariant::invconv ? &sg.invconv : nullptr);
        g = step.actnorm.backward(st.x_act, g, dld_sum, sg.actnorm);
      }
      if (squeezes()) g = unsqueeze(g);
    }
    return g;
  }

  std::vector<std::vector<StepGrad<T>>> zero_grads() const {
    std::vector<std::vector<StepGrad<T>>> g;
    g.reserve(levels.size());
    for (const auto& level : levels) {
      std::vector<StepGrad<T>> lg;
      lg.reserve(level.size());
      for (const auto& step : level) lg.emplace_back(step);
      g.push_back(std::move(lg));
    }
    return g;
  }

  // Visits every trainable parameter in a fixed topological order. The same
  // order defines optimizer state, checkpoints and gradient flattening.
  // fn(name, params_vector) — note P of the LU parameterization and the
  // actnorm init flags are deliberately not visited.
  template <typename F>
  void visit_params(F&& fn) {
    for (std::size_t l = 0; l < levels.size(); ++l) {
      for (std::size_t k = 0; k < levels[l].size(); ++k) {
        const std::string base =
            "level" + std::to_string(l) + ".step" + std::to_string(k) + ".";
        FlowStep<T>& s = levels[l][k];
        fn(base + "actnorm.s", s.actnorm.s);
        fn(base + "actnorm.b", s.actnorm.b);
        if (s.mixer.kind == PermVariant::invconv) {
          if (s.mixer.conv.param == InvConvParam::dense) {
            fn(base + "invconv.w", s.mixer.conv.w);
          } else {
            fn(base + "invconv.l", s.mixer.conv.lower);
            fn(base + "invconv.u", s.mixer.conv.upper);
            fn(base + "invconv.s", s.mixer.conv.svec);
          }
        }
        fn(base + "coupling.net0.w", s.coupling.net0.w);
        fn(base + "coupling.net0.b", s.coupling.net0.b);
        fn(base + "coupling.net1.w", s.coupling.net1.w);
        fn(base + "coupling.net1.b", s.coupling.net1.b);
        fn(base + "coupling.net2.w", s.coupling.net2.w);
        fn(base + "coupling.net2.b", s.coupling.net2.b);
      }
    }
  }

  // Same traversal zipped with a grad structure.
  template <typename F>
  void visit_params_with_grads(std::vector<std::vector<StepGrad<T>>>& grads,
                               F&& fn) {
    for (std::size_t l = 0; l < levels.size(); ++l) {
      for (std::size_t k = 0; k < levels[l].size(); ++k) {
        const std::string base =
            "level" + std::to_string(l) + ".step" + std::to_string(k) + ".";
        FlowStep<T>& s = levels[l][k];
        StepGrad<T>& g = grads[l][k];
        fn(base + "actnorm.s", s.actnorm.s, g.actnorm.ds);
        fn(base + "actnorm.b", s.actnorm.b, g.actnorm.db);
        if (s.mixer.kind == PermVariant::invconv) {
          if (s.mixer.conv.param == InvConvParam::dense) {
            fn(base + "invconv.w", s.mixer.conv.w, g.invconv.dw);
          } else {
            fn(base + "invconv.l", s.mixer.conv.lower, g.invconv.dl);
            fn(base + "invconv.u", s.mixer.conv.upper, g.invconv.du);
            fn(base + "invconv.s", s.mixer.conv.svec, g.invconv.ds);
          }
        }
        fn(base + "coupling.net0.w", s.coupling.net0.w, g.coupling.g0.dw);
        fn(base + "coupling.net0.b", s.coupling.net0.b, g.coupling.g0.db);
        fn(base + "coupling.net1.w", s.coupling.net1.w, g.coupling.g1.dw);
        fn(base + "coupling.net1.b", s.coupling.net1.b, g.coupling.g1.db);
        fn(base + "coupling.net2.w", s.coupling.net2.w, g.coupling.g2.dw);
        fn(base + "coupling.net2.b", s.coupling.net2.b, g.coupling.g2.db);
      }
    }
  }

  std::size_t param_count() {
    std::size_t n = 0;
    visit_params([&](const std::string&, std::vector<T>& p) { n += p.size(); });
    return n;
  }

  template <typename U>
  FlowModel<U> cast() const {
    FlowModel<U> out;
    out.cfg = cfg;
    out.build_seed = build_seed;
    out.levels.resize(levels.size());
    for (std::size_t l = 0; l < levels.size(); ++l) {
      for (const FlowStep<T>& s : levels[l]) {
        FlowStep<U> o;
        o.actnorm.s.assign(s.actnorm.s.begin(), s.actnorm.s.end());
        o.actnorm.b.assign(s.actnorm.b.begin(), s.actnorm.b.end());
        o.actnorm.initialized = s.actnorm.initialized;
        o.mixer.kind = s.mixer.kind;
        o.mixer.perm = s.mixer.perm;
        o.mixer.conv.param = s.mixer.conv.param;
        o.mixer.conv.c = s.mixer.conv.c;
        o.mixer.conv.w.assign(s.mixer.conv.w.begin(), s.mixer.conv.w.end());
        o.mixer.conv.perm = s.mixer.conv.perm;
        o.mixer.conv.lower.assign(s.mixer.conv.lower.begin(),
                                  s.mixer.conv.lower.end());
        o.mixer.conv.upper.assign(s.mixer.conv.upper.begin(),
                                  s.mixer.conv.upper.end());
        o.mixer.conv.svec.assign(s.mixer.conv.svec.begin(),
                                 s.mixer.conv.svec.end());
        o.coupling.mode = s.coupling.mode;
        o.coupling.c = s.coupling.c;
        o.coupling.hidden = s.coupling.hidden;
        o.coupling.net0 = s.coupling.net0.template cast<U>();
        o.coupling.net1 = s.coupling.net1.template cast<U>();
        o.coupling.net2 = s.coupling.net2.template cast<U>();
        out.levels[l].push_back(std::move(o));
      }
    }
    return out;
  }

 private:
  void check_input(const Tensor4<T>& x) const {
    if (x.h() != cfg.input.h || x.w() != cfg.input.w || x.c() != cfg.input.c) {
      throw ShapeError("encode: input " + x.dims_str() +
                       " does not match configured shape");
    }
  }

  void check_latents(const LatentRecord<T>& lat) const {
    const std::vector<LatentShape> shapes = latent_shapes();
    if (lat.parts.size() != shapes.size()) {
      throw ShapeError("decode: expected " + std::to_string(shapes.size()) +
                       " latent parts, got " + std::to_string(lat.parts.size()));
    }
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const Tensor4<T>& p = lat.parts[i];
      if (p.h() != shapes[i].h || p.w() != shapes[i].w || p.c() != shapes[i].c) {
        throw ShapeError("decode: latent part " + std::to_string(i) +
                         " has dims " + p.dims_str());
      }
      if (p.n() != lat.parts[0].n()) {
        throw ShapeError("decode: inconsistent batch across latent parts");
      }
    }
  }
};

// Latent-space affine helpers shared by sampling and latent manipulation.
template <typename T>
LatentRecord<T> lerp(const LatentRecord<T>& a, const LatentRecord<T>& b,
                     double t) {
  if (a.parts.size() != b.parts.size()) {
    throw ShapeError("lerp: latent records differ in structure");
  }
  LatentRecord<T> out;
  for (std::size_t i = 0; i < a.parts.size(); ++i) {
    if (!a.parts[i].same_dims(b.parts[i])) {
      throw ShapeError("lerp: latent part dims mismatch");
    }
    Tensor4<T> p = a.parts[i];
    const std::vector<T>& bf = b.parts[i].flat();
    std::vector<T>& pf = p.flat();
    for (std::size_t j = 0; j < pf.size(); ++j) {
      pf[j] = static_cast<T>((1.0 - t) * pf[j] + t * bf[j]);
    }
    out.parts.push_back(std::move(p));
  }
  return out;
}

template <typename T>
LatentRecord<T> axpy(const LatentRecord<T>& base, double alpha,
                     const LatentRecord<T>& dir) {
  if (base.parts.size() != dir.parts.size()) {
    throw ShapeError("axpy: latent records differ in structure");
  }
  LatentRecord<T> out;
  for (std::size_t i = 0; i < base.parts.size(); ++i) {
    Tensor4<T> p = base.parts[i];
    const std::vector<T>& df = dir.parts[i].flat();
    if (df.size() != p.flat().size()) {
      throw ShapeError("axpy: latent part dims mismatch");
    }
    std::vector<T>& pf = p.flat();
    for (std::size_t j = 0; j < pf.size(); ++j) {
      pf[j] = static_cast<T>(pf[j] + alpha * df[j]);
    }
    out.parts.push_back(std::move(p));
  }
  return out;
}

}  // namespace glow
