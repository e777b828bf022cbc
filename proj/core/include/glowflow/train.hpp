#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "glowflow/data.hpp"
#include "glowflow/errors.hpp"
#include "glowflow/model.hpp"
#include "glowflow/objective.hpp"
#include "glowflow/tensor.hpp"

// Adam optimization, data-dependent initialization and the training loop.
namespace glow {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double alpha = 0.001;
  double beta1 = 0.9;  // standard Adam defaults
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig cfg;
  std::int64_t t = 0;
  std::vector<std::vector<T>> m, v;  // aligned with visit_params order

  template <typename Model>
  static AdamState init(Model& model, const AdamConfig& cfg = {}) {
    AdamState st;
    st.cfg = cfg;
    model.visit_params([&](const std::string&, std::vector<T>& p) {
      st.m.emplace_back(p.size(), T(0));
      st.v.emplace_back(p.size(), T(0));
    });
    return st;
  }
};

// Bias-corrected update of one parameter vector at step t (1-based).
// Non-finite gradients abort with the parameter's name.
template <typename T>
void adam_update(std::vector<T>& p, const std::vector<T>& g,
                 std::vector<T>& m, std::vector<T>& v, const AdamConfig& cfg,
                 std::int64_t t, double lr_scale, const std::string& name) {
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw ShapeError("adam_update: moment/gradient shape mismatch in " + name);
  }
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const double lr = cfg.alpha * lr_scale;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i];
    if (!std::isfinite(gi)) {
      throw NumericsError("non-finite gradient in " + name);
    }
    m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * gi);
    v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * gi * gi);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] = static_cast<T>(p[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

// One Adam step over every trainable model parameter. lr_scale multiplies
// alpha (used for warmup).
template <typename T>
void adam_step(FlowModel<T>& model,
               std::vector<std::vector<StepGrad<T>>>& grads, AdamState<T>& st,
               double lr_scale = 1.0) {
  st.t += 1;
  std::size_t idx = 0;
  model.visit_params_with_grads(
      grads,
      [&](const std::string& name, std::vector<T>& p, std::vector<T>& g) {
        adam_update(p, g, st.m[idx], st.v[idx], st.cfg, st.t, lr_scale, name);
        ++idx;
      });
}

// ---------------------------------------------------------------------------
// Loss gradient: mean NLL of a dequantized batch, reverse mode.
// ---------------------------------------------------------------------------

template <typename T>
NllResult<T> nll_loss_grad(FlowModel<T>& model, const Tensor4<T>& x,
                           std::vector<std::vector<StepGrad<T>>>& grads) {
  EncodeTape<T> tape;
  const EncodeResult<T> enc = model.encode(x, &tape);
  const std::vector<T> lp = model.log_prob_from(enc);

  const int n = x.n();
  const T inv_n = static_cast<T>(1.0 / n);
  // loss = (1/n) sum_i [ 0.5||z_i||^2 + D/2 log 2pi - logdet_i ], so
  // dL/dz = z/n and dL/dlogdet_i = -1/n.
  LatentRecord<T> dlat;
  for (const Tensor4<T>& part : enc.lat.parts) {
    Tensor4<T> d = part;
    for (T& v : d.flat()) v *= inv_n;
    dlat.parts.push_back(std::move(d));
  }
  const LogDet<T> dlogdet(n, -inv_n);
  model.backward(tape, dlat, dlogdet, grads);

  NllResult<T> res;
  res.per_sample.resize(lp.size());
  double acc = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    res.per_sample[i] = -lp[i];
    acc += -static_cast<double>(lp[i]);
  }
  acc /= static_cast<double>(n);
  const std::size_t dims = static_cast<std::size_t>(x.h()) * x.w() * x.c();
  const BitsPerDim b = make_bpd(acc, dims, model.cfg.n_bits);
  res.nats_mean = b.nats_total;
  res.bpd = b.value;
  return res;
}

// ---------------------------------------------------------------------------
// Data-dependent initialization (one pass, topological order).
// ---------------------------------------------------------------------------

// Initializes every actnorm sequentially using the activations reaching it:
// earlier layers are initialized and applied before later statistics are
// taken. Returns the number of zero-variance channels that needed the
// epsilon fallback.
template <typename T>
int ddi_pass(FlowModel<T>& model, const Tensor4<T>& init_batch) {
  for (const auto& level : model.levels)
    for (const auto& step : level)
      if (step.actnorm.initialized) {
        throw StateError("ddi_pass: model already initialized");
      }
  int degenerate = 0;
  Tensor4<T> h = init_batch;
  for (int l = 0; l < model.cfg.L; ++l) {
    if (model.squeezes()) h = squeeze(h);
    for (int k = 0; k < model.cfg.K; ++k) {
      FlowStep<T>& step = model.levels[l][k];
      if (step.actnorm.init_from_batch(h)) ++degenerate;
      h = step.actnorm.forward(h).first;
      h = step.mixer.forward(h).first;
      h = step.coupling.forward(h).first;
    }
    if (l < model.cfg.L - 1) h = split_channels(h).first;
  }
  return degenerate;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch_size = 64;
  int total_steps = 1000;
  std::uint64_t seed = 0;
  int eval_every = 100;      // 0 disables periodic eval rows
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  int warmup_steps = 0;      // optional linear LR warmup, off by default
  double lr = 0.001;

  void validate() const {
    if (batch_size < 1) throw ArgError("train: batch_size must be >= 1");
    if (total_steps < 0) throw ArgError("train: total_steps must be >= 0");
  }
};

struct MetricsRow {
  std::int64_t step = 0;
  double nats = 0;  // mean NLL in nats (discretization constant included)
  double bpd = 0;
  double wallclock_ms = 0;
  bool eval = false;  // true for held-out evaluation rows
};

using MetricsSink = std::function<void(const MetricsRow&)>;
// Called at checkpoint cadence; returns the path written so a numerics
// abort can name the last good checkpoint. Persisting is up to the caller
// so the loop stays independent of the checkpoint container.
using CheckpointHook = std::function<std::string(std::int64_t step)>;

struct TrainResult {
  std::int64_t steps = 0;
  double first_nats = 0, first_bpd = 0;
  double final_nats = 0, final_bpd = 0;
};

// Evaluates mean NLL over a dataset with a frozen dequantization stream, so
// eval rows are comparable across training steps.
template <typename T>
NllResult<T> evaluate(const FlowModel<T>& model, const Dataset& data,
                      int batch_size, std::uint64_t noise_seed) {
  Rng noise(derive_seed(noise_seed, seed_stream::dequant_noise));
  double nats_acc = 0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < data.count;
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t bn =
        std::min<std::size_t>(batch_size, data.count - start);
    IntBatch b = data.slice(start, bn);
    const Tensor4<T> x = dequantize<T>(b, data.n_bits, noise);
    const std::vector<T> lp = model.log_prob(x);
    for (const T v : lp) nats_acc += -static_cast<double>(v);
    count += lp.size();
  }
  if (count == 0) throw DataError("evaluate: empty dataset");
  const std::size_t dims =
      static_cast<std::size_t>(data.h) * data.w * data.c;
  const BitsPerDim b = make_bpd(nats_acc / count, dims, model.cfg.n_bits);
  NllResult<T> res;
  res.nats_mean = b.nats_total;
  res.bpd = b.value;
  return res;
}

// Deterministic given cfg.seed: the shuffle, dequantization noise and DDI
// batch are all derived streams. Emits one metrics row per step (train
// batch) and eval rows at the configured cadence.
template <typename T>
TrainResult train_loop(FlowModel<T>& model, const Dataset& train,
                       const Dataset* valid, const TrainConfig& cfg,
                       const MetricsSink& sink = {},
                       const CheckpointHook& checkpoint = {}) {
  cfg.validate();
  if (train.count == 0) throw DataError("train_loop: empty dataset");
  if (train.h != model.cfg.input.h || train.w != model.cfg.input.w ||
      train.c != model.cfg.input.c) {
    throw ShapeError("train_loop: dataset shape does not match model input");
  }
  if (train.n_bits != model.cfg.n_bits) {
    throw DataError("train_loop: dataset n_bits does not match model config");
  }

  Batcher batcher(train, cfg.batch_size,
                  derive_seed(cfg.seed, seed_stream::data_shuffle));
  Rng noise(derive_seed(cfg.seed, seed_stream::dequant_noise));

  if (!model.actnorms_initialized()) {
    Rng ddi_noise(derive_seed(cfg.seed, seed_stream::ddi));
    const IntBatch init = batcher.peek_first();
    const int degenerate =
        ddi_pass(model, dequantize<T>(init, train.n_bits, ddi_noise));
    if (degenerate > 0) {
      std::cerr << "ddi: " << degenerate
                << " zero-variance channel(s) regularized with eps=1e-6\n";
    }
  }

  AdamConfig acfg;
  acfg.alpha = cfg.lr;
  AdamState<T> adam = AdamState<T>::init(model, acfg);

  const auto t0 = std::chrono::steady_clock::now();
  auto now_ms = [&t0] {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - t0)
        .count();
  };
  auto emit_eval = [&](std::int64_t step) {
    if (!valid || !sink) return;
    const NllResult<T> ev = evaluate(model, *valid, cfg.batch_size, cfg.seed);
    sink({step, ev.nats_mean, ev.bpd, now_ms(), true});
  };

  TrainResult result;
  std::string last_ckpt;
  auto grads = model.zero_grads();
  for (std::int64_t step = 1; step <= cfg.total_steps; ++step) {
    const IntBatch batch = batcher.next();
    const Tensor4<T> x = dequantize<T>(batch, train.n_bits, noise);
    grads = model.zero_grads();
    NllResult<T> loss;
    try {
      loss = nll_loss_grad(model, x, grads);
      const double warm =
          cfg.warmup_steps > 0 && step < cfg.warmup_steps
              ? static_cast<double>(step) / cfg.warmup_steps
              : 1.0;
      adam_step(model, grads, adam, warm);
    } catch (const NumericsError& e) {
      throw NumericsError(std::string(e.what()) + " at step " +
                          std::to_string(step) + "; last good checkpoint: " +
                          (last_ckpt.empty() ? "<none>" : last_ckpt));
    }

    if (step == 1) {
      result.first_nats = loss.nats_mean;
      result.first_bpd = loss.bpd;
    }
    result.final_nats = loss.nats_mean;
    result.final_bpd = loss.bpd;
    result.steps = step;
    if (sink) sink({step, loss.nats_mean, loss.bpd, now_ms(), false});
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0) emit_eval(step);
    if (checkpoint && cfg.checkpoint_every > 0 &&
        step % cfg.checkpoint_every == 0) {
      last_ckpt = checkpoint(step);
    }
  }
  return result;
}

}  // namespace glow
