// mcvad/trainer.hpp

// Copyright 2026 The mcvad Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcvad/arraysim.hpp"
#include "mcvad/autograd.hpp"
#include "mcvad/errors.hpp"
#include "mcvad/frontend.hpp"
#include "mcvad/rng.hpp"
#include "mcvad/segeval.hpp"
#include "mcvad/tcn.hpp"

namespace mcvad {

inline constexpr double kNormEps = 1e-12;

// ---------------------------------------------------------------------------
// Losses.

/// Labels truncated to T frames, or extended by repeating the last label.
inline std::vector<int> align_labels(const std::vector<int> &labels, std::size_t T) {
  if (labels.empty()) throw ArgumentError("cannot align an empty label sequence");
  std::vector<int> out(T);
  for (std::size_t t = 0; t < T; ++t) out[t] = labels[std::min(t, labels.size() - 1)];
  return out;
}

inline double cross_entropy(const Tensor &logits, const FrameLabels &y) {
  Tape tape;
  return ag::cross_entropy(tape.constant(logits), y.labels).value().item();
}

/// (1/P) sum_p ||X_ref - X_p|| / ((||X_ref|| + eps)(||X_p|| + eps)).
/// With `cosine` set, each term is instead || X_ref/||X_ref|| - X_p/||X_p|| ||.
inline Var invariant_loss(const Var &x_ref, const std::vector<Var> &masked, bool cosine = false) {
  if (masked.empty()) throw ArgumentError("invariant loss needs at least one masked feature map");
  Var nr = ag::add_scalar(ag::frobenius(x_ref), kNormEps);
  Var total;
  bool first = true;
  for (const Var &xp : masked) {
    if (xp.shape() != x_ref.shape())
      throw ArgumentError("invariant loss: shape " + shape_str(xp.shape()) + " differs from " + shape_str(x_ref.shape()));
    Var np = ag::add_scalar(ag::frobenius(xp), kNormEps);
    Var term = cosine ? ag::frobenius(ag::sub(ag::mul(x_ref, ag::reciprocal(nr)), ag::mul(xp, ag::reciprocal(np))))
                      : ag::div(ag::frobenius(ag::sub(x_ref, xp)), ag::mul(nr, np));
    total = first ? term : ag::add(total, term);
    first = false;
  }
  return ag::scale(total, 1.0 / static_cast<double>(masked.size()));
}

inline double invariant_loss(const Tensor &x_ref, const std::vector<Tensor> &masked, bool cosine = false) {
  Tape tape;
  std::vector<Var> vs;
  for (const Tensor &m : masked) vs.push_back(tape.constant(m));
  return invariant_loss(tape.constant(x_ref), vs, cosine).value().item();
}

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("trade-off lambda must lie in [0, 1]");
}

inline Var dual_loss(const Var &ce, const Var &inv, double lambda) {
  check_lambda(lambda);
  return ag::add(ag::scale(ce, lambda), ag::scale(inv, 1.0 - lambda));
}

inline double dual_loss(double ce, double inv, double lambda) {
  check_lambda(lambda);
  return lambda * ce + (1.0 - lambda) * inv;
}

// ---------------------------------------------------------------------------
// Masked duplicates.

struct InvariantConfig {
  std::size_t P = 2;
  double lambda = 0.7;
  std::size_t min_keep = 2;
  std::uint64_t rng_seed = 0;
  bool cosine = false;

  void validate(std::size_t C) const {
    if (P < 1) throw ArgumentError("duplicate count P must be at least 1");
    check_lambda(lambda);
    if (min_keep < 2 || min_keep > C) throw ArgumentError("min_keep must lie in [2, C]");
  }
};

/// Channel-id sets kept by each duplicate: C_p ~ U{min_keep..C}, then a
/// uniform subset of that size.
inline std::vector<std::set<int>> draw_keep_sets(const std::vector<int> &ids, const InvariantConfig &cfg,
                                                 std::uint64_t step) {
  const std::size_t C = ids.size();
  if (C < 2) throw ArgumentError("masked duplicates need at least two channels");
  cfg.validate(C);
  std::vector<std::set<int>> out;
  for (std::size_t p = 0; p < cfg.P; ++p) {
    Rng rng(derive_seed({cfg.rng_seed, step, p}));
    const auto cp = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(cfg.min_keep), static_cast<std::int64_t>(C)));
    std::vector<int> pool = ids;
    for (std::size_t i = 0; i < cp; ++i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(C - 1)));
      std::swap(pool[i], pool[j]);
    }
    out.emplace_back(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cp));
  }
  return out;
}

inline std::vector<MultichannelSignal> make_masked_duplicates(const MultichannelSignal &x, const InvariantConfig &cfg,
                                                              std::uint64_t step) {
  std::vector<MultichannelSignal> out;
  for (const auto &keep : draw_keep_sets(x.channel_ids(), cfg, step)) out.push_back(mask_channels(x, keep));
  return out;
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamState {
  ParamSet m, v;
  std::uint64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline void adam_step(ParamSet &params, const ParamSet &grads, AdamState &st, double lr) {
  for (const auto &[name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end() || it->second.shape != g.shape)
      throw ArgumentError("adam: gradient '" + name + "' does not match a parameter");
    if (!g.all_finite()) throw NumericError("adam: non-finite gradient for '" + name + "'");
  }
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (auto &[name, p] : params) {
    auto git = grads.find(name);
    Tensor zero;
    const Tensor *g = &zero;
    if (git != grads.end()) {
      g = &git->second;
    } else {
      zero = Tensor(p.shape, 0.0);
    }
    Tensor &m = st.m.try_emplace(name, Tensor(p.shape, 0.0)).first->second;
    Tensor &v = st.v.try_emplace(name, Tensor(p.shape, 0.0)).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = (*g)[i];
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Model evaluation.

struct ModelSpec {
  FrontendConfig frontend;
  TcnConfig tcn;
};

inline ParamSet model_init(const ModelSpec &spec, int rate, std::uint64_t seed) {
  if (spec.tcn.input_dim != feature_dim(spec.frontend))
    throw ArgumentError("TCN input_dim must equal the front-end feature width");
  ParamSet ps = frontend_init(spec.frontend, rate, derive_seed({seed, 0xFE}));
  for (auto &[k, v] : tcn_init(spec.tcn, derive_seed({seed, 0x7C})) ) ps[k] = std::move(v);
  return ps;
}

/// Logits [T, n_classes] for one signal.
inline Tensor model_logits(const ParamSet &params, const ModelSpec &spec, const MultichannelSignal &sig) {
  Tape tape;
  BoundParams b = bind_constants(tape, params);
  Var x = frontend_graph(tape, b, spec.frontend, sig);
  Tensor logits = tcn_forward(b, spec.tcn, x).value();
  if (!logits.all_finite()) throw NumericError("model produced non-finite logits");
  return logits;
}

inline PosteriorFn posterior_fn(const ParamSet &params, const ModelSpec &spec) {
  return [&params, &spec](const MultichannelSignal &s) { return posteriors(model_logits(params, spec, s)); };
}

struct EvalResult {
  double ce = 0.0;        // mean frame cross-entropy
  double accuracy = 0.0;  // frame accuracy
  double majority_accuracy = 0.0;
  OsdMetrics osd;
  std::optional<VadMetrics> vad;
};

/// Pools all frames of `data` (labels aligned to each segment's feature
/// frames) and scores argmax decisions.
inline EvalResult evaluate(const ParamSet &params, const ModelSpec &spec, const std::vector<LabeledSegment> &data,
                           const std::function<MultichannelSignal(const MultichannelSignal &)> &view = {}) {
  if (data.empty()) throw ArgumentError("evaluate: empty dataset");
  FrameLabels ref, hyp;
  double ce_sum = 0.0;
  for (const LabeledSegment &seg : data) {
    const Tensor logits = model_logits(params, spec, view ? view(seg.signal) : seg.signal);
    const std::vector<int> y = align_labels(seg.labels.labels, logits.dim(0));
    Tape tape;
    ce_sum += ag::cross_entropy(tape.constant(logits), y).value().item() * static_cast<double>(y.size());
    const std::vector<int> h = argmax_rows(logits);
    ref.labels.insert(ref.labels.end(), y.begin(), y.end());
    hyp.labels.insert(hyp.labels.end(), h.begin(), h.end());
  }
  EvalResult r;
  r.ce = ce_sum / static_cast<double>(ref.size());
  r.accuracy = frame_accuracy(ref.labels, hyp.labels);
  std::size_t counts[3] = {0, 0, 0};
  for (int v : ref.labels) ++counts[std::clamp(v, 0, 2)];
  r.majority_accuracy =
      static_cast<double>(*std::max_element(counts, counts + 3)) / static_cast<double>(ref.size());
  r.osd = osd_metrics(ref, hyp);
  if (counts[1] + counts[2] > 0) r.vad = vad_metrics(ref, hyp);
  return r;
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t steps_per_epoch = 2000;
  double segment_s = 2.0;
  double lr = 1e-3;
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0 || steps_per_epoch == 0 || patience == 0 || max_epochs == 0)
      throw ArgumentError("training counts must be positive");
    if (!(segment_s > 0.0) || !(lr > 0.0)) throw ArgumentError("segment length and learning rate must be positive");
  }
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0, ce = 0.0, inv = 0.0;
};

struct TrainResult {
  ParamSet best;
  ParamSet last;
  double best_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<StepRecord> steps;
  std::vector<double> val_f1;
};

namespace train_detail {
inline double round_sig(double x) {
  // Fixed precision keeps logs byte-stable across formatting differences.
  if (!std::isfinite(x)) return x;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return std::strtod(buf, nullptr);
}
}  // namespace train_detail

/// Mini-batch training with per-epoch validation OSD F1 and early stopping.
/// Records are written as NDJSON to `log` when given.
inline TrainResult train(const ModelSpec &spec, const std::vector<LabeledSegment> &train_set,
                         const std::vector<LabeledSegment> &valid_set, const TrainConfig &tcfg,
                         const std::optional<InvariantConfig> &icfg, std::ostream *log = nullptr,
                         std::optional<ParamSet> init = std::nullopt) {
  tcfg.validate();
  if (train_set.empty()) throw ArgumentError("training set is empty");
  if (valid_set.empty()) throw ArgumentError("validation set is empty");
  const int rate = train_set.front().signal.sample_rate();
  if (icfg) icfg->validate(train_set.front().signal.channels());

  ParamSet params = init ? *init : model_init(spec, rate, tcfg.seed);
  AdamState adam;
  Rng sampler(derive_seed({tcfg.seed, 0xBA7C}));
  TrainResult res;
  std::size_t since_best = 0, step = 0;

  auto emit = [&](const nlohmann::json &j) {
    if (log) *log << j.dump() << '\n';
  };

  for (std::size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    for (std::size_t s = 0; s < tcfg.steps_per_epoch; ++s, ++step) {
      ParamSet grads;
      StepRecord rec{step, 0.0, 0.0, 0.0};
      const double inv_b = 1.0 / static_cast<double>(tcfg.batch_size);
      for (std::size_t b = 0; b < tcfg.batch_size; ++b) {
        const auto idx = static_cast<std::size_t>(sampler.uniform_int(0, static_cast<std::int64_t>(train_set.size()) - 1));
        const LabeledSegment &seg = train_set[idx];
        Tape tape;
        BoundParams bound = bind_params(tape, params);
        Var x_ref = frontend_graph(tape, bound, spec.frontend, seg.signal);
        Var logits = tcn_forward(bound, spec.tcn, x_ref);
        const std::vector<int> y = align_labels(seg.labels.labels, logits.shape()[0]);
        Var ce = ag::cross_entropy(logits, y);
        Var loss = ce;
        double inv_v = 0.0;
        if (icfg) {
          InvariantConfig ic = *icfg;
          ic.rng_seed = derive_seed({icfg->rng_seed, tcfg.seed});
          std::vector<Var> xs;
          for (const MultichannelSignal &d : make_masked_duplicates(seg.signal, ic, step * tcfg.batch_size + b))
            xs.push_back(frontend_graph(tape, bound, spec.frontend, d));
          Var inv = invariant_loss(x_ref, xs, icfg->cosine);
          inv_v = inv.value().item();
          loss = dual_loss(ce, inv, icfg->lambda);
        }
        if (!std::isfinite(loss.value().item()))
          throw NumericError("training diverged at step " + std::to_string(step) + " (non-finite loss)");
        tape.backward(ag::scale(loss, inv_b));
        for (auto &[name, g] : collect_grads(tape, bound)) {
          auto [it, fresh] = grads.try_emplace(name, std::move(g));
          if (!fresh)
            for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
        }
        rec.loss += loss.value().item() * inv_b;
        rec.ce += ce.value().item() * inv_b;
        rec.inv += inv_v * inv_b;
      }
      adam_step(params, grads, adam, tcfg.lr);
      res.steps.push_back(rec);
      emit({{"type", "step"},
            {"step", rec.step},
            {"epoch", epoch},
            {"loss", train_detail::round_sig(rec.loss)},
            {"ce", train_detail::round_sig(rec.ce)},
            {"inv", train_detail::round_sig(rec.inv)}});
    }

    const EvalResult ev = evaluate(params, spec, valid_set);
    res.val_f1.push_back(ev.osd.f1);
    res.epochs_run = epoch;
    const bool improved = ev.osd.f1 > res.best_f1;
    if (improved) {
      res.best_f1 = ev.osd.f1;
      res.best_epoch = epoch;
      res.best = params;
      since_best = 0;
    } else {
      ++since_best;
    }
    emit({{"type", "epoch"},
          {"epoch", epoch},
          {"val_f1", train_detail::round_sig(ev.osd.f1)},
          {"val_ce", train_detail::round_sig(ev.ce)},
          {"best_epoch", res.best_epoch}});
    if (since_best >= tcfg.patience) break;
  }
  res.last = std::move(params);
  return res;
}

}  // namespace mcvad
