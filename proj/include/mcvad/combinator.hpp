// mcvad/combinator.hpp

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

// Self-attention channel combinators.
//
// Combination weights are computed framewise. For each frame t the C input
// channels are tokens with feature width K_in:
//
//   Q = X Wq + bq,  K = X Wk + bk   (C x D)
//   V = X Wv + bv                   (C x n_out)
//   A = softmax_rows(Q K^T / sqrt(D))
//   w = softmax_over_channels(A V)
//
// Tensors inside the graph are frame-major ([T, C, ...]); the public API
// accepts and returns the channel-major C x T x K layout.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "mcvad/autograd.hpp"
#include "mcvad/errors.hpp"
#include "mcvad/rng.hpp"
#include "mcvad/spectral.hpp"
#include "mcvad/tensor.hpp"

namespace mcvad {

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv;

  std::size_t input_width() const { return wq.dim(0); }
  std::size_t hidden() const { return wq.dim(1); }
  std::size_t n_out() const { return wv.dim(1); }
  std::size_t count() const { return wq.size() + bq.size() + wk.size() + bk.size() + wv.size() + bv.size(); }

  void insert_into(ParamSet &ps, const std::string &prefix) const {
    ps[prefix + ".wq"] = wq;
    ps[prefix + ".bq"] = bq;
    ps[prefix + ".wk"] = wk;
    ps[prefix + ".bk"] = bk;
    ps[prefix + ".wv"] = wv;
    ps[prefix + ".bv"] = bv;
  }

  static AttentionParams extract(const ParamSet &ps, const std::string &prefix) {
    auto get = [&](const char *n) {
      auto it = ps.find(prefix + n);
      if (it == ps.end()) throw ArgumentError("missing parameter '" + prefix + n + "'");
      return it->second;
    };
    return {get(".wq"), get(".bq"), get(".wk"), get(".bk"), get(".wv"), get(".bv")};
  }
};

/// Linear maps uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
inline AttentionParams attention_init(std::size_t input_width, std::size_t hidden, std::size_t n_out,
                                      std::uint64_t seed) {
  if (input_width == 0 || hidden == 0 || n_out == 0) throw ArgumentError("attention dimensions must be positive");
  Rng rng(seed);
  const double a = 1.0 / std::sqrt(static_cast<double>(input_width));
  auto uni = [&](Shape s) {
    Tensor t(std::move(s));
    for (double &v : t.data) v = rng.uniform(-a, a);
    return t;
  };
  AttentionParams p;
  p.wq = uni({input_width, hidden});
  p.wk = uni({input_width, hidden});
  p.wv = uni({input_width, n_out});
  p.bq = Tensor(Shape{hidden}, 0.0);
  p.bk = Tensor(Shape{hidden}, 0.0);
  p.bv = Tensor(Shape{n_out}, 0.0);
  return p;
}

enum class WeightKind { Real, Magnitude, Phase };

/// Per-frame convex weights over channels, stored C x T.
struct CombinationWeights {
  Tensor w;
  WeightKind kind = WeightKind::Real;
};

/// Single-channel output of a combinator: real [T, K] or complex [T, K, 2].
struct CombinedSpectrogram {
  Tensor values;
  bool is_complex = false;
  std::string provenance;

  std::size_t frames() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
};

// ---------------------------------------------------------------------------
// Graph builders. `feats` is frame-major [T, N, K_in].

/// Raw attention output A V with shape [T, N, n_out].
inline Var attention_scores(const Var &feats, const BoundParams &p, const std::string &prefix) {
  const Shape &s = feats.shape();
  const Var &wq = param(p, prefix + ".wq");
  if (s.size() != 3 || s[2] != wq.shape()[0])
    throw ArgumentError("attention: feature shape " + shape_str(s) + " does not match input width " +
                        std::to_string(wq.shape()[0]));
  const double D = static_cast<double>(wq.shape()[1]);
  Var q = ag::linear(feats, wq, param(p, prefix + ".bq"));
  Var k = ag::linear(feats, param(p, prefix + ".wk"), param(p, prefix + ".bk"));
  Var v = ag::linear(feats, param(p, prefix + ".wv"), param(p, prefix + ".bv"));
  Var a = ag::softmax_last(ag::scale(ag::bmm_nt(q, k), 1.0 / std::sqrt(D)));
  return ag::bmm(a, v);
}

/// Channel softmax of column `col` of A V over tokens [begin, end) -> [T, end-begin].
inline Var channel_softmax(const Var &av, std::size_t col, std::size_t begin, std::size_t end) {
  const Shape &s = av.shape();
  Var x = s[2] == 1 ? av : ag::slice(av, 2, col, col + 1);
  if (begin != 0 || end != s[1]) x = ag::slice(x, 1, begin, end);
  return ag::softmax_last(ag::reshape(x, Shape{s[0], end - begin}));
}

/// Combination weights [T, C] from features [T, C, K_in].
inline Var attention_weights_graph(const Var &feats, const BoundParams &p, const std::string &prefix) {
  Var av = attention_scores(feats, p, prefix);
  return channel_softmax(av, 0, 0, feats.shape()[1]);
}

/// Layout of the joint magnitude/phase input of the implicit complex combinator.
enum class JointLayout {
  Channel,  // 2C tokens of width K; one value column split into two halves
  Feature   // C tokens of width 2K; two value columns
};

struct ComplexWeightsGraph {
  Var w_mag;  // [T, C]
  Var w_phi;  // [T, C]
};

inline ComplexWeightsGraph joint_weights_graph(const Var &mag_feats, const Var &phi_feats, const BoundParams &p,
                                               const std::string &prefix, JointLayout layout) {
  const std::size_t C = mag_feats.shape()[1];
  if (layout == JointLayout::Channel) {
    Var av = attention_scores(ag::concat(mag_feats, phi_feats, 1), p, prefix);
    return {channel_softmax(av, 0, 0, C), channel_softmax(av, 0, C, 2 * C)};
  }
  Var av = attention_scores(ag::concat(mag_feats, phi_feats, 2), p, prefix);
  return {channel_softmax(av, 0, 0, C), channel_softmax(av, 1, 0, C)};
}

/// Attention input for a magnitude branch: MVN(log(|Y| + eps)) over time.
inline Var log_mvn_input(Tape &tape, const Tensor &mag_tck) {
  return ag::mvn_time(ag::log(tape.constant(mag_tck), kLogEps), kStdEps);
}

// ---------------------------------------------------------------------------
// Value-level API (channel-major layouts).

namespace detail {
inline Tensor ctk_to_tck(const Tensor &x) {
  if (x.rank() != 3) throw ArgumentError("expected a C x T x K tensor, got " + shape_str(x.shape));
  const std::size_t C = x.dim(0), T = x.dim(1), K = x.dim(2);
  Tensor y(Shape{T, C, K});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < K; ++k) y.at(t, c, k) = x.at(c, t, k);
  return y;
}

inline Tensor tc_to_ct(const Tensor &w) {
  const std::size_t T = w.dim(0), C = w.dim(1);
  Tensor y(Shape{C, T});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) y.at(c, t) = w.at(t, c);
  return y;
}

inline Tensor ct_to_tc(const Tensor &w) {
  const std::size_t C = w.dim(0), T = w.dim(1);
  Tensor y(Shape{T, C});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) y.at(t, c) = w.at(c, t);
  return y;
}

inline void check_finite(const Tensor &t, const char *what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite activations");
}
}  // namespace detail

/// Attention combination weights for features laid out C x T x K_in.
inline CombinationWeights attention_weights(const Tensor &feats_ctk, const AttentionParams &p) {
  if (feats_ctk.rank() != 3 || feats_ctk.dim(0) < 1) throw ArgumentError("attention_weights: need C x T x K features");
  if (feats_ctk.dim(2) != p.input_width()) throw ArgumentError("attention_weights: feature width mismatch");
  Tape tape;
  ParamSet ps;
  p.insert_into(ps, "att");
  BoundParams b = bind_constants(tape, ps);
  Var w = attention_weights_graph(tape.constant(detail::ctk_to_tck(feats_ctk)), b, "att");
  detail::check_finite(w.value(), "attention_weights");
  return {detail::tc_to_ct(w.value()), WeightKind::Real};
}

/// Y_att[t,k] = sum_c w[c,t] * mag[c,t,k].
inline CombinedSpectrogram combine_magnitude(const CombinationWeights &w, const Tensor &mag_ctk) {
  if (w.kind != WeightKind::Real) throw ArgumentError("combine_magnitude expects real weights");
  if (mag_ctk.rank() != 3 || w.w.rank() != 2 || w.w.dim(0) != mag_ctk.dim(0) || w.w.dim(1) != mag_ctk.dim(1))
    throw ArgumentError("combine_magnitude: shape mismatch");
  Tape tape;
  Var y = ag::weighted_channel_sum(tape.constant(detail::ct_to_tc(w.w)), tape.constant(detail::ctk_to_tck(mag_ctk)));
  return {y.value(), false, "sacc"};
}

struct ComplexCombination {
  CombinedSpectrogram combined;
  CombinationWeights w_mag;
  CombinationWeights w_phi;
};

/// Explicit complex combinator: independent attention on MVN(log|Y|) and MVN(angle Y).
inline ComplexCombination ecsacc_combine(const ComplexSpectrogram &Y, const AttentionParams &p_mag,
                                         const AttentionParams &p_phi) {
  if (p_mag.input_width() != Y.K || p_phi.input_width() != Y.K)
    throw ArgumentError("ecsacc_combine: parameter width does not match K");
  Tape tape;
  ParamSet ps;
  p_mag.insert_into(ps, "mag");
  p_phi.insert_into(ps, "phi");
  BoundParams b = bind_constants(tape, ps);
  const Tensor mag = Y.magnitude_tck();
  const Tensor phase = Y.phase_tck();
  Var wm = attention_weights_graph(log_mvn_input(tape, mag), b, "mag");
  Var wp = attention_weights_graph(ag::mvn_time(tape.constant(phase), kStdEps), b, "phi");
  Var z = ag::polar_combine(wm, wp, tape.constant(mag), tape.constant(phase));
  detail::check_finite(z.value(), "ecsacc_combine");
  return {{z.value(), true, "ecsacc"},
          {detail::tc_to_ct(wm.value()), WeightKind::Magnitude},
          {detail::tc_to_ct(wp.value()), WeightKind::Phase}};
}

/// Implicit complex combinator: one attention module over the joint
/// magnitude/phase representation.
inline ComplexCombination icsacc_combine(const ComplexSpectrogram &Y, const AttentionParams &p,
                                         JointLayout layout = JointLayout::Channel) {
  const std::size_t want_w = layout == JointLayout::Channel ? Y.K : 2 * Y.K;
  const std::size_t want_o = layout == JointLayout::Channel ? 1 : 2;
  if (p.input_width() != want_w || p.n_out() != want_o)
    throw ArgumentError("icsacc_combine: parameters not sized for the chosen layout");
  Tape tape;
  ParamSet ps;
  p.insert_into(ps, "att");
  BoundParams b = bind_constants(tape, ps);
  const Tensor mag = Y.magnitude_tck();
  const Tensor phase = Y.phase_tck();
  auto w = joint_weights_graph(log_mvn_input(tape, mag), ag::mvn_time(tape.constant(phase), kStdEps), b, "att",
                               layout);
  Var z = ag::polar_combine(w.w_mag, w.w_phi, tape.constant(mag), tape.constant(phase));
  detail::check_finite(z.value(), "icsacc_combine");
  return {{z.value(), true, "icsacc"},
          {detail::tc_to_ct(w.w_mag.value()), WeightKind::Magnitude},
          {detail::tc_to_ct(w.w_phi.value()), WeightKind::Phase}};
}

/// Log-mel features of a combined spectrogram. Complex inputs are reduced to
/// their magnitude first. Analytic-filterbank outputs are already features
/// and pass through unchanged.
inline Tensor frontend_features(const CombinedSpectrogram &combined, std::size_t n_mels, int rate) {
  if (combined.provenance == "analytic") return combined.values;
  Tensor mag;
  if (combined.is_complex) {
    mag = Tensor(Shape{combined.values.dim(0), combined.values.dim(1)});
    for (std::size_t i = 0; i < mag.size(); ++i)
      mag[i] = std::hypot(combined.values[2 * i], combined.values[2 * i + 1]);
  } else {
    mag = combined.values;
  }
  return log_compress(mel_project(mag, n_mels, rate));
}

}  // namespace mcvad
