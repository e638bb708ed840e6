// mcvad/frontend.hpp

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

// Differentiable feature extraction for every front-end variant:
//
//   stft      channel-0 log-mel (single distant microphone)
//   analytic  attention combination of learnable analytic filter outputs
//   sacc      attention combination of STFT magnitudes, then log-mel
//   ecsacc    separate magnitude/phase attention, complex sum, log-mel
//   icsacc    joint magnitude/phase attention, complex sum, log-mel
//   mvdr      CDR-masked MVDR beamformer, then log-mel (no parameters)

#pragma once

#include <cstdint>
#include <map>
#include <tuple>
#include <mutex>
#include <string>

#include "mcvad/autograd.hpp"
#include "mcvad/beamform.hpp"
#include "mcvad/combinator.hpp"
#include "mcvad/errors.hpp"
#include "mcvad/rng.hpp"
#include "mcvad/signal_io.hpp"
#include "mcvad/spectral.hpp"

namespace mcvad {

enum class FrontendKind { Stft, Analytic, Sacc, Ecsacc, Icsacc, Mvdr };

inline const char *frontend_name(FrontendKind k) {
  switch (k) {
    case FrontendKind::Stft: return "stft";
    case FrontendKind::Analytic: return "analytic";
    case FrontendKind::Sacc: return "sacc";
    case FrontendKind::Ecsacc: return "ecsacc";
    case FrontendKind::Icsacc: return "icsacc";
    case FrontendKind::Mvdr: return "mvdr";
  }
  return "?";
}

inline FrontendKind parse_frontend(const std::string &s) {
  for (FrontendKind k : {FrontendKind::Stft, FrontendKind::Analytic, FrontendKind::Sacc, FrontendKind::Ecsacc,
                         FrontendKind::Icsacc, FrontendKind::Mvdr})
    if (s == frontend_name(k)) return k;
  throw ArgumentError("unknown front end '" + s + "'");
}

struct FrontendConfig {
  FrontendKind kind = FrontendKind::Sacc;
  StftConfig stft;
  std::size_t n_mels = 64;
  std::size_t hidden = 256;       // attention size D
  std::size_t n_filters = 32;     // analytic filters
  std::size_t filter_len = 400;   // analytic kernel length (even)
  std::size_t filter_stride = 160;
  JointLayout joint = JointLayout::Channel;
  bool real_imag = false;         // complex variants: Re/Im parts instead of magnitude/phase
  ArrayGeometry geometry = ArrayGeometry::uca(8, 0.1);  // used by mvdr only

  void validate(int rate) const {
    stft.validate(rate);
    if (n_mels == 0 || hidden == 0 || n_filters == 0 || filter_stride == 0)
      throw ArgumentError("front-end sizes must be positive");
    if (filter_len == 0 || filter_len % 2 != 0) throw ArgumentError("analytic filter length must be even");
  }
};

/// Output width F of the front end.
inline std::size_t feature_dim(const FrontendConfig &cfg) {
  return cfg.kind == FrontendKind::Analytic ? 2 * cfg.n_filters : cfg.n_mels;
}

/// Parameters are prefixed "fe."; parameter-free variants return an empty set.
inline ParamSet frontend_init(const FrontendConfig &cfg, int rate, std::uint64_t seed) {
  cfg.validate(rate);
  ParamSet ps;
  const std::size_t K = cfg.stft.n_bins();
  switch (cfg.kind) {
    case FrontendKind::Stft:
    case FrontendKind::Mvdr:
      break;
    case FrontendKind::Sacc:
      attention_init(K, cfg.hidden, 1, derive_seed({seed, 1})).insert_into(ps, "fe.att");
      break;
    case FrontendKind::Analytic: {
      AnalyticFilterBank fb = analytic_fb_init(cfg.n_filters, cfg.filter_len, derive_seed({seed, 2}), cfg.filter_stride);
      ps["fe.fb.real_ir"] = fb.real_ir;
      attention_init(2 * cfg.n_filters, cfg.hidden, 1, derive_seed({seed, 1})).insert_into(ps, "fe.att");
      break;
    }
    case FrontendKind::Ecsacc:
      attention_init(K, cfg.hidden, 1, derive_seed({seed, 3})).insert_into(ps, "fe.mag");
      attention_init(K, cfg.hidden, 1, derive_seed({seed, 4})).insert_into(ps, "fe.phi");
      break;
    case FrontendKind::Icsacc: {
      const bool chan = cfg.joint == JointLayout::Channel;
      attention_init(chan ? K : 2 * K, cfg.hidden, chan ? 1 : 2, derive_seed({seed, 5})).insert_into(ps, "fe.att");
      break;
    }
  }
  return ps;
}

namespace fe_detail {

inline const Tensor &cached_hilbert(std::size_t L) {
  static std::mutex mu;
  static std::map<std::size_t, Tensor> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(L);
  if (it == cache.end()) it = cache.emplace(L, hilbert_matrix(L)).first;
  return it->second;
}

inline const Tensor &cached_mel(std::size_t n_mels, std::size_t K, int rate) {
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, std::size_t, int>, Tensor> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_tuple(n_mels, K, rate);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, mel_filterbank(n_mels, K, rate)).first;
  return it->second;
}

/// log(mel(mag) + eps) for mag [T, K].
inline Var log_mel(Tape &tape, const Var &mag, std::size_t n_mels, int rate) {
  const Tensor &fb = cached_mel(n_mels, mag.shape()[1], rate);
  return ag::log(ag::matmul(mag, tape.constant(fb)), kLogEps);
}

/// Re/Im combination: Re sum_c w_re x_re + j sum_c w_im x_im -> [T, K, 2].
inline Var reim_combine(const Var &w_re, const Var &w_im, const Var &re, const Var &im) {
  const Shape &s = re.shape();
  Var a = ag::reshape(ag::weighted_channel_sum(w_re, re), Shape{s[0], s[2], 1});
  Var b = ag::reshape(ag::weighted_channel_sum(w_im, im), Shape{s[0], s[2], 1});
  return ag::concat(a, b, 2);
}

}  // namespace fe_detail

/// Per-frame combination weights exposed for beampattern analysis.
struct FrontendTrace {
  Tensor w_mag;  // [T, C] (real weights for sacc/analytic)
  Tensor w_phi;  // [T, C], empty unless complex
};

/// Builds the feature graph X [T, F] for `sig`. `bound` must hold the
/// parameters from frontend_init (bound as leaves or constants).
inline Var frontend_graph(Tape &tape, const BoundParams &bound, const FrontendConfig &cfg,
                          const MultichannelSignal &sig, FrontendTrace *trace = nullptr) {
  const int rate = sig.sample_rate();
  cfg.validate(rate);
  auto keep = [&](const Var &wm, const Var *wp) {
    if (!trace) return;
    trace->w_mag = wm.value();
    trace->w_phi = wp ? wp->value() : Tensor();
  };

  if (cfg.kind == FrontendKind::Analytic) {
    Var x = tape.constant(sig.samples());
    const Var &h = param(bound, "fe.fb.real_ir");
    if (h.shape()[1] != cfg.filter_len) throw ArgumentError("analytic filter length does not match the config");
    Var hi = ag::matmul(h, tape.constant(fe_detail::cached_hilbert(cfg.filter_len)));
    Var z = ag::concat(ag::strided_correlate(x, h, cfg.filter_stride), ag::strided_correlate(x, hi, cfg.filter_stride),
                       2);  // [T, C, 2F]
    Var w = attention_weights_graph(ag::mvn_time(z, kStdEps), bound, "fe.att");
    keep(w, nullptr);
    return ag::weighted_channel_sum(w, z);
  }

  const ComplexSpectrogram Y = stft(sig, cfg.stft);
  switch (cfg.kind) {
    case FrontendKind::Stft: {
      Tensor mag(Shape{Y.T, Y.K});
      for (std::size_t t = 0; t < Y.T; ++t)
        for (std::size_t k = 0; k < Y.K; ++k) mag.at(t, k) = std::abs(Y.at(0, t, k));
      return fe_detail::log_mel(tape, tape.constant(mag), cfg.n_mels, rate);
    }
    case FrontendKind::Sacc: {
      const Tensor mag = Y.magnitude_tck();
      Var w = attention_weights_graph(log_mvn_input(tape, mag), bound, "fe.att");
      keep(w, nullptr);
      return fe_detail::log_mel(tape, ag::weighted_channel_sum(w, tape.constant(mag)), cfg.n_mels, rate);
    }
    case FrontendKind::Ecsacc:
    case FrontendKind::Icsacc: {
      Var a_in, b_in, a_val, b_val;
      if (cfg.real_imag) {
        a_val = tape.constant(Y.real_tck());
        b_val = tape.constant(Y.imag_tck());
        a_in = ag::mvn_time(a_val, kStdEps);
        b_in = ag::mvn_time(b_val, kStdEps);
      } else {
        a_val = tape.constant(Y.magnitude_tck());
        b_val = tape.constant(Y.phase_tck());
        a_in = log_mvn_input(tape, a_val.value());
        b_in = ag::mvn_time(b_val, kStdEps);
      }
      Var wa, wb;
      if (cfg.kind == FrontendKind::Ecsacc) {
        wa = attention_weights_graph(a_in, bound, "fe.mag");
        wb = attention_weights_graph(b_in, bound, "fe.phi");
      } else {
        auto w = joint_weights_graph(a_in, b_in, bound, "fe.att", cfg.joint);
        wa = w.w_mag;
        wb = w.w_phi;
      }
      keep(wa, &wb);
      Var z = cfg.real_imag ? fe_detail::reim_combine(wa, wb, a_val, b_val) : ag::polar_combine(wa, wb, a_val, b_val);
      return fe_detail::log_mel(tape, ag::complex_abs(z), cfg.n_mels, rate);
    }
    case FrontendKind::Mvdr: {
      const ArrayGeometry geom = cfg.geometry.mics() == sig.channels()
                                     ? cfg.geometry
                                     : cfg.geometry.subset(sig.channel_ids());
      MvdrResult r = mvdr(Y, cdr_mask(Y, geom));
      Tensor mag(Shape{Y.T, Y.K});
      for (std::size_t i = 0; i < mag.size(); ++i)
        mag[i] = std::hypot(r.combined.values[2 * i], r.combined.values[2 * i + 1]);
      return fe_detail::log_mel(tape, tape.constant(mag), cfg.n_mels, rate);
    }
    case FrontendKind::Analytic:
      break;
  }
  throw ArgumentError("unhandled front end");
}

/// Value-only features [T, F].
inline Tensor frontend_features(const ParamSet &params, const FrontendConfig &cfg, const MultichannelSignal &sig,
                                FrontendTrace *trace = nullptr) {
  Tape tape;
  BoundParams b = bind_constants(tape, params);
  Tensor X = frontend_graph(tape, b, cfg, sig, trace).value();
  if (!X.all_finite()) throw NumericError("front end produced non-finite features");
  return X;
}

}  // namespace mcvad
