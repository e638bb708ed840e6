// mcvad/tcn.hpp

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

// Temporal convolutional network for 3-class frame labeling
// (0: no speech, 1: one speaker, 2: overlap).
//
//   layer norm -> 1x1 bottleneck -> blocks x [layers x dilated causal conv
//   + ReLU, 1x1 projection back to the bottleneck, residual add] -> 1x1 output

#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "mcvad/autograd.hpp"
#include "mcvad/errors.hpp"
#include "mcvad/rng.hpp"

namespace mcvad {

struct TcnConfig {
  std::size_t bottleneck = 64;
  std::size_t hidden = 128;
  std::size_t layers_per_block = 5;
  std::size_t blocks = 3;
  std::size_t kernel = 3;
  std::size_t n_classes = 3;
  std::size_t input_dim = 64;

  void validate() const {
    if (bottleneck == 0 || hidden == 0 || layers_per_block == 0 || blocks == 0 || kernel == 0 || n_classes == 0 ||
        input_dim == 0)
      throw ArgumentError("TCN dimensions must all be positive");
  }

  std::size_t receptive_field() const {
    std::size_t rf = 1;
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t l = 0; l < layers_per_block; ++l) rf += (kernel - 1) << l;
    return rf;
  }
};

namespace tcn_detail {
inline std::string conv_name(std::size_t b, std::size_t l) {
  return "tcn.block" + std::to_string(b) + ".conv" + std::to_string(l);
}
inline std::string res_name(std::size_t b) { return "tcn.block" + std::to_string(b) + ".res"; }
}  // namespace tcn_detail

/// Conv weights are stored [out, kernel, in]; uniform in +-1/sqrt(in * kernel).
inline ParamSet tcn_init(const TcnConfig &cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet ps;
  auto conv = [&](const std::string &name, std::size_t out, std::size_t k, std::size_t in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(in * k));
    Tensor w(Shape{out, k, in});
    for (double &v : w.data) v = rng.uniform(-a, a);
    ps[name + ".w"] = std::move(w);
    ps[name + ".b"] = Tensor(Shape{out}, 0.0);
  };
  ps["tcn.ln.gain"] = Tensor(Shape{cfg.input_dim}, 1.0);
  ps["tcn.ln.bias"] = Tensor(Shape{cfg.input_dim}, 0.0);
  conv("tcn.bottleneck", cfg.bottleneck, 1, cfg.input_dim);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    for (std::size_t l = 0; l < cfg.layers_per_block; ++l)
      conv(tcn_detail::conv_name(b, l), cfg.hidden, cfg.kernel, l == 0 ? cfg.bottleneck : cfg.hidden);
    conv(tcn_detail::res_name(b), cfg.bottleneck, 1, cfg.hidden);
  }
  conv("tcn.out", cfg.n_classes, 1, cfg.bottleneck);
  return ps;
}

/// X: [T, input_dim] -> logits [T, n_classes].
inline Var tcn_forward(const BoundParams &p, const TcnConfig &cfg, const Var &X) {
  const Shape &s = X.shape();
  if (s.size() != 2 || s[0] < 1) throw ArgumentError("TCN input must be a non-empty T x F matrix");
  if (s[1] != cfg.input_dim)
    throw ArgumentError("TCN expects " + std::to_string(cfg.input_dim) + " features, got " + std::to_string(s[1]));
  auto conv = [&](const Var &x, const std::string &name, std::size_t dilation) {
    return ag::conv1d_causal(x, param(p, name + ".w"), param(p, name + ".b"), dilation);
  };
  Var h = ag::layer_norm(X, param(p, "tcn.ln.gain"), param(p, "tcn.ln.bias"));
  h = conv(h, "tcn.bottleneck", 1);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    Var u = h;
    for (std::size_t l = 0; l < cfg.layers_per_block; ++l)
      u = ag::relu(conv(u, tcn_detail::conv_name(b, l), std::size_t{1} << l));
    h = ag::add(h, conv(u, tcn_detail::res_name(b), 1));
  }
  return conv(h, "tcn.out", 1);
}

inline Tensor tcn_forward(const ParamSet &params, const TcnConfig &cfg, const Tensor &X) {
  Tape tape;
  BoundParams b = bind_constants(tape, params);
  return tcn_forward(b, cfg, tape.constant(X)).value();
}

/// Rowwise softmax with max subtraction.
inline Tensor posteriors(const Tensor &logits) {
  if (logits.rank() != 2) throw ArgumentError("posteriors expects a T x classes matrix");
  const std::size_t T = logits.dim(0), M = logits.dim(1);
  Tensor p(logits.shape);
  for (std::size_t t = 0; t < T; ++t) {
    double mx = logits.at(t, 0);
    for (std::size_t m = 1; m < M; ++m) mx = std::max(mx, logits.at(t, m));
    double s = 0.0;
    for (std::size_t m = 0; m < M; ++m) s += (p.at(t, m) = std::exp(logits.at(t, m) - mx));
    for (std::size_t m = 0; m < M; ++m) p.at(t, m) /= s;
  }
  return p;
}

/// Argmax per row; ties resolve to the lower class index.
inline std::vector<int> argmax_rows(const Tensor &scores) {
  const std::size_t T = scores.dim(0), M = scores.dim(1);
  std::vector<int> out(T, 0);
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < M; ++m)
      if (scores.at(t, m) > scores.at(t, best)) best = m;
    out[t] = static_cast<int>(best);
  }
  return out;
}

/// VAD score p(1) + p(2) and OSD score p(2) from 3-class posteriors.
inline std::pair<std::vector<double>, std::vector<double>> vad_osd_scores(const Tensor &post) {
  std::vector<double> vad(post.dim(0)), osd(post.dim(0));
  for (std::size_t t = 0; t < post.dim(0); ++t) {
    vad[t] = post.at(t, 1) + post.at(t, 2);
    osd[t] = post.at(t, 2);
  }
  return {vad, osd};
}

}  // namespace mcvad
