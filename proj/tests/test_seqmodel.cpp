// tests/test_seqmodel.cpp

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

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

namespace mcvad {
namespace {

using testing::grad_check;
using testing::random_tensor;
using testing::TinySetup;

std::size_t count_formula(const TcnConfig &c) {
  const std::size_t F = c.input_dim, B = c.bottleneck, H = c.hidden, k = c.kernel, L = c.layers_per_block;
  std::size_t n = 2 * F;                           // layer norm
  n += B * F + B;                                  // bottleneck
  const std::size_t block = (H * k * B + H)        // first dilated conv
                            + (L - 1) * (H * k * H + H)  // remaining convs
                            + (B * H + B);         // residual projection
  n += c.blocks * block;
  n += c.n_classes * B + c.n_classes;              // output
  return n;
}

TEST(Tcn, InitDeterministicAndCount) {
  TcnConfig cfg;
  const ParamSet a = tcn_init(cfg, 5), b = tcn_init(cfg, 5);
  ASSERT_EQ(a.size(), b.size());
  for (const auto &[n, t] : a) EXPECT_EQ(t.data, b.at(n).data) << n;
  EXPECT_EQ(param_count(a), count_formula(cfg));
  EXPECT_EQ(param_count(a), 2u * 64 + (64 * 64 + 64) + 3 * ((128 * 3 * 64 + 128) + 4 * (128 * 3 * 128 + 128) +
                                                           (64 * 128 + 64)) + (3 * 64 + 3));
  EXPECT_NE(tcn_init(cfg, 6).at("tcn.out.w").data, a.at("tcn.out.w").data);
  EXPECT_EQ(a.at("tcn.ln.gain").data, std::vector<double>(64, 1.0));
  cfg.blocks = 0;
  EXPECT_THROW(tcn_init(cfg, 1), ArgumentError);
}

TEST(Tcn, ShapesAndErrors) {
  const TcnConfig cfg = TinySetup::tcn(7);
  const ParamSet p = tcn_init(cfg, 1);
  Rng rng(2);
  EXPECT_EQ(tcn_forward(p, cfg, random_tensor({1, 7}, rng)).shape, (Shape{1, 3}));
  EXPECT_EQ(tcn_forward(p, cfg, random_tensor({40, 7}, rng)).shape, (Shape{40, 3}));
  EXPECT_THROW(tcn_forward(p, cfg, random_tensor({4, 6}, rng)), ArgumentError);
}

TEST(Tcn, CausalityAndReceptiveField) {
  TcnConfig cfg = TinySetup::tcn(5);
  cfg.layers_per_block = 3;
  const std::size_t rf = cfg.receptive_field();
  EXPECT_EQ(rf, 1u + 2 * (2 + 4 + 8));
  ParamSet p = tcn_init(cfg, 3);
  // Large positive biases keep every ReLU on the longest path active.
  Rng rng(7);
  for (auto &[n, t] : p)
    if (n.ends_with(".b")) t = random_tensor(t.shape, rng, 1.0, 4.0);
  const std::size_t T = 3 * rf;
  const Tensor X = random_tensor({T, 5}, rng);
  const Tensor base = tcn_forward(p, cfg, X);
  const std::size_t t0 = 4;
  Tensor Xp = X;
  // Feature-dependent offset; a constant shift would be removed by layer norm.
  for (std::size_t f = 0; f < 5; ++f) Xp.at(t0, f) += 0.5 * static_cast<double>(f + 1);
  const Tensor pert = tcn_forward(p, cfg, Xp);
  std::size_t last_changed = 0;
  for (std::size_t t = 0; t < T; ++t) {
    double d = 0.0;
    for (std::size_t m = 0; m < 3; ++m) d = std::max(d, std::abs(pert.at(t, m) - base.at(t, m)));
    if (t < t0) {
      EXPECT_EQ(d, 0.0) << "frame " << t;
    }
    if (d > 0.0) last_changed = t;
  }
  EXPECT_EQ(last_changed, t0 + rf - 1);
}

TEST(Posteriors, Basics) {
  Tensor z(Shape{2, 3}, 0.0);
  z.at(1, 0) = 1.0;
  z.at(1, 1) = 3.0;
  z.at(1, 2) = -2.0;
  const Tensor p = posteriors(z);
  for (std::size_t m = 0; m < 3; ++m) EXPECT_NEAR(p.at(0, m), 1.0 / 3.0, 1e-15);
  Tensor s = z;
  for (std::size_t m = 0; m < 3; ++m) s.at(1, m) += 1000.0;
  EXPECT_LE(max_abs_diff(posteriors(s), p), 1e-12);
  EXPECT_EQ(argmax_rows(p), argmax_rows(z));
  Rng rng(1);
  const Tensor q = posteriors(random_tensor({50, 3}, rng, -30, 30));
  for (std::size_t t = 0; t < 50; ++t) EXPECT_NEAR(q.at(t, 0) + q.at(t, 1) + q.at(t, 2), 1.0, 1e-9);
  const auto [vad, osd] = vad_osd_scores(p);
  EXPECT_NEAR(vad[1], p.at(1, 1) + p.at(1, 2), 1e-15);
  EXPECT_EQ(osd[1], p.at(1, 2));
}

TEST(Grad, SumOfSquaresIsExact) {
  Rng rng(1);
  const Tensor v = random_tensor({7}, rng);
  Tape tape;
  Var p = tape.leaf(v);
  tape.backward(ag::sum(ag::square(p)));
  const Tensor g = tape.grad(p);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(g[i], 2.0 * v[i]);
}

TEST(Grad, DetachedAndUnreachedGetZero) {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{3}, 2.0));
  Var b = tape.leaf(Tensor(Shape{3}, 1.0));
  Var unused = tape.leaf(Tensor(Shape{2}, 1.0));
  tape.backward(ag::sum(ag::mul(a, ag::detach(b))));
  EXPECT_EQ(tape.grad(a).data, std::vector<double>(3, 1.0));
  EXPECT_EQ(tape.grad(b).data, std::vector<double>(3, 0.0));
  EXPECT_EQ(tape.grad(unused).data, std::vector<double>(2, 0.0));
}

TEST(Grad, NanInForwardIsRejected) {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{2}, -1.0));
  Var l = ag::sum(ag::sqrt(a));
  EXPECT_THROW(tape.backward(l), NumericError);
}

// Each recorded op against central differences.
TEST(Grad, OpsMatchFiniteDifferences) {
  Rng rng(11);
  ParamSet ps;
  ps["a"] = random_tensor({4, 3, 5}, rng);
  ps["b"] = random_tensor({5, 2}, rng);
  ps["c"] = random_tensor({2}, rng);
  ps["w"] = random_tensor({3, 3, 5}, rng);
  const Tensor data_mag = random_tensor({4, 3, 5}, rng, 0.1, 1.0), data_phase = random_tensor({4, 3, 5}, rng, -3.0, 3.0);
  ps["pos"] = random_tensor({4, 3, 5}, rng, 0.5, 2.0);
  ps["g"] = random_tensor({5}, rng, 0.5, 1.5);
  ps["lb"] = random_tensor({5}, rng);
  ps["cb"] = random_tensor({3}, rng);
  ps["wt"] = random_tensor({4, 3}, rng);
  ps["h"] = random_tensor({2, 8}, rng);
  ps["x"] = random_tensor({3, 40}, rng);
  const Tensor probe = random_tensor({64}, rng);
  auto dot = [&](Tape &tape, const Var &v) {
    Tensor w(v.shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = probe[i % probe.size()] + 0.01 * static_cast<double>(i);
    return ag::sum(ag::mul(v, tape.constant(w)));
  };
  std::vector<std::pair<std::string, testing::LossFn>> cases = {
      {"linear", [&](Tape &t, const BoundParams &p) { return dot(t, ag::linear(p.at("a"), p.at("b"), p.at("c"))); }},
      {"softmax", [&](Tape &t, const BoundParams &p) { return dot(t, ag::softmax_last(p.at("a"))); }},
      {"bmm", [&](Tape &t, const BoundParams &p) {
         return dot(t, ag::bmm(ag::softmax_last(ag::bmm_nt(p.at("a"), p.at("a"))), p.at("a")));
       }},
      {"log_exp_sqrt", [&](Tape &t, const BoundParams &p) {
         return dot(t, ag::add(ag::log(p.at("pos"), 1e-3), ag::mul(ag::exp(p.at("a")), ag::sqrt(p.at("pos")))));
       }},
      {"div_relu", [&](Tape &t, const BoundParams &p) {
         return dot(t, ag::div(ag::relu(p.at("a")), ag::add_scalar(p.at("pos"), 0.3)));
       }},
      {"mvn_time", [&](Tape &t, const BoundParams &p) { return dot(t, ag::mvn_time(p.at("a"), 1e-6)); }},
      {"layer_norm", [&](Tape &t, const BoundParams &p) {
         return dot(t, ag::layer_norm(ag::reshape(p.at("a"), Shape{12, 5}), p.at("g"), p.at("lb")));
       }},
      {"conv1d", [&](Tape &t, const BoundParams &p) {
         return dot(t, ag::conv1d_causal(ag::reshape(p.at("a"), Shape{12, 5}), p.at("w"), p.at("cb"), 2));
       }},
      {"weighted_sum", [&](Tape &t, const BoundParams &p) {
         return dot(t, ag::weighted_channel_sum(ag::softmax_last(p.at("wt")), p.at("a")));
       }},
      {"polar_abs", [&](Tape &t, const BoundParams &p) {
         Var w = ag::softmax_last(p.at("wt"));
         return dot(t, ag::complex_abs(ag::polar_combine(w, ag::softmax_last(ag::scale(p.at("wt"), 2.0)),
                                                        t.constant(data_mag), t.constant(data_phase))));
       }},
      {"correlate", [&](Tape &t, const BoundParams &p) {
         return dot(t, ag::strided_correlate(p.at("x"), p.at("h"), 4));
       }},
      {"frobenius_swap", [&](Tape &t, const BoundParams &p) {
         return ag::add(ag::frobenius(ag::swap01(p.at("a"))), dot(t, ag::swap01(p.at("a"))));
       }},
      {"cross_entropy", [&](Tape &, const BoundParams &p) {
         const std::vector<int> lab{0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0};
         return ag::cross_entropy(ag::reshape(ag::slice(p.at("a"), 2, 0, 2), Shape{12, 2}), lab);
       }},
  };
  for (const auto &[name, fn] : cases) {
    const auto rep = grad_check(ps, fn);
    EXPECT_LE(rep.max_rel, 1e-6) << name << " worst " << rep.worst;
  }
}

TEST(Grad, TcnWithCrossEntropy) {
  const TcnConfig cfg = TinySetup::tcn(6);
  ParamSet ps = tcn_init(cfg, 4);
  Rng rng(8);
  for (auto &[n, t] : ps)
    if (n.ends_with(".b") || n == "tcn.ln.bias") t = random_tensor(t.shape, rng, -0.2, 0.2);
  const Tensor X = random_tensor({9, 6}, rng);
  const std::vector<int> lab{0, 0, 1, 1, 2, 2, 1, 0, 1};
  const auto rep = grad_check(ps, [&](Tape &tape, const BoundParams &b) {
    return ag::cross_entropy(tcn_forward(b, cfg, tape.constant(X)), lab);
  });
  EXPECT_LE(rep.max_rel, 1e-4) << rep.worst;
}

TEST(Grad, FullSaccPipeline) {
  const FrontendConfig fc = TinySetup::frontend(FrontendKind::Sacc);
  const TcnConfig tc = TinySetup::tcn(feature_dim(fc));
  ParamSet ps = frontend_init(fc, TinySetup::kRate, 1);
  Rng rng(5);
  // Random biases keep ReLUs off their kinks in the causal padding.
  for (auto &[n, t] : tcn_init(tc, 2)) ps[n] = n.ends_with(".b") ? random_tensor(t.shape, rng, -0.1, 0.1) : t;
  const MultichannelSignal sig = testing::random_signal(4, TinySetup::kSamples, TinySetup::kRate, 3);
  const std::vector<int> lab{0, 1, 2, 2, 1, 0};
  const auto rep = grad_check(ps, [&](Tape &tape, const BoundParams &b) {
    return ag::cross_entropy(tcn_forward(b, tc, frontend_graph(tape, b, fc, sig)), lab);
  });
  EXPECT_LE(rep.max_rel, 1e-4) << rep.worst;
}

}  // namespace
}  // namespace mcvad
