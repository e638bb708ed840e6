// tests/test_trainer.cpp

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
#include <sstream>

#include "test_util.hpp"

namespace mcvad {
namespace {

using testing::random_tensor;

FrameLabels make(std::vector<int> l) {
  FrameLabels f;
  f.labels = std::move(l);
  return f;
}

TEST(CrossEntropy, ClosedForms) {
  Tensor z(Shape{3, 3}, 0.0);
  EXPECT_NEAR(cross_entropy(z, make({0, 1, 2})), std::log(3.0), 1e-15);
  for (std::size_t t = 0; t < 3; ++t) z.at(t, t) = 20.0;
  EXPECT_LE(cross_entropy(z, make({0, 1, 2})), 1e-8);
  EXPECT_THROW(cross_entropy(z, make({0, 1})), ArgumentError);
  EXPECT_THROW(cross_entropy(z, make({0, 1, 3})), ArgumentError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  ParamSet ps{{"z", random_tensor({6, 3}, rng, -2, 2)}};
  const std::vector<int> y{0, 2, 1, 1, 0, 2};
  const auto rep = testing::grad_check(ps, [&](Tape &, const BoundParams &b) { return ag::cross_entropy(b.at("z"), y); });
  EXPECT_LE(rep.max_rel, 1e-4);
}

TEST(AlignLabels, TruncateAndRepeat) {
  EXPECT_EQ(align_labels({0, 1, 2, 2}, 2), (std::vector<int>{0, 1}));
  EXPECT_EQ(align_labels({0, 1}, 4), (std::vector<int>{0, 1, 1, 1}));
  EXPECT_THROW(align_labels({}, 2), ArgumentError);
}

double direct_inv(const Tensor &r, const std::vector<Tensor> &ms) {
  auto norm = [](const Tensor &t) {
    double s = 0.0;
    for (double v : t.data) s += v * v;
    return std::sqrt(s);
  };
  double acc = 0.0;
  for (const Tensor &m : ms) {
    Tensor d = r;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= m[i];
    acc += norm(d) / ((norm(r) + kNormEps) * (norm(m) + kNormEps));
  }
  return acc / static_cast<double>(ms.size());
}

TEST(InvariantLoss, Examples) {
  Rng rng(2);
  const Tensor r = random_tensor({5, 4}, rng);
  EXPECT_LE(invariant_loss(r, {r, r, r}), 1e-12);

  Tensor eye(Shape{2, 2}, 0.0);
  eye.at(0, 0) = eye.at(1, 1) = 1.0;
  const double g = invariant_loss(eye, {Tensor(Shape{2, 2}, 0.0)});
  EXPECT_TRUE(std::isfinite(g));
  EXPECT_NEAR(g, std::sqrt(2.0) / ((std::sqrt(2.0) + kNormEps) * kNormEps), 1e-3 * g);

  for (double a : {0.5, 2.0, 10.0}) {
    Tensor m = random_tensor({5, 4}, rng);
    Tensor s = m;
    for (double &v : s.data) v *= a;
    EXPECT_NEAR(invariant_loss(r, {s}), direct_inv(r, {s}), 1e-12);
    EXPECT_NEAR(invariant_loss(r, {m, s}), direct_inv(r, {m, s}), 1e-12);
  }
  EXPECT_THROW(invariant_loss(r, {}), ArgumentError);
  EXPECT_THROW(invariant_loss(r, {Tensor(Shape{4, 5}, 0.0)}), ArgumentError);
}

TEST(InvariantLoss, NonNegativeAndCosineFlag) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Tensor r = random_tensor({3, 3}, rng), m = random_tensor({3, 3}, rng);
    EXPECT_GE(invariant_loss(r, {m}), 0.0);
    EXPECT_GE(invariant_loss(r, {m}, true), 0.0);
  }
  const Tensor r = random_tensor({3, 3}, rng);
  Tensor s = r;
  for (double &v : s.data) v *= 3.0;
  EXPECT_LE(invariant_loss(r, {s}, true), 1e-12);
  EXPECT_GT(invariant_loss(r, {s}, false), 0.0);
}

TEST(InvariantLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  ParamSet ps{{"r", random_tensor({4, 3}, rng)}, {"a", random_tensor({4, 3}, rng)}, {"b", random_tensor({4, 3}, rng)}};
  for (bool cos : {false, true}) {
    const auto rep = testing::grad_check(ps, [&](Tape &, const BoundParams &p) {
      return invariant_loss(p.at("r"), {p.at("a"), p.at("b")}, cos);
    });
    EXPECT_LE(rep.max_rel, 1e-6) << rep.worst;
  }
}

TEST(DualLoss, Arithmetic) {
  EXPECT_EQ(dual_loss(1.3, 0.2, 1.0), 1.3);
  EXPECT_EQ(dual_loss(1.3, 0.2, 0.0), 0.2);
  EXPECT_NEAR(dual_loss(1.0, 0.2, 0.7), 0.76, 1e-15);
  EXPECT_THROW(dual_loss(1.0, 0.2, 1.1), ArgumentError);
  EXPECT_THROW(dual_loss(1.0, 0.2, -0.1), ArgumentError);
  EXPECT_LE(dual_loss(1.0, 0.2, 0.3), dual_loss(1.1, 0.2, 0.3));
  EXPECT_LE(dual_loss(1.0, 0.2, 0.3), dual_loss(1.0, 0.3, 0.3));
}

TEST(MaskedDuplicates, TwoChannelsAlwaysKeepBoth) {
  const MultichannelSignal x = testing::random_signal(2, 100, 16000, 1);
  InvariantConfig cfg;
  cfg.P = 5;
  for (std::uint64_t step = 0; step < 20; ++step)
    for (const auto &d : make_masked_duplicates(x, cfg, step)) EXPECT_EQ(d.channels(), 2u);
  EXPECT_THROW(make_masked_duplicates(testing::random_signal(1, 10, 16000, 1), cfg, 0), ArgumentError);
}

TEST(MaskedDuplicates, KeepCountIsUniform) {
  const std::vector<int> ids = MultichannelSignal::iota_ids(8);
  InvariantConfig cfg;
  cfg.P = 1;
  cfg.rng_seed = 17;
  std::vector<double> counts(9, 0.0);
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    const auto sets = draw_keep_sets(ids, cfg, static_cast<std::uint64_t>(s));
    ASSERT_GE(sets[0].size(), 2u);
    ++counts[sets[0].size()];
  }
  const double expect = draws / 7.0;
  double chi2 = 0.0;
  for (std::size_t k = 2; k <= 8; ++k) chi2 += (counts[k] - expect) * (counts[k] - expect) / expect;
  EXPECT_LT(chi2, 22.46);  // chi-square, 6 dof, p = 0.001
  EXPECT_EQ(counts[0] + counts[1], 0.0);
}

TEST(MaskedDuplicates, SubsetsAreUniformAndDeterministic) {
  const std::vector<int> ids = MultichannelSignal::iota_ids(6);
  InvariantConfig cfg;
  cfg.P = 3;
  cfg.rng_seed = 5;
  EXPECT_EQ(draw_keep_sets(ids, cfg, 7), draw_keep_sets(ids, cfg, 7));
  EXPECT_NE(draw_keep_sets(ids, cfg, 7), draw_keep_sets(ids, cfg, 8));
  // Membership frequency of each channel among size-3 subsets is 1/2.
  cfg.P = 1;
  cfg.min_keep = 3;
  std::vector<double> member(6, 0.0);
  int n3 = 0;
  for (int s = 0; s < 20000; ++s) {
    const auto k = draw_keep_sets(ids, cfg, static_cast<std::uint64_t>(s))[0];
    if (k.size() != 3) continue;
    ++n3;
    for (int c : k) ++member[static_cast<std::size_t>(c)];
  }
  for (double m : member) EXPECT_NEAR(m / n3, 0.5, 0.03);
  cfg.min_keep = 1;
  EXPECT_THROW(draw_keep_sets(ids, cfg, 0), ArgumentError);
}

TEST(Adam, FirstStepAndZeroGrads) {
  Rng rng(6);
  ParamSet p{{"w", random_tensor({10}, rng)}};
  const ParamSet p0 = p;
  ParamSet g{{"w", random_tensor({10}, rng, -3, 3)}};
  AdamState st;
  adam_step(p, g, st, 0.01);
  for (std::size_t i = 0; i < 10; ++i) {
    const double gi = g.at("w")[i];
    EXPECT_NEAR(p.at("w")[i] - p0.at("w")[i], -0.01 * gi / (std::abs(gi) + 1e-8), 1e-9);
  }

  ParamSet q = p0;
  AdamState zs;
  adam_step(q, g, zs, 0.01);
  const ParamSet after = q;
  const Tensor m1 = zs.m.at("w"), v1 = zs.v.at("w");
  ParamSet zero{{"w", Tensor(Shape{10}, 0.0)}};
  AdamState frozen = zs;
  ParamSet r = after;
  adam_step(r, zero, frozen, 0.0);
  EXPECT_EQ(r.at("w").data, after.at("w").data);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_NEAR(frozen.m.at("w")[i], 0.9 * m1[i], 1e-15);
    EXPECT_NEAR(frozen.v.at("w")[i], 0.999 * v1[i], 1e-15);
  }

  // Zero gradient from a zero state leaves parameters untouched.
  ParamSet z = p0;
  AdamState zst;
  adam_step(z, zero, zst, 0.1);
  EXPECT_EQ(z.at("w").data, p0.at("w").data);
}

TEST(Adam, ConstantGradientStepBound) {
  ParamSet p{{"w", Tensor(Shape{3}, 0.0)}};
  ParamSet g{{"w", Tensor(Shape{3}, std::vector<double>{0.5, -2.0, 1e-3})}};
  AdamState st;
  for (int i = 0; i < 500; ++i) {
    const ParamSet before = p;
    adam_step(p, g, st, 0.01);
    for (std::size_t j = 0; j < 3; ++j) {
      const double d = p.at("w")[j] - before.at("w")[j];
      EXPECT_LE(std::abs(d), 0.01 * (1.0 + 1e-6));
      EXPECT_LT(d * g.at("w")[j], 0.0);
    }
  }
}

TEST(Adam, RejectsBadGradients) {
  ParamSet p{{"w", Tensor(Shape{2}, 0.0)}};
  AdamState st;
  EXPECT_THROW(adam_step(p, {{"w", Tensor(Shape{2}, std::nan(""))}}, st, 0.1), NumericError);
  EXPECT_THROW(adam_step(p, {{"w", Tensor(Shape{3}, 0.0)}}, st, 0.1), ArgumentError);
  EXPECT_THROW(adam_step(p, {{"x", Tensor(Shape{2}, 0.0)}}, st, 0.1), ArgumentError);
}

struct SmallRun {
  ModelSpec spec;
  std::vector<LabeledSegment> train, valid;
  TrainConfig tcfg;

  SmallRun() {
    spec.frontend.kind = FrontendKind::Sacc;
    spec.frontend.n_mels = 16;
    spec.frontend.hidden = 8;
    spec.tcn.input_dim = 16;
    spec.tcn.bottleneck = 8;
    spec.tcn.hidden = 8;
    spec.tcn.layers_per_block = 2;
    spec.tcn.blocks = 1;
    ToyConfig toy;
    toy.geometry = ArrayGeometry::uca(4, 0.1);
    toy.segment_s = 0.5;
    train = toy_dataset(toy, 4, 1);
    valid = toy_dataset(toy, 2, 2);
    tcfg.batch_size = 2;
    tcfg.steps_per_epoch = 3;
    tcfg.max_epochs = 2;
    tcfg.patience = 5;
    tcfg.lr = 3e-3;
    tcfg.seed = 9;
  }
};

TEST(Train, LambdaOneMatchesCeOnly) {
  SmallRun r;
  InvariantConfig ic;
  ic.lambda = 1.0;
  const TrainResult a = train(r.spec, r.train, r.valid, r.tcfg, std::nullopt);
  const TrainResult b = train(r.spec, r.train, r.valid, r.tcfg, ic);
  for (const auto &[n, t] : a.last) EXPECT_EQ(t.data, b.last.at(n).data) << n;
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].ce, b.steps[i].ce);
}

TEST(Train, DeterministicLog) {
  SmallRun r;
  InvariantConfig ic;
  std::ostringstream l1, l2;
  train(r.spec, r.train, r.valid, r.tcfg, ic, &l1);
  train(r.spec, r.train, r.valid, r.tcfg, ic, &l2);
  EXPECT_FALSE(l1.str().empty());
  EXPECT_EQ(l1.str(), l2.str());
  std::istringstream in(l1.str());
  std::size_t steps = 0, epochs = 0;
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    (j["type"] == "step" ? steps : epochs)++;
  }
  EXPECT_EQ(steps, 6u);
  EXPECT_EQ(epochs, 2u);
}

TEST(Train, InvariantIsZeroForChannelIndependentInput) {
  SmallRun r;
  // Every channel carries the same waveform, so features do not depend on C.
  for (auto &seg : r.train) {
    Tensor t = seg.signal.samples();
    for (std::size_t c = 1; c < t.dim(0); ++c)
      for (std::size_t n = 0; n < t.dim(1); ++n) t.at(c, n) = t.at(0, n);
    seg.signal = MultichannelSignal(t, seg.signal.sample_rate());
  }
  InvariantConfig ic;
  const TrainResult res = train(r.spec, r.train, r.valid, r.tcfg, ic);
  for (const StepRecord &s : res.steps) EXPECT_LE(s.inv, 1e-12);
}

TEST(Train, LearnsOnTinyProblem) {
  SmallRun r;
  r.tcfg.steps_per_epoch = 30;
  r.tcfg.max_epochs = 1;
  r.tcfg.lr = 1e-2;
  const ParamSet init = model_init(r.spec, 16000, r.tcfg.seed);
  const double before = evaluate(init, r.spec, r.train).ce;
  const TrainResult res = train(r.spec, r.train, r.valid, r.tcfg, std::nullopt);
  EXPECT_LT(evaluate(res.last, r.spec, r.train).ce, before);
}

TEST(Train, EarlyStoppingAndErrors) {
  SmallRun r;
  r.tcfg.lr = 1e-12;  // effectively frozen: F1 cannot improve after epoch 1
  r.tcfg.steps_per_epoch = 1;
  r.tcfg.max_epochs = 10;
  r.tcfg.patience = 2;
  const TrainResult res = train(r.spec, r.train, r.valid, r.tcfg, std::nullopt);
  EXPECT_EQ(res.epochs_run, 3u);
  EXPECT_EQ(res.best_epoch, 1u);

  EXPECT_THROW(train(r.spec, {}, r.valid, r.tcfg, std::nullopt), ArgumentError);
  ParamSet bad = model_init(r.spec, 16000, 1);
  bad.at("tcn.out.b")[0] = std::nan("");
  EXPECT_THROW(train(r.spec, r.train, r.valid, r.tcfg, std::nullopt, nullptr, bad), NumericError);
  ModelSpec wrong = r.spec;
  wrong.tcn.input_dim = 15;
  EXPECT_THROW(model_init(wrong, 16000, 1), ArgumentError);
}

TEST(Evaluate, PoolsFramesAndMajority) {
  SmallRun r;
  const ParamSet p = model_init(r.spec, 16000, 3);
  const EvalResult e = evaluate(p, r.spec, r.valid);
  EXPECT_GE(e.accuracy, 0.0);
  EXPECT_LE(e.accuracy, 1.0);
  EXPECT_GT(e.majority_accuracy, 0.0);
  EXPECT_TRUE(std::isfinite(e.ce));
  const EvalResult masked = evaluate(p, r.spec, r.valid, [](const MultichannelSignal &s) {
    return mask_channels(s, {0, 1});
  });
  EXPECT_TRUE(std::isfinite(masked.ce));
}

}  // namespace
}  // namespace mcvad
