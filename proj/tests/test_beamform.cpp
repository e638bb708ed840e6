// tests/test_beamform.cpp

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

#include <algorithm>
#include <cmath>
#include <numbers>

#include "test_util.hpp"

namespace mcvad {
namespace {

constexpr double kPi = std::numbers::pi;
double deg(double d) { return d * kPi / 180.0; }

std::size_t argmax_abs(const std::vector<cplx> &v) {
  std::size_t b = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[b])) b = i;
  return b;
}

std::size_t circ_dist(std::size_t a, std::size_t b, std::size_t n) {
  const std::size_t d = a > b ? a - b : b - a;
  return std::min(d, n - d);
}

SceneSpec one_source(double az_deg, NoiseKind noise, double snr, std::uint64_t seed) {
  SceneSpec s;
  s.sources.push_back({deg(az_deg), 0.0, 2.0, SourceKind::ModulatedNoise, 0.0, 800.0, "a"});
  s.noise = noise;
  s.snr_db = snr;
  s.seed = seed;
  return s;
}

TEST(Geometry, FsupAndValidation) {
  EXPECT_NEAR(ArrayGeometry::uca(8, 0.1).f_sup(), 2183.5, 0.1);
  EXPECT_NEAR(ArrayGeometry::uca(8, 0.1).f_sup(), 8 * 343.0 / (4 * kPi * 0.1), 1e-9);
  EXPECT_THROW(ArrayGeometry::uca(4, 0.0), ArgumentError);
  EXPECT_THROW(ArrayGeometry::from_positions({{0, 0, 0}, {0, 0, 0}}), ArgumentError);
}

TEST(Beampattern, DelayAndSumSteers) {
  const ArrayGeometry g = ArrayGeometry::uca(8, 0.1);
  const auto th = degree_grid();
  for (int d : {0, 37, 90, 200, 311})
    for (double f : {300.0, 1000.0, 2000.0}) {
      const auto w = delay_and_sum_weights(g, f, deg(d));
      const auto b = narrowband_beampattern(w, g, f, th);
      EXPECT_NEAR(std::abs(b[static_cast<std::size_t>(d)]), 1.0, 1e-12);
      EXPECT_EQ(argmax_abs(b), static_cast<std::size_t>(d));
    }
}

TEST(Beampattern, SingleSensorAndLowFrequency) {
  const ArrayGeometry g = ArrayGeometry::uca(8, 0.1);
  const auto th = degree_grid(72);
  std::vector<cplx> w(8, cplx(0, 0));
  w[0] = 1.0;
  for (const cplx &v : narrowband_beampattern(w, g, 1500.0, th)) EXPECT_NEAR(std::abs(v), 1.0, 1e-12);
  std::vector<cplx> u(8, cplx(1.0 / 8, 0));
  for (const cplx &v : narrowband_beampattern(u, g, 1e-6, th)) EXPECT_NEAR(std::abs(v - 1.0), 0.0, 1e-9);
  EXPECT_THROW(narrowband_beampattern(u, g, 2200.0, th), AliasingError);
  EXPECT_NO_THROW(narrowband_beampattern(u, g, 2200.0, th, true));
  EXPECT_THROW(narrowband_beampattern(std::vector<cplx>(3), g, 100.0, th), ArgumentError);
}

TEST(Beampattern, BroadbandStacksNarrowband) {
  const ArrayGeometry g = ArrayGeometry::uca(8, 0.1);
  const auto w = delay_and_sum_weights(g, 1000.0, deg(120));
  const BeampatternGrid one{degree_grid(), {1000.0}};
  const Beampattern bp = broadband_beampattern(w, g, one);
  const auto nb = narrowband_beampattern(w, g, 1000.0, one.thetas);
  for (std::size_t i = 0; i < nb.size(); ++i) EXPECT_EQ(bp.at(0, i), nb[i]);

  // Frequency-dependent steering gives a ridge at 120 degrees for every row.
  const BeampatternGrid grid{degree_grid(), {400.0, 800.0, 1200.0, 1600.0, 2000.0}};
  for (std::size_t fi = 0; fi < grid.freqs.size(); ++fi) {
    const auto wf = delay_and_sum_weights(g, grid.freqs[fi], deg(120));
    const Beampattern b = broadband_beampattern(wf, g, grid);
    std::vector<cplx> row(b.values.begin() + static_cast<long>(fi * b.n_thetas),
                          b.values.begin() + static_cast<long>((fi + 1) * b.n_thetas));
    EXPECT_EQ(argmax_abs(row), 120u);
  }
}

TEST(Beampattern, LinearityAndRotation) {
  const ArrayGeometry g = ArrayGeometry::uca(8, 0.1);
  Rng rng(3);
  std::vector<cplx> w1(8), w2(8), mix(8);
  const cplx a(0.7, -0.2), b(-1.3, 0.4);
  for (std::size_t c = 0; c < 8; ++c) {
    w1[c] = cplx(rng.normal(), rng.normal());
    w2[c] = cplx(rng.normal(), rng.normal());
    mix[c] = a * w1[c] + b * w2[c];
  }
  const auto th = degree_grid();
  const auto B1 = narrowband_beampattern(w1, g, 1234.0, th), B2 = narrowband_beampattern(w2, g, 1234.0, th),
             Bm = narrowband_beampattern(mix, g, 1234.0, th);
  for (std::size_t i = 0; i < th.size(); ++i) EXPECT_LE(std::abs(Bm[i] - (a * B1[i] + b * B2[i])), 1e-12);

  // Rotate weights by one microphone (45 degrees) and the grid by 45 entries.
  std::vector<cplx> rot(8);
  for (std::size_t c = 0; c < 8; ++c) rot[(c + 1) % 8] = w1[c];
  const auto Br = narrowband_beampattern(rot, g, 1234.0, th);
  for (std::size_t i = 0; i < 360; ++i) EXPECT_NEAR(std::abs(Br[(i + 45) % 360]), std::abs(B1[i]), 1e-9);
}

TEST(Beampattern, TimeAverage) {
  const ArrayGeometry g = ArrayGeometry::uca(8, 0.1);
  const auto th = degree_grid();
  const auto w = delay_and_sum_weights(g, 1000.0, deg(30));
  Eigen::MatrixXcd W(8, 5), A(8, 4);
  for (int t = 0; t < 5; ++t)
    for (int c = 0; c < 8; ++c) W(c, t) = w[static_cast<std::size_t>(c)];
  for (int t = 0; t < 4; ++t)
    for (int c = 0; c < 8; ++c) A(c, t) = (t % 2 ? -1.0 : 1.0) * w[static_cast<std::size_t>(c)];
  const auto avg = time_avg_beampattern(W, g, 1000.0, th);
  const auto nb = narrowband_beampattern(w, g, 1000.0, th);
  for (std::size_t i = 0; i < th.size(); ++i) EXPECT_LE(std::abs(avg.mean[i] - nb[i]), 1e-12);
  EXPECT_NEAR(*std::max_element(avg.normalized.begin(), avg.normalized.end()), 1.0, 1e-12);
  for (const cplx &v : time_avg_beampattern(A, g, 1000.0, th).mean) EXPECT_LE(std::abs(v), 1e-12);
  EXPECT_THROW(time_avg_beampattern(Eigen::MatrixXcd(8, 0), g, 1000.0, th), ArgumentError);
}

TEST(Cdr, CoherentPlaneWave) {
  SceneSpec s = one_source(60, NoiseKind::None, 100, 4);
  const Scene sc = synth_scene(s);
  const ComplexSpectrogram Y = stft(sc.mix);
  const Tensor m = cdr_mask(Y, s.geometry);
  // Active bins: inside the source band, above f_sup / 8, and within 30 dB of
  // the bin's peak energy.
  std::size_t n = 0, good = 0;
  for (std::size_t k = 0; k < Y.K; ++k) {
    const double f = k * Y.bin_hz;
    if (f < 300.0 || f > 3800.0) continue;
    double peak = 0.0;
    for (std::size_t t = 0; t < Y.T; ++t) peak = std::max(peak, std::norm(Y.at(0, t, k)));
    for (std::size_t t = 2; t < Y.T; ++t) {
      if (std::norm(Y.at(0, t, k)) < 1e-3 * peak) continue;
      ++n;
      good += m.at(t, k) >= 0.99;
    }
  }
  ASSERT_GT(n, 1000u);
  EXPECT_GE(static_cast<double>(good) / n, 0.99);
}

TEST(Cdr, UncorrelatedNoise) {
  double mean = 0.0;
  const int seeds = 5;
  const ArrayGeometry g = ArrayGeometry::uca(8, 0.1);
  for (int s = 0; s < seeds; ++s) {
    const MultichannelSignal x = testing::random_signal(8, 32000, 16000, 100 + s);
    const Tensor m = cdr_mask(stft(x), g);
    double mu = 0.0;
    for (double v : m.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      mu += v;
    }
    mean += mu / m.size() / seeds;
  }
  EXPECT_LE(mean, 0.2);
}

TEST(Cdr, SingleFrameAndErrors) {
  const MultichannelSignal x = testing::random_signal(4, 400, 16000, 1);
  const Tensor m = cdr_mask(stft(x), ArrayGeometry::uca(4, 0.1));
  EXPECT_EQ(m.dim(0), 1u);
  EXPECT_TRUE(m.all_finite());
  EXPECT_THROW(cdr_mask(stft(testing::random_signal(1, 400, 16000, 1)), ArrayGeometry::uca(1, 0.1)), ArgumentError);
}

TEST(Mvdr, IdenticalChannelsIdentityNoise) {
  const Eigen::MatrixXcd ps = Eigen::MatrixXcd::Ones(5, 5);
  const MvdrWeights w = mvdr_weights(ps, Eigen::MatrixXcd::Identity(5, 5));
  for (int c = 0; c < 5; ++c) EXPECT_LE(std::abs(w.h(c) - cplx(0.2, 0.0)), 1e-9);
}

TEST(Mvdr, DistortionlessAndSnrGain) {
  SceneSpec s = one_source(75, NoiseKind::Diffuse, 0.0, 12);
  s.sources[0].onset = 0.5;
  s.sources[0].duration = 1.2;
  const Scene sc = synth_scene(s);
  const ComplexSpectrogram Y = stft(sc.mix), S = stft(sc.clean), N = stft(sc.noise);
  const MvdrResult r = mvdr(Y, cdr_mask(Y, s.geometry));
  ASSERT_EQ(r.per_bin.size(), Y.K);
  for (const MvdrWeights &w : r.per_bin) EXPECT_LE(std::abs(w.h.dot(w.steering) - 1.0), 1e-6);

  const Tensor so = apply_bin_weights(S, r.per_bin), no = apply_bin_weights(N, r.per_bin);
  double ps = 0.0, pn = 0.0;
  for (std::size_t i = 0; i < so.size(); ++i) {
    ps += so[i] * so[i];
    pn += no[i] * no[i];
  }
  double best = -1e9;
  for (std::size_t c = 0; c < 8; ++c) {
    double a = 0.0, b = 0.0;
    for (std::size_t n = 0; n < sc.clean.frames(); ++n) {
      a += sc.clean(c, n) * sc.clean(c, n);
      b += sc.noise(c, n) * sc.noise(c, n);
    }
    best = std::max(best, 10.0 * std::log10(a / b));
  }
  EXPECT_GT(10.0 * std::log10(ps / pn), best);
}

TEST(Mvdr, Errors) {
  const ComplexSpectrogram Y = stft(testing::random_signal(1, 800, 16000, 1));
  EXPECT_THROW(mvdr(Y, Tensor(Shape{Y.T, Y.K}, 0.5)), ArgumentError);
  const ComplexSpectrogram Y2 = stft(testing::random_signal(2, 800, 16000, 1));
  EXPECT_THROW(mvdr(Y2, Tensor(Shape{Y2.T, Y2.K + 1}, 0.5)), ArgumentError);
  EXPECT_THROW(mvdr_weights(Eigen::MatrixXcd::Ones(2, 2), Eigen::MatrixXcd::Zero(2, 2)), NumericError);
}

TEST(Srp, SingleSourceAt40) {
  const SceneSpec s = one_source(40, NoiseKind::White, 20, 7);
  const SrpMap m = srp_phat(stft(synth_scene(s).mix), s.geometry, circle_candidates());
  EXPECT_LE(circ_dist(m.argmax, 40, 360), 1u);
}

TEST(Srp, TwoSources) {
  SceneSpec s = one_source(40, NoiseKind::White, 20, 8);
  s.sources.push_back({deg(220), 0.0, 2.0, SourceKind::ModulatedNoise, 0.0, 800.0, "b"});
  const SrpMap m = srp_phat(stft(synth_scene(s).mix), s.geometry, circle_candidates());
  auto local_max_near = [&](std::size_t target) {
    std::size_t best = target;
    for (int d = -5; d <= 5; ++d) {
      const std::size_t i = (target + 360 + d) % 360;
      if (m.energy[i] > m.energy[best]) best = i;
    }
    const double left = m.energy[(best + 359) % 360], right = m.energy[(best + 1) % 360];
    return m.energy[best] >= left && m.energy[best] >= right && circ_dist(best, target, 360) <= 1;
  };
  EXPECT_TRUE(local_max_near(40));
  EXPECT_TRUE(local_max_near(220));
}

TEST(Srp, WhiteNoiseIsFlat) {
  const ArrayGeometry g = ArrayGeometry::uca(8, 0.1);
  std::vector<double> avg(360, 0.0);
  for (int s = 0; s < 5; ++s) {
    const SrpMap m = srp_phat(stft(testing::random_signal(8, 16000, 16000, 50 + s)), g, circle_candidates());
    for (std::size_t i = 0; i < 360; ++i) avg[i] += m.energy[i] / 5.0;
  }
  std::vector<double> sorted = avg;
  std::nth_element(sorted.begin(), sorted.begin() + 180, sorted.end());
  const double med = sorted[180];
  EXPECT_GT(med, 0.0);
  for (double v : avg) EXPECT_LE(v, 2.0 * med);
}

TEST(Srp, TenRandomDirections) {
  Rng rng(99);
  for (int i = 0; i < 10; ++i) {
    const int az = static_cast<int>(rng.uniform_int(0, 359));
    const SceneSpec s = one_source(az, NoiseKind::White, 20, 200 + i);
    const SrpMap m = srp_phat(stft(synth_scene(s).mix), s.geometry, circle_candidates());
    EXPECT_LE(circ_dist(m.argmax, static_cast<std::size_t>(az), 360), 1u) << "azimuth " << az;
  }
}

TEST(Srp, Errors) {
  const ArrayGeometry g = ArrayGeometry::uca(4, 0.1);
  const ComplexSpectrogram Y = stft(testing::random_signal(4, 800, 16000, 1));
  EXPECT_THROW(srp_phat(Y, g, circle_candidates(), 5000.0, 6000.0 - 1000.0), ArgumentError);
  EXPECT_THROW(srp_phat(Y, g, std::vector<Point3>{}), ArgumentError);
  EXPECT_THROW(srp_phat(Y, ArrayGeometry::uca(3, 0.1), circle_candidates()), ArgumentError);
}

}  // namespace
}  // namespace mcvad
