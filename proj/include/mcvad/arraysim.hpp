// mcvad/arraysim.hpp

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

// Far-field anechoic microphone-array scenes with known source directions
// and speaker schedules.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mcvad/beamform.hpp"
#include "mcvad/errors.hpp"
#include "mcvad/fft.hpp"
#include "mcvad/rng.hpp"
#include "mcvad/segeval.hpp"
#include "mcvad/signal_io.hpp"

namespace mcvad {

enum class NoiseKind { None, White, Diffuse };
enum class SourceKind { ModulatedNoise, Ar2 };

struct SourceSpec {
  double azimuth = 0.0;  // radians in [0, 2 pi)
  double onset = 0.0;
  double duration = 0.0;
  SourceKind kind = SourceKind::Ar2;
  double level_db = 0.0;         // relative to 0.1 RMS
  double resonance_hz = 800.0;   // AR(2) pole frequency
  std::string speaker;           // defaults to spk<index>
};

struct SceneSpec {
  ArrayGeometry geometry = ArrayGeometry::uca(8, 0.1);
  std::vector<SourceSpec> sources;
  NoiseKind noise = NoiseKind::White;
  double snr_db = 20.0;
  double duration_s = 2.0;
  int sample_rate = 16000;
  std::uint64_t seed = 0;
  std::string file_id = "scene";

  void validate() const {
    if (!(duration_s > 0.0)) throw ArgumentError("scene duration must be positive");
    if (sample_rate <= 0) throw ArgumentError("scene sample rate must be positive");
    if (geometry.mics() < 1) throw ArgumentError("scene geometry has no microphones");
    if (!std::isfinite(snr_db)) throw ArgumentError("SNR must be finite");
    for (const SourceSpec &s : sources) {
      if (!(s.azimuth >= 0.0 && s.azimuth < 2.0 * std::numbers::pi)) throw ArgumentError("azimuth must lie in [0, 2 pi)");
      if (!(s.onset >= 0.0 && s.onset < duration_s)) throw ArgumentError("source onset outside the scene");
      if (!(s.duration > 0.0)) throw ArgumentError("source duration must be positive");
      if (!(s.resonance_hz > 0.0 && s.resonance_hz < sample_rate / 2.0))
        throw ArgumentError("source resonance must lie below Nyquist");
    }
  }
};

struct Scene {
  MultichannelSignal mix;
  MultichannelSignal clean;
  MultichannelSignal noise;
  SegmentSet truth;
};

/// Far-field arrival delays (seconds) of a plane wave from `azimuth`,
/// offset so the earliest microphone has delay 0.
inline std::vector<double> plane_wave_delays(const ArrayGeometry &geom, double azimuth) {
  std::vector<double> tau(geom.mics());
  if (geom.kind == ArrayGeometry::Kind::Uca) {
    for (std::size_t c = 0; c < tau.size(); ++c) tau[c] = -(geom.radius / geom.speed) * std::cos(azimuth - geom.psi[c]);
  } else {
    const double ux = std::cos(azimuth), uy = std::sin(azimuth);
    for (std::size_t c = 0; c < tau.size(); ++c)
      tau[c] = -(geom.positions[c][0] * ux + geom.positions[c][1] * uy) / geom.speed;
  }
  const double mn = *std::min_element(tau.begin(), tau.end());
  for (double &t : tau) t -= mn;
  return tau;
}

namespace sim_detail {

/// Delays x by each of `delays` seconds with a frequency-domain phase
/// shift on a zero-padded block; returns one row per delay.
inline std::vector<std::vector<double>> fractional_delays(const std::vector<double> &x, const std::vector<double> &delays,
                                                          int rate) {
  const std::size_t n = x.size();
  const std::size_t M = next_pow2(n + 256);
  std::vector<cplx> X = rfft(x, M);
  std::vector<std::vector<double>> out;
  std::vector<cplx> Z(X.size());
  for (double d : delays) {
    for (std::size_t k = 0; k < X.size(); ++k) {
      const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(M) * d * rate;
      Z[k] = X[k] * std::polar(1.0, -w);
    }
    Z.back() = cplx(Z.back().real(), 0.0);
    std::vector<double> y = irfft(Z, M);
    y.resize(n);
    out.push_back(std::move(y));
  }
  return out;
}

inline std::vector<double> source_signal(const SourceSpec &s, std::size_t n, int rate, Rng &rng) {
  std::vector<double> x(n, 0.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double mod_hz = rng.uniform(3.0, 6.0);
  if (s.kind == SourceKind::Ar2) {
    const double rho = 0.95, w0 = 2.0 * std::numbers::pi * s.resonance_hz / rate;
    const double a1 = 2.0 * rho * std::cos(w0), a2 = -rho * rho;
    double y1 = 0.0, y2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = rng.normal() + a1 * y1 + a2 * y2;
      y2 = y1;
      y1 = y;
      x[i] = y;
    }
  } else {
    std::vector<double> w(n);
    for (double &v : w) v = rng.normal();
    const std::size_t M = next_pow2(n);
    std::vector<cplx> W = rfft(w, M);
    for (std::size_t k = 0; k < W.size(); ++k) {
      const double f = static_cast<double>(k) * rate / static_cast<double>(M);
      if (f < 200.0 || f > 4000.0) W[k] = 0.0;
    }
    x = irfft(W, M);
    x.resize(n);
  }
  for (std::size_t i = 0; i < n; ++i)
    x[i] *= 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * mod_hz * static_cast<double>(i) / rate + phase);
  return x;
}

inline double power(const std::vector<double> &x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return x.empty() ? 0.0 : p / static_cast<double>(x.size());
}

}  // namespace sim_detail

/// Renders every source through per-microphone fractional delays, then adds
/// noise scaled to the requested SNR relative to the summed sources.
inline Scene synth_scene(const SceneSpec &spec) {
  spec.validate();
  using namespace sim_detail;
  const std::size_t C = spec.geometry.mics();
  const auto N = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate));
  Rng rng(derive_seed({spec.seed, 0x5C3E}));
  Tensor clean(Shape{C, N}, 0.0), noise(Shape{C, N}, 0.0);
  Scene scene;

  for (std::size_t si = 0; si < spec.sources.size(); ++si) {
    const SourceSpec &s = spec.sources[si];
    std::vector<double> x = source_signal(s, N, spec.sample_rate, rng);
    const auto a = static_cast<std::size_t>(std::llround(s.onset * spec.sample_rate));
    const auto b = std::min(N, static_cast<std::size_t>(std::llround((s.onset + s.duration) * spec.sample_rate)));
    double p = 0.0;
    for (std::size_t i = a; i < b; ++i) p += x[i] * x[i];
    const double rms = b > a ? std::sqrt(p / static_cast<double>(b - a)) : 1.0;
    const double gain = 0.1 * std::pow(10.0, s.level_db / 20.0) / (rms > 0.0 ? rms : 1.0);
    for (std::size_t i = 0; i < N; ++i) x[i] = (i >= a && i < b) ? x[i] * gain : 0.0;
    auto rows = fractional_delays(x, plane_wave_delays(spec.geometry, s.azimuth), spec.sample_rate);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < N; ++i) clean.at(c, i) += rows[c][i];
    scene.truth.push_back(
        {spec.file_id, s.onset, std::min(s.duration, spec.duration_s - s.onset),
         s.speaker.empty() ? "spk" + std::to_string(si) : s.speaker});
  }

  if (spec.noise != NoiseKind::None) {
    if (spec.noise == NoiseKind::White) {
      for (double &v : noise.data) v = rng.normal();
    } else {
      constexpr int kDirections = 36;
      const double offset = rng.uniform(0.0, 2.0 * std::numbers::pi / kDirections);
      for (int d = 0; d < kDirections; ++d) {
        std::vector<double> w(N);
        for (double &v : w) v = rng.normal();
        const double az = offset + 2.0 * std::numbers::pi * d / kDirections;
        auto rows = fractional_delays(w, plane_wave_delays(spec.geometry, az), spec.sample_rate);
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < N; ++i) noise.at(c, i) += rows[c][i] / std::sqrt(double(kDirections));
      }
    }
    double pc = 0.0, pn = 0.0;
    for (double v : clean.data) pc += v * v;
    for (double v : noise.data) pn += v * v;
    pc /= static_cast<double>(clean.size());
    pn /= static_cast<double>(noise.size());
    if (pc == 0.0) pc = 0.01;
    const double g = std::sqrt(pc / (pn * std::pow(10.0, spec.snr_db / 10.0)));
    for (double &v : noise.data) v *= g;
  }

  Tensor mix = clean;
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += noise[i];
  scene.mix = MultichannelSignal(std::move(mix), spec.sample_rate);
  scene.clean = MultichannelSignal(std::move(clean), spec.sample_rate);
  scene.noise = MultichannelSignal(std::move(noise), spec.sample_rate);
  return scene;
}

/// Template for randomized training scenes.
struct ToyConfig {
  ArrayGeometry geometry = ArrayGeometry::uca(8, 0.1);
  double segment_s = 2.0;
  int sample_rate = 16000;
  NoiseKind noise = NoiseKind::White;
  double snr_min_db = 5.0;
  double snr_max_db = 15.0;
};

struct LabeledSegment {
  MultichannelSignal signal;
  FrameLabels labels;
  SegmentSet truth;
};

/// Two-speaker scene with timeline [silence | A | A+B | B | silence]; the
/// silence and overlap fractions are drawn from U(0.15, 0.45), giving an
/// expected class prior of (0.3, 0.4, 0.3).
inline SceneSpec toy_scene_spec(const ToyConfig &cfg, std::uint64_t seed, std::size_t index) {
  Rng rng(derive_seed({seed, index, 0x70F}));
  SceneSpec spec;
  spec.geometry = cfg.geometry;
  spec.duration_s = cfg.segment_s;
  spec.sample_rate = cfg.sample_rate;
  spec.noise = cfg.noise;
  spec.snr_db = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
  spec.seed = derive_seed({seed, index, 0x5EED});
  spec.file_id = "toy" + std::to_string(index);

  const double D = cfg.segment_s;
  const double sil = rng.uniform(0.15, 0.45), ovl = rng.uniform(0.15, 0.45);
  const double single = 1.0 - sil - ovl;
  const double pre = sil * rng.uniform();
  const double a_only = single * rng.uniform();
  const double b_only = single - a_only;
  // Quantize to 10 ms so schedules align with label frames.
  auto q = [](double x) { return std::round(x * 100.0) / 100.0; };
  const double a_on = q(pre * D), b_on = q((pre + a_only) * D);
  const double a_off = q((pre + a_only + ovl) * D), b_off = q((pre + a_only + ovl + b_only) * D);

  const double az_a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double az_b = std::fmod(az_a + rng.uniform(std::numbers::pi / 4.0, 7.0 * std::numbers::pi / 4.0),
                                2.0 * std::numbers::pi);
  const double f_a = rng.uniform(300.0, 900.0), f_b = rng.uniform(1500.0, 3500.0);
  const bool swap = rng.uniform() < 0.5;
  SourceSpec A{az_a, a_on, a_off - a_on, SourceKind::Ar2, rng.uniform(-3.0, 3.0), swap ? f_b : f_a, "spkA"};
  SourceSpec B{az_b, b_on, b_off - b_on, SourceKind::Ar2, rng.uniform(-3.0, 3.0), swap ? f_a : f_b, "spkB"};
  if (A.duration > 0.0) spec.sources.push_back(A);
  if (B.duration > 0.0) spec.sources.push_back(B);
  return spec;
}

inline LabeledSegment toy_segment(const ToyConfig &cfg, std::uint64_t seed, std::size_t index) {
  SceneSpec spec = toy_scene_spec(cfg, seed, index);
  Scene sc = synth_scene(spec);
  FrameLabels fl = labels_from_segments(sc.truth, spec.duration_s);
  return {std::move(sc.mix), std::move(fl), std::move(sc.truth)};
}

inline std::vector<LabeledSegment> toy_dataset(const ToyConfig &cfg, std::size_t n_segments, std::uint64_t seed) {
  if (n_segments < 1) throw ArgumentError("toy_dataset needs at least one segment");
  std::vector<LabeledSegment> out;
  out.reserve(n_segments);
  for (std::size_t i = 0; i < n_segments; ++i) out.push_back(toy_segment(cfg, seed, i));
  return out;
}

}  // namespace mcvad
