// mcvad/beamform.hpp

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

// Classical spatial processing: UCA beampatterns, CDR masks, mask-driven
// MVDR and SRP-PHAT acoustic maps.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mcvad/combinator.hpp"
#include "mcvad/errors.hpp"
#include "mcvad/spectral.hpp"

namespace mcvad {

using Point3 = std::array<double, 3>;

struct ArrayGeometry {
  enum class Kind { Uca, Explicit };

  Kind kind = Kind::Uca;
  double radius = 0.0;
  std::vector<double> psi;  // microphone angles (UCA)
  std::vector<Point3> positions;
  double speed = 343.0;

  /// Uniform circular array with microphone c at angle psi0 + 2 pi c / C.
  static ArrayGeometry uca(std::size_t C, double r, double speed = 343.0, double psi0 = 0.0) {
    if (C < 1) throw ArgumentError("UCA needs at least one microphone");
    if (!(r > 0.0)) throw ArgumentError("UCA radius must be positive");
    ArrayGeometry g;
    g.kind = Kind::Uca;
    g.radius = r;
    g.speed = speed;
    for (std::size_t c = 0; c < C; ++c) {
      const double a = psi0 + 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(C);
      g.psi.push_back(a);
      g.positions.push_back({r * std::cos(a), r * std::sin(a), 0.0});
    }
    return g;
  }

  static ArrayGeometry from_positions(std::vector<Point3> pos, double speed = 343.0) {
    for (std::size_t i = 0; i < pos.size(); ++i)
      for (std::size_t j = i + 1; j < pos.size(); ++j)
        if (pos[i] == pos[j]) throw ArgumentError("microphone positions must be distinct");
    ArrayGeometry g;
    g.kind = Kind::Explicit;
    g.positions = std::move(pos);
    g.speed = speed;
    return g;
  }

  std::size_t mics() const { return positions.size(); }

  /// Restriction to the given microphone indices (for masked evaluation).
  ArrayGeometry subset(std::span<const int> ids) const {
    ArrayGeometry g = *this;
    g.positions.clear();
    g.psi.clear();
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= mics()) throw ArgumentError("microphone index out of range");
      g.positions.push_back(positions[static_cast<std::size_t>(id)]);
      if (kind == Kind::Uca) g.psi.push_back(psi[static_cast<std::size_t>(id)]);
    }
    return g;
  }

  double distance(std::size_t i, std::size_t j) const {
    const auto &a = positions[i];
    const auto &b = positions[j];
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
  }

  /// Highest alias-free frequency of a UCA, C * v_s / (4 pi r).
  double f_sup() const {
    if (kind != Kind::Uca) throw ArgumentError("f_sup is defined for circular arrays only");
    return static_cast<double>(mics()) * speed / (4.0 * std::numbers::pi * radius);
  }
};

struct BeampatternGrid {
  std::vector<double> thetas;
  std::vector<double> freqs;
};

/// values[f][theta] flattened row-major, |freqs| x |thetas|.
struct Beampattern {
  std::size_t n_freqs = 0, n_thetas = 0;
  std::vector<cplx> values;
  const cplx &at(std::size_t f, std::size_t th) const { return values[f * n_thetas + th]; }
};

inline std::vector<double> degree_grid(std::size_t n = 360) {
  std::vector<double> th(n);
  for (std::size_t i = 0; i < n; ++i) th[i] = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
  return th;
}

/// B(theta) = sum_c w_c exp(j wbar cos(theta - psi_c)), wbar = 2 pi r f / v_s.
inline std::vector<cplx> narrowband_beampattern(std::span<const cplx> w, const ArrayGeometry &geom, double f,
                                                std::span<const double> thetas, bool allow_aliasing = false) {
  if (geom.kind != ArrayGeometry::Kind::Uca) throw ArgumentError("beampattern requires a circular array");
  if (w.size() != geom.mics()) throw ArgumentError("weight vector length does not match the array");
  if (!allow_aliasing && f >= geom.f_sup())
    throw AliasingError("frequency " + std::to_string(f) + " Hz is at or above f_sup " + std::to_string(geom.f_sup()));
  const double wbar = 2.0 * std::numbers::pi * geom.radius * f / geom.speed;
  std::vector<cplx> out(thetas.size());
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    cplx acc(0.0, 0.0);
    for (std::size_t c = 0; c < w.size(); ++c) acc += w[c] * std::polar(1.0, wbar * std::cos(thetas[i] - geom.psi[c]));
    out[i] = acc;
  }
  return out;
}

inline Beampattern broadband_beampattern(std::span<const cplx> w, const ArrayGeometry &geom,
                                         const BeampatternGrid &grid, bool allow_aliasing = false) {
  Beampattern bp{grid.freqs.size(), grid.thetas.size(), {}};
  bp.values.reserve(bp.n_freqs * bp.n_thetas);
  for (double f : grid.freqs) {
    auto row = narrowband_beampattern(w, geom, f, grid.thetas, allow_aliasing);
    bp.values.insert(bp.values.end(), row.begin(), row.end());
  }
  return bp;
}

/// Delay-and-sum weights steering a UCA towards theta0 at frequency f.
inline std::vector<cplx> delay_and_sum_weights(const ArrayGeometry &geom, double f, double theta0) {
  const double wbar = 2.0 * std::numbers::pi * geom.radius * f / geom.speed;
  const double C = static_cast<double>(geom.mics());
  std::vector<cplx> w(geom.mics());
  for (std::size_t c = 0; c < w.size(); ++c) w[c] = std::polar(1.0 / C, -wbar * std::cos(theta0 - geom.psi[c]));
  return w;
}

struct TimeAveragedBeampattern {
  std::vector<cplx> mean;
  std::vector<double> normalized;  // |mean| rescaled so its maximum is 1
};

/// Average of the per-frame narrowband beampatterns of w (C x T).
inline TimeAveragedBeampattern time_avg_beampattern(const Eigen::MatrixXcd &w, const ArrayGeometry &geom, double f,
                                                    std::span<const double> thetas, bool allow_aliasing = false) {
  if (w.cols() < 1) throw ArgumentError("time_avg_beampattern needs at least one frame");
  if (static_cast<std::size_t>(w.rows()) != geom.mics()) throw ArgumentError("weight rows must match the array");
  TimeAveragedBeampattern out;
  out.mean.assign(thetas.size(), cplx(0.0, 0.0));
  std::vector<cplx> col(geom.mics());
  for (Eigen::Index t = 0; t < w.cols(); ++t) {
    for (std::size_t c = 0; c < col.size(); ++c) col[c] = w(static_cast<Eigen::Index>(c), t);
    auto bt = narrowband_beampattern(col, geom, f, thetas, allow_aliasing);
    for (std::size_t i = 0; i < thetas.size(); ++i) out.mean[i] += bt[i];
  }
  double mx = 0.0;
  for (cplx &v : out.mean) {
    v /= static_cast<double>(w.cols());
    mx = std::max(mx, std::abs(v));
  }
  out.normalized.resize(thetas.size());
  for (std::size_t i = 0; i < thetas.size(); ++i) out.normalized[i] = mx > 0.0 ? std::abs(out.mean[i]) / mx : 0.0;
  return out;
}

/// Complex weights w_mag * exp(j 2 pi w_phi) of a complex combinator, C x T.
inline Eigen::MatrixXcd complex_combination_weights(const CombinationWeights &w_mag, const CombinationWeights &w_phi) {
  const auto C = static_cast<Eigen::Index>(w_mag.w.dim(0)), T = static_cast<Eigen::Index>(w_mag.w.dim(1));
  Eigen::MatrixXcd w(C, T);
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index t = 0; t < T; ++t)
      w(c, t) = std::polar(w_mag.w.at(static_cast<std::size_t>(c), static_cast<std::size_t>(t)),
                           2.0 * std::numbers::pi * w_phi.w.at(static_cast<std::size_t>(c), static_cast<std::size_t>(t)));
  return w;
}

// ---------------------------------------------------------------------------
// CDR mask.

inline constexpr double kCdrForgetting = 0.68;

/// DOA-independent CDR estimate from the measured coherence z and the diffuse
/// noise coherence gamma_n (real). Solves |z (cdr + 1) - gamma_n| = cdr for
/// the non-negative root.
inline double cdr_doa_independent(cplx z, double gamma_n) {
  constexpr double kMaxMag = 1.0 - 1e-10;
  if (std::abs(z) > kMaxMag) z *= kMaxMag / std::abs(z);
  const double z2 = std::norm(z), zr = z.real(), g = gamma_n;
  const double disc = g * g * zr * zr - g * g * z2 + z2 - 2.0 * g * zr + g * g;
  const double cdr = (-std::sqrt(std::max(disc, 0.0)) - z2 + g * zr) / (z2 - 1.0);
  return std::max(cdr, 0.0);
}

inline double sinc(double x) { return x == 0.0 ? 1.0 : std::sin(x) / x; }

/// Speech-presence mask m = CDR / (CDR + 1), T x K, from pairwise coherence
/// tracked by first-order recursive averaging.
inline Tensor cdr_mask(const ComplexSpectrogram &Y, const ArrayGeometry &geom, double forgetting = kCdrForgetting) {
  if (Y.C < 2) throw ArgumentError("cdr_mask needs at least two channels");
  if (geom.mics() != Y.C) throw ArgumentError("cdr_mask: geometry does not match channel count");
  const std::size_t C = Y.C, T = Y.T, K = Y.K;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = i + 1; j < C; ++j) pairs.emplace_back(i, j);

  Tensor cdr_sum(Shape{T, K}, 0.0);
  std::vector<double> pii(K), pjj(K);
  std::vector<cplx> pij(K);
  for (auto [i, j] : pairs) {
    const double d = geom.distance(i, j);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < K; ++k) {
        const cplx yi = Y.at(i, t, k), yj = Y.at(j, t, k);
        const double a = t == 0 ? 0.0 : forgetting, b = t == 0 ? 1.0 : 1.0 - forgetting;
        pii[k] = a * pii[k] + b * std::norm(yi);
        pjj[k] = a * pjj[k] + b * std::norm(yj);
        pij[k] = a * pij[k] + b * yi * std::conj(yj);
        const double den = std::sqrt(pii[k] * pjj[k]);
        const double f = static_cast<double>(k) * Y.bin_hz;
        const double gn = sinc(2.0 * std::numbers::pi * f * d / geom.speed);
        const double cdr = den > 0.0 ? cdr_doa_independent(pij[k] / den, gn) : 0.0;
        cdr_sum.at(t, k) += cdr;
      }
  }
  Tensor mask(Shape{T, K});
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double cdr = cdr_sum[i] / static_cast<double>(pairs.size());
    mask[i] = std::clamp(cdr / (cdr + 1.0), 0.0, 1.0);
  }
  return mask;
}

// ---------------------------------------------------------------------------
// MVDR.

struct MvdrWeights {
  Eigen::VectorXcd h;
  Eigen::VectorXcd steering;
};

/// h = Phi_n^-1 d / (d^H Phi_n^-1 d) with d the principal eigenvector of
/// phi_s normalized to unit response at the first microphone.
inline MvdrWeights mvdr_weights(const Eigen::MatrixXcd &phi_s, const Eigen::MatrixXcd &phi_n) {
  const Eigen::Index C = phi_s.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(phi_s);
  if (es.info() != Eigen::Success) throw NumericError("MVDR: eigendecomposition failed");
  Eigen::VectorXcd d = es.eigenvectors().col(C - 1);
  if (std::abs(d(0)) > 1e-12 * d.norm())
    d /= d(0);
  else
    d /= d.norm();
  const double loading = 1e-6 * phi_n.trace().real() / static_cast<double>(C);
  Eigen::MatrixXcd pn = phi_n;
  pn.diagonal().array() += loading;
  Eigen::LDLT<Eigen::MatrixXcd> ldlt(pn);
  if (ldlt.info() != Eigen::Success || !(pn.trace().real() > 0.0)) throw NumericError("MVDR: singular noise covariance");
  const Eigen::VectorXcd pd = ldlt.solve(d);
  const cplx den = d.dot(pd);  // d^H Phi^-1 d
  if (!(std::abs(den) > 0.0) || !std::isfinite(std::abs(den))) throw NumericError("MVDR: degenerate steering");
  return {pd / den, d};
}

struct MvdrResult {
  CombinedSpectrogram combined;  // [T, K, 2]
  std::vector<MvdrWeights> per_bin;
};

/// Applies per-bin weights: out[t,k] = h_k^H Y[:,t,k].
inline Tensor apply_bin_weights(const ComplexSpectrogram &Y, const std::vector<MvdrWeights> &w) {
  Tensor out(Shape{Y.T, Y.K, 2}, 0.0);
  for (std::size_t k = 0; k < Y.K; ++k)
    for (std::size_t t = 0; t < Y.T; ++t) {
      cplx acc(0.0, 0.0);
      for (std::size_t c = 0; c < Y.C; ++c) acc += std::conj(w[k].h(static_cast<Eigen::Index>(c))) * Y.at(c, t, k);
      out.at(t, k, 0) = acc.real();
      out.at(t, k, 1) = acc.imag();
    }
  return out;
}

/// Mask-driven MVDR: speech covariance weighted by mask, noise covariance by
/// (1 - mask), diagonal loading 1e-6 * trace / C.
inline MvdrResult mvdr(const ComplexSpectrogram &Y, const Tensor &mask) {
  if (Y.C < 2) throw ArgumentError("mvdr needs at least two channels");
  if (mask.shape != Shape{Y.T, Y.K}) throw ArgumentError("mvdr: mask must be T x K");
  const auto C = static_cast<Eigen::Index>(Y.C);
  MvdrResult res;
  res.per_bin.reserve(Y.K);
  Eigen::VectorXcd y(C);
  for (std::size_t k = 0; k < Y.K; ++k) {
    Eigen::MatrixXcd ps = Eigen::MatrixXcd::Zero(C, C), pn = Eigen::MatrixXcd::Zero(C, C), pall = ps;
    double ws = 0.0, wn = 0.0;
    for (std::size_t t = 0; t < Y.T; ++t) {
      for (Eigen::Index c = 0; c < C; ++c) y(c) = Y.at(static_cast<std::size_t>(c), t, k);
      const Eigen::MatrixXcd outer = y * y.adjoint();
      const double m = mask.at(t, k);
      ps += m * outer;
      pn += (1.0 - m) * outer;
      pall += outer;
      ws += m;
      wn += 1.0 - m;
    }
    ps = ws > 1e-9 ? Eigen::MatrixXcd(ps / ws) : Eigen::MatrixXcd(pall / static_cast<double>(Y.T));
    pn = wn > 1e-9 ? Eigen::MatrixXcd(pn / wn) : Eigen::MatrixXcd(pall / static_cast<double>(Y.T));
    res.per_bin.push_back(mvdr_weights(ps, pn));
  }
  res.combined = {apply_bin_weights(Y, res.per_bin), true, "mvdr"};
  return res;
}

// ---------------------------------------------------------------------------
// SRP-PHAT.

inline constexpr double kSrpMinHz = 300.0;

inline std::vector<Point3> circle_candidates(std::size_t n = 360, double radius = 2.0) {
  std::vector<Point3> pts;
  for (double th : degree_grid(n)) pts.push_back({radius * std::cos(th), radius * std::sin(th), 0.0});
  return pts;
}

struct SrpMap {
  std::vector<double> energy;
  std::size_t argmax = 0;
};

/// Steered response power |sum_c Y_c / |Y_c| exp(j w tau_c)|^2 summed over
/// frames and the band [f_min, f_max]; f_max <= 0 selects the UCA alias-free
/// limit. Expanded as the diagonal count plus twice the pairwise PHAT terms.
inline SrpMap srp_phat(const ComplexSpectrogram &Y, const ArrayGeometry &geom, std::span<const Point3> candidates,
                       double f_min = kSrpMinHz, double f_max = -1.0) {
  if (Y.C < 2) throw ArgumentError("srp_phat needs at least two channels");
  if (geom.mics() != Y.C) throw ArgumentError("srp_phat: geometry does not match channel count");
  if (candidates.empty()) throw ArgumentError("srp_phat: no candidate points");
  if (f_max <= 0.0) f_max = geom.f_sup();
  if (f_min >= f_max) throw ArgumentError("srp_phat: f_min must be below f_max");
  std::vector<std::size_t> band;
  for (std::size_t k = 0; k < Y.K; ++k) {
    const double f = static_cast<double>(k) * Y.bin_hz;
    if (f >= f_min && f <= f_max) band.push_back(k);
  }
  if (band.empty()) throw ArgumentError("srp_phat: empty frequency band");

  const std::size_t C = Y.C;
  // Time-summed PHAT-weighted cross spectra per pair and band bin.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = i + 1; j < C; ++j) pairs.emplace_back(i, j);
  std::vector<cplx> gcc(pairs.size() * band.size(), cplx(0.0, 0.0));
  double diag = 0.0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k : band)
      for (std::size_t t = 0; t < Y.T; ++t) diag += std::abs(Y.at(c, t, k)) > 0.0 ? 1.0 : 0.0;
  for (std::size_t p = 0; p < pairs.size(); ++p)
    for (std::size_t b = 0; b < band.size(); ++b)
      for (std::size_t t = 0; t < Y.T; ++t) {
        const cplx x = Y.at(pairs[p].first, t, band[b]) * std::conj(Y.at(pairs[p].second, t, band[b]));
        const double a = std::abs(x);
        if (a > 0.0) gcc[p * band.size() + b] += x / a;
      }

  SrpMap map;
  map.energy.assign(candidates.size(), 0.0);
  for (std::size_t q = 0; q < candidates.size(); ++q) {
    std::vector<double> tau(C);
    for (std::size_t c = 0; c < C; ++c) {
      const auto &m = geom.positions[c];
      const auto &pt = candidates[q];
      tau[c] = std::sqrt((pt[0] - m[0]) * (pt[0] - m[0]) + (pt[1] - m[1]) * (pt[1] - m[1]) +
                         (pt[2] - m[2]) * (pt[2] - m[2])) /
               geom.speed;
    }
    double e = 0.0;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const double dt = tau[pairs[p].first] - tau[pairs[p].second];
      for (std::size_t b = 0; b < band.size(); ++b) {
        const double w = 2.0 * std::numbers::pi * static_cast<double>(band[b]) * Y.bin_hz * dt;
        const cplx g = gcc[p * band.size() + b];
        e += g.real() * std::cos(w) - g.imag() * std::sin(w);
      }
    }
    map.energy[q] = diag + 2.0 * e;
  }
  map.argmax = static_cast<std::size_t>(std::max_element(map.energy.begin(), map.energy.end()) - map.energy.begin());
  return map;
}

}  // namespace mcvad
