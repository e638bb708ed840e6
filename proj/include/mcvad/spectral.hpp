// mcvad/spectral.hpp

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

// STFT analysis, mel projection, normalization and the learnable analytic
// filterbank front end.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include "mcvad/errors.hpp"
#include "mcvad/fft.hpp"
#include "mcvad/rng.hpp"
#include "mcvad/signal_io.hpp"
#include "mcvad/tensor.hpp"

namespace mcvad {

inline constexpr double kLogEps = 1e-8;
inline constexpr double kStdEps = 1e-6;

enum class WindowKind { HannPeriodic, Rectangular };

struct StftConfig {
  double win_len_s = 0.025;
  double hop_s = 0.010;
  std::size_t fft_size = 512;
  WindowKind window = WindowKind::HannPeriodic;

  std::size_t win_samples(int rate) const { return static_cast<std::size_t>(std::llround(win_len_s * rate)); }
  std::size_t hop_samples(int rate) const { return static_cast<std::size_t>(std::llround(hop_s * rate)); }
  std::size_t n_bins() const { return fft_size / 2 + 1; }

  void validate(int rate) const {
    if (win_samples(rate) == 0 || hop_samples(rate) == 0) throw ArgumentError("STFT window and hop must be non-empty");
    if (fft_size < win_samples(rate)) throw ArgumentError("fft_size must cover the analysis window");
    if (hop_s > win_len_s) throw ArgumentError("hop must not exceed window length");
    if (!is_pow2(fft_size)) throw ArgumentError("fft_size must be a power of two");
  }
};

inline std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::HannPeriodic)
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// Number of left-aligned frames of length win with hop step (no padding).
inline std::size_t frame_count(std::size_t n, std::size_t win, std::size_t hop) {
  return n < win ? 0 : (n - win) / hop + 1;
}

/// Complex C x T x K time-frequency representation.
struct ComplexSpectrogram {
  std::size_t C = 0, T = 0, K = 0;
  int rate = 0;
  double hop_s = 0.0;
  double bin_hz = 0.0;
  std::vector<cplx> bins;

  ComplexSpectrogram() = default;
  ComplexSpectrogram(std::size_t c, std::size_t t, std::size_t k, int r, double hop, double bhz)
      : C(c), T(t), K(k), rate(r), hop_s(hop), bin_hz(bhz), bins(c * t * k) {}

  cplx &at(std::size_t c, std::size_t t, std::size_t k) { return bins[(c * T + t) * K + k]; }
  const cplx &at(std::size_t c, std::size_t t, std::size_t k) const { return bins[(c * T + t) * K + k]; }

  /// |Y| laid out frame-major as [T, C, K].
  Tensor magnitude_tck() const {
    Tensor m(Shape{T, C, K});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < K; ++k) m.at(t, c, k) = std::sqrt(std::norm(at(c, t, k)));
    return m;
  }

  /// Principal angle in (-pi, pi], laid out as [T, C, K].
  Tensor phase_tck() const {
    Tensor m(Shape{T, C, K});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < K; ++k) {
          double a = std::arg(at(c, t, k));
          if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
          m.at(t, c, k) = a;
        }
    return m;
  }

  Tensor real_tck() const {
    Tensor m(Shape{T, C, K});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < K; ++k) m.at(t, c, k) = at(c, t, k).real();
    return m;
  }

  Tensor imag_tck() const {
    Tensor m(Shape{T, C, K});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < K; ++k) m.at(t, c, k) = at(c, t, k).imag();
    return m;
  }

  bool all_finite() const {
    for (const cplx &z : bins)
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    return true;
  }
};

/// Frame t covers samples [tH, tH+W); the window is applied before a
/// zero-padded FFT of size cfg.fft_size.
inline ComplexSpectrogram stft(const MultichannelSignal &sig, const StftConfig &cfg = {}) {
  cfg.validate(sig.sample_rate());
  const std::size_t W = cfg.win_samples(sig.sample_rate());
  const std::size_t H = cfg.hop_samples(sig.sample_rate());
  if (sig.frames() < W) throw RangeError("signal shorter than one STFT window");
  const std::size_t T = frame_count(sig.frames(), W, H);
  const std::size_t K = cfg.n_bins();
  ComplexSpectrogram Y(sig.channels(), T, K, sig.sample_rate(), cfg.hop_s,
                       static_cast<double>(sig.sample_rate()) / static_cast<double>(cfg.fft_size));
  const std::vector<double> win = make_window(cfg.window, W);
  // Two real frames per complex FFT: x in the real part, y in the imaginary
  // part, separated by X[k] = (Z[k] + conj Z[n-k]) / 2, Y[k] = (Z[k] - conj Z[n-k]) / 2j.
  const std::size_t n = cfg.fft_size, total = sig.channels() * T;
  std::vector<cplx> buf(n);
  auto frame_at = [&](std::size_t idx, std::size_t i) {
    return sig.row(idx / T)[(idx % T) * H + i] * win[i];
  };
  for (std::size_t idx = 0; idx < total; idx += 2) {
    const bool pair = idx + 1 < total;
    std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
    for (std::size_t i = 0; i < W && i < n; ++i) buf[i] = cplx(frame_at(idx, i), pair ? frame_at(idx + 1, i) : 0.0);
    fft_inplace(buf);
    cplx *xa = Y.bins.data() + idx * K;
    cplx *xb = pair ? Y.bins.data() + (idx + 1) * K : nullptr;
    for (std::size_t k = 0; k < K; ++k) {
      const cplx z = buf[k], zc = std::conj(buf[(n - k) % n]);
      xa[k] = 0.5 * (z + zc);
      if (pair) xb[k] = cplx(0.0, -0.5) * (z - zc);
    }
  }
  return Y;
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// HTK-scale triangular filters spanning 0..rate/2 as a [K, n_mels] matrix.
/// Triangles have unit peak (area-unnormalized).
inline Tensor mel_filterbank(std::size_t n_mels, std::size_t n_bins, int rate) {
  if (n_mels < 1) throw ArgumentError("n_mels must be at least 1");
  if (n_mels > n_bins) throw ArgumentError("n_mels exceeds the number of frequency bins");
  if (n_bins < 2) throw ArgumentError("need at least two frequency bins");
  const double nyq = rate / 2.0;
  const double bin_hz = nyq / static_cast<double>(n_bins - 1);
  const double mel_max = hz_to_mel(nyq);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  Tensor fb(Shape{n_bins, n_mels}, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double w = std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid));
      if (w > 0.0) fb.at(k, m) = w;
    }
  }
  return fb;
}

/// mag [T, K] -> [T, n_mels].
inline Tensor mel_project(const Tensor &mag, std::size_t n_mels, int rate) {
  if (mag.rank() != 2) throw ArgumentError("mel_project expects a T x K magnitude matrix");
  const std::size_t T = mag.dim(0), K = mag.dim(1);
  const Tensor fb = mel_filterbank(n_mels, K, rate);
  Tensor out(Shape{T, n_mels}, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < K; ++k) {
      const double v = mag.at(t, k);
      if (v == 0.0) continue;
      for (std::size_t m = 0; m < n_mels; ++m) out.at(t, m) += v * fb.at(k, m);
    }
  return out;
}

inline Tensor log_compress(const Tensor &x, double eps = kLogEps) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0) throw ArgumentError("log_compress: negative input");
    y[i] = std::log(x[i] + eps);
  }
  return y;
}

/// Per (c, k) standardization over time for a C x T x K tensor.
inline Tensor mvn(const Tensor &x, double eps = kStdEps) {
  if (x.rank() != 3) throw ArgumentError("mvn expects a C x T x K tensor");
  const std::size_t C = x.dim(0), T = x.dim(1), K = x.dim(2);
  if (T < 2) throw ArgumentError("mvn needs at least two frames");
  Tensor y(x.shape);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < K; ++k) {
      double mu = 0.0, var = 0.0;
      for (std::size_t t = 0; t < T; ++t) mu += x.at(c, t, k);
      mu /= static_cast<double>(T);
      for (std::size_t t = 0; t < T; ++t) var += (x.at(c, t, k) - mu) * (x.at(c, t, k) - mu);
      const double sd = std::sqrt(var / static_cast<double>(T));
      for (std::size_t t = 0; t < T; ++t) y.at(c, t, k) = (x.at(c, t, k) - mu) / (sd + eps);
    }
  return y;
}

/// Circulant kernel of the spectral Hilbert transform for even length L:
/// the imaginary part of IFFT(mask * FFT(h)) with mask = 1 at DC and
/// Nyquist, 2 on positive and 0 on negative frequencies.
inline std::vector<double> hilbert_kernel(std::size_t L) {
  if (L == 0 || L % 2 != 0) throw ArgumentError("Hilbert kernel length must be even");
  std::vector<double> kern(L, 0.0);
  for (std::size_t m = 0; m < L; ++m) {
    double acc = 0.0;
    for (std::size_t k = 1; k < L / 2; ++k)
      acc += std::sin(2.0 * std::numbers::pi * static_cast<double>((k * m) % L) / static_cast<double>(L));
    kern[m] = 2.0 * acc / static_cast<double>(L);
  }
  return kern;
}

/// [L, L] matrix M with imag_row = real_row * M.
inline Tensor hilbert_matrix(std::size_t L) {
  const std::vector<double> kern = hilbert_kernel(L);
  Tensor M(Shape{L, L});
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t n = 0; n < L; ++n) M.at(l, n) = kern[(n + L - l) % L];
  return M;
}

struct AnalyticFilterBank {
  Tensor real_ir;  // [n_filters, L], learnable
  Tensor imag_ir;  // Hilbert pair of real_ir
  std::size_t stride = 160;

  std::size_t n_filters() const { return real_ir.dim(0); }
  std::size_t length() const { return real_ir.dim(1); }

  /// Recomputes imag_ir from real_ir; call after every update of real_ir.
  void refresh() {
    const std::size_t F = n_filters(), L = length();
    const std::vector<double> kern = hilbert_kernel(L);
    imag_ir = Tensor(Shape{F, L}, 0.0);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t n = 0; n < L; ++n) {
        double acc = 0.0;
        for (std::size_t l = 0; l < L; ++l) acc += real_ir.at(f, l) * kern[(n + L - l) % L];
        imag_ir.at(f, n) = acc;
      }
  }
};

inline AnalyticFilterBank analytic_fb_from_real(Tensor real_ir, std::size_t stride) {
  if (real_ir.rank() != 2 || real_ir.dim(0) < 1) throw ArgumentError("analytic filterbank needs an F x L matrix");
  if (real_ir.dim(1) % 2 != 0) throw ArgumentError("analytic filter length must be even");
  if (stride == 0) throw ArgumentError("analytic filterbank stride must be positive");
  AnalyticFilterBank fb{std::move(real_ir), Tensor(), stride};
  fb.refresh();
  return fb;
}

/// Uniform init in [-1/sqrt(L), 1/sqrt(L)].
inline AnalyticFilterBank analytic_fb_init(std::size_t n_filters, std::size_t L, std::uint64_t seed,
                                           std::size_t stride = 160) {
  if (n_filters < 1) throw ArgumentError("need at least one analytic filter");
  if (L == 0 || L % 2 != 0) throw ArgumentError("analytic filter length must be even");
  Rng rng(seed);
  const double a = 1.0 / std::sqrt(static_cast<double>(L));
  Tensor re(Shape{n_filters, L});
  for (double &v : re.data) v = rng.uniform(-a, a);
  return analytic_fb_from_real(std::move(re), stride);
}

/// Strided valid correlation with the complex filters, shared by all
/// channels. Output uses the spectrogram container with K = n_filters.
inline ComplexSpectrogram analytic_fb_apply(const MultichannelSignal &sig, const AnalyticFilterBank &fb) {
  const std::size_t L = fb.length(), F = fb.n_filters();
  if (sig.frames() < L) throw RangeError("signal shorter than the analytic filter kernel");
  const std::size_t T = frame_count(sig.frames(), L, fb.stride);
  ComplexSpectrogram out(sig.channels(), T, F, sig.sample_rate(),
                         static_cast<double>(fb.stride) / sig.sample_rate(), 0.0);
  for (std::size_t c = 0; c < sig.channels(); ++c) {
    auto row = sig.row(c);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) {
        double re = 0.0, im = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
          const double x = row[t * fb.stride + l];
          re += fb.real_ir.at(f, l) * x;
          im += fb.imag_ir.at(f, l) * x;
        }
        out.at(c, t, f) = cplx(re, im);
      }
  }
  return out;
}

}  // namespace mcvad
