// mcvad/fft.hpp

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
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "mcvad/errors.hpp"

namespace mcvad {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2 FFT. inverse=true computes the unscaled
// inverse transform; callers divide by n.
inline void fft_inplace(std::span<cplx> a, bool inverse = false) {
  const std::size_t n = a.size();
  if (!is_pow2(n)) throw ArgumentError("fft size must be a power of two, got " + std::to_string(n));
  // Forward twiddles exp(-2 pi j k / n), computed directly and cached per size.
  thread_local std::vector<cplx> tw;
  if (tw.size() != n / 2) {
    tw.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      tw[k] = cplx(std::cos(ang), std::sin(ang));
    }
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2, step = n / len;
    for (std::size_t i = 0; i < n; i += len)
      for (std::size_t k = 0; k < half; ++k) {
        // Explicit product; std::complex operator* adds inf/nan recovery.
        const double wr = tw[k * step].real(), wi = inverse ? -tw[k * step].imag() : tw[k * step].imag();
        const cplx u = a[i + k], x = a[i + k + half];
        const cplx v(x.real() * wr - x.imag() * wi, x.real() * wi + x.imag() * wr);
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
  }
}

/// One-sided spectrum (n/2+1 bins) of a real frame zero-padded to n.
inline std::vector<cplx> rfft(std::span<const double> x, std::size_t n) {
  std::vector<cplx> buf(n, cplx(0.0, 0.0));
  for (std::size_t i = 0; i < x.size() && i < n; ++i) buf[i] = x[i];
  fft_inplace(buf);
  buf.resize(n / 2 + 1);
  return buf;
}

/// Inverse of rfft for an n-point real signal given its n/2+1 bins.
inline std::vector<double> irfft(std::span<const cplx> half, std::size_t n) {
  std::vector<cplx> buf(n);
  for (std::size_t k = 0; k <= n / 2; ++k) buf[k] = half[k];
  for (std::size_t k = n / 2 + 1; k < n; ++k) buf[k] = std::conj(half[n - k]);
  fft_inplace(buf, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i].real() / static_cast<double>(n);
  return out;
}

}  // namespace mcvad
