// mcvad/signal_io.hpp

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

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mcvad/errors.hpp"
#include "mcvad/tensor.hpp"

namespace mcvad {

/// C x N waveform. Row c holds original microphone channel_ids()[c].
class MultichannelSignal {
 public:
  MultichannelSignal() = default;

  MultichannelSignal(Tensor samples, int sample_rate, std::vector<int> channel_ids)
      : samples_(std::move(samples)), rate_(sample_rate), ids_(std::move(channel_ids)) {
    if (samples_.rank() != 2) throw ArgumentError("samples must be a C x N matrix");
    if (samples_.dim(0) < 1) throw ArgumentError("signal needs at least one channel");
    if (rate_ <= 0) throw ArgumentError("sample rate must be positive");
    if (ids_.size() != samples_.dim(0)) throw ArgumentError("channel_ids length must equal channel count");
    if (std::set<int>(ids_.begin(), ids_.end()).size() != ids_.size())
      throw ArgumentError("channel_ids must be distinct");
  }

  MultichannelSignal(Tensor samples, int sample_rate)
      : MultichannelSignal(samples, sample_rate, iota_ids(samples.rank() == 2 ? samples.dim(0) : 0)) {}

  std::size_t channels() const { return samples_.dim(0); }
  std::size_t frames() const { return samples_.dim(1); }
  int sample_rate() const { return rate_; }
  double duration_s() const { return static_cast<double>(frames()) / rate_; }
  const std::vector<int> &channel_ids() const { return ids_; }
  const Tensor &samples() const { return samples_; }

  std::span<const double> row(std::size_t c) const {
    return {samples_.data.data() + c * frames(), frames()};
  }
  double operator()(std::size_t c, std::size_t n) const { return samples_.at(c, n); }

  static std::vector<int> iota_ids(std::size_t n) {
    std::vector<int> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i);
    return v;
  }

 private:
  Tensor samples_;
  int rate_ = 0;
  std::vector<int> ids_;
};

enum class WavEncoding { Pcm16, Float32 };

namespace wav_detail {

inline std::uint32_t rd_u32(const unsigned char *p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t rd_u16(const unsigned char *p) { return std::uint16_t(p[0] | p[1] << 8); }

inline void put_u32(std::string &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u16(std::string &out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace wav_detail

/// Reads RIFF/WAVE PCM16 or IEEE float32; 16-bit samples are divided by 32768.
inline MultichannelSignal read_wav(const std::string &path) {
  using namespace wav_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw FormatError(path + ": not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char *data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char *ck = buf.data() + pos;
    const std::uint32_t len = rd_u32(ck + 4);
    if (pos + 8 + len > buf.size()) {
      // Tolerate a truncated trailing data chunk (streaming writers leave the size unset).
      if (std::memcmp(ck, "data", 4) != 0) throw FormatError(path + ": chunk exceeds file size");
    }
    const std::size_t avail = std::min<std::size_t>(len, buf.size() - pos - 8);
    if (std::memcmp(ck, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError(path + ": fmt chunk too short");
      format = rd_u16(ck + 8);
      channels = rd_u16(ck + 10);
      rate = rd_u32(ck + 12);
      bits = rd_u16(ck + 22);
      if (format == 0xFFFE) {
        if (len < 40) throw FormatError(path + ": extensible fmt chunk too short");
        format = rd_u16(ck + 32);
      }
      have_fmt = true;
    } else if (std::memcmp(ck, "data", 4) == 0) {
      data = ck + 8;
      data_len = avail;
    }
    pos += 8 + len + (len & 1);
  }
  if (!have_fmt || data == nullptr) throw FormatError(path + ": missing fmt or data chunk");
  if (channels < 1 || channels > 64) throw FormatError(path + ": channel count out of range 1..64");
  if (rate == 0) throw FormatError(path + ": zero sample rate");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw UnsupportedCodecError(path + ": unsupported encoding (format " + std::to_string(format) + ", " +
                                std::to_string(bits) + " bits)");

  const std::size_t width = bits / 8;
  const std::size_t n = data_len / (width * channels);
  Tensor s(Shape{channels, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char *p = data + (i * channels + c) * width;
      double v;
      if (pcm16) {
        v = static_cast<double>(static_cast<std::int16_t>(rd_u16(p))) / 32768.0;
      } else {
        v = static_cast<double>(std::bit_cast<float>(rd_u32(p)));
      }
      s.at(c, i) = v;
    }
  return MultichannelSignal(std::move(s), static_cast<int>(rate));
}

inline std::int16_t to_pcm16(double x) {
  const double v = std::nearbyint(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

inline void write_wav(const MultichannelSignal &sig, const std::string &path,
                      WavEncoding enc = WavEncoding::Pcm16) {
  using namespace wav_detail;
  for (double v : sig.samples().data)
    if (!std::isfinite(v)) throw ArgumentError("cannot write non-finite samples");
  const std::uint16_t C = static_cast<std::uint16_t>(sig.channels());
  const std::uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint32_t data_len = static_cast<std::uint32_t>(sig.frames() * C * (bits / 8));
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, enc == WavEncoding::Pcm16 ? 1 : 3);
  put_u16(out, C);
  put_u32(out, static_cast<std::uint32_t>(sig.sample_rate()));
  put_u32(out, static_cast<std::uint32_t>(sig.sample_rate()) * C * (bits / 8));
  put_u16(out, static_cast<std::uint16_t>(C * (bits / 8)));
  put_u16(out, bits);
  out += "data";
  put_u32(out, data_len);
  for (std::size_t i = 0; i < sig.frames(); ++i)
    for (std::size_t c = 0; c < C; ++c) {
      if (enc == WavEncoding::Pcm16)
        put_u16(out, static_cast<std::uint16_t>(to_pcm16(sig(c, i))));
      else
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(sig(c, i))));
    }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path);
}

/// Keeps the channels whose original ids are in `keep`, in ascending id order.
inline MultichannelSignal mask_channels(const MultichannelSignal &sig, const std::set<int> &keep) {
  if (keep.empty()) throw ArgumentError("mask_channels: keep set is empty");
  std::vector<std::pair<int, std::size_t>> rows;
  for (int id : keep) {
    auto it = std::find(sig.channel_ids().begin(), sig.channel_ids().end(), id);
    if (it == sig.channel_ids().end())
      throw ArgumentError("mask_channels: channel " + std::to_string(id) + " not present");
    rows.emplace_back(id, static_cast<std::size_t>(it - sig.channel_ids().begin()));
  }
  Tensor s(Shape{rows.size(), sig.frames()});
  std::vector<int> ids;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = sig.row(rows[r].second);
    std::copy(src.begin(), src.end(), s.data.begin() + static_cast<std::ptrdiff_t>(r * sig.frames()));
    ids.push_back(rows[r].first);
  }
  return MultichannelSignal(std::move(s), sig.sample_rate(), std::move(ids));
}

/// Copies round(dur_s * rate) samples starting at round(start_s * rate).
inline MultichannelSignal slice_segment(const MultichannelSignal &sig, double start_s, double dur_s) {
  const double total = sig.duration_s();
  if (!(start_s >= 0.0) || !(dur_s > 0.0) || start_s + dur_s > total + 0.5 / sig.sample_rate())
    throw RangeError("slice_segment: window [" + std::to_string(start_s) + ", " + std::to_string(start_s + dur_s) +
                     ") outside signal of " + std::to_string(total) + " s");
  const auto first = static_cast<std::size_t>(std::llround(start_s * sig.sample_rate()));
  const auto n = static_cast<std::size_t>(std::llround(dur_s * sig.sample_rate()));
  if (first + n > sig.frames()) throw RangeError("slice_segment: window exceeds signal");
  Tensor s(Shape{sig.channels(), n});
  for (std::size_t c = 0; c < sig.channels(); ++c)
    std::copy_n(sig.row(c).begin() + static_cast<std::ptrdiff_t>(first), n,
                s.data.begin() + static_cast<std::ptrdiff_t>(c * n));
  return MultichannelSignal(std::move(s), sig.sample_rate(), sig.channel_ids());
}

}  // namespace mcvad
