// mcvad/segeval.hpp

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
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mcvad/errors.hpp"
#include "mcvad/signal_io.hpp"
#include "mcvad/tcn.hpp"
#include "mcvad/tensor.hpp"

namespace mcvad {

inline constexpr double kLabelRate = 100.0;

struct Segment {
  std::string file_id;
  double onset = 0.0;
  double duration = 0.0;
  std::string speaker;

  bool operator==(const Segment &) const = default;
};

using SegmentSet = std::vector<Segment>;

struct FrameLabels {
  std::vector<int> labels;
  double label_rate = kLabelRate;
  std::optional<Tensor> posteriors;

  std::size_t size() const { return labels.size(); }
};

// ---------------------------------------------------------------------------
// RTTM.

inline SegmentSet parse_rttm_stream(std::istream &in) {
  SegmentSet out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<std::string> f;
    for (std::string tok; ss >> tok;) f.push_back(tok);
    if (f.empty() || f[0] != "SPEAKER") continue;
    if (f.size() < 8) throw ParseError("RTTM SPEAKER line has fewer than 8 fields", lineno);
    auto num = [&](const std::string &s, const char *what) {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception &) {
        throw ParseError(std::string("malformed RTTM ") + what + " '" + s + "'", lineno);
      }
    };
    Segment seg{f[1], num(f[3], "onset"), num(f[4], "duration"), f[7]};
    if (!(seg.duration > 0.0)) throw ParseError("RTTM duration must be positive", lineno);
    out.push_back(std::move(seg));
  }
  return out;
}

inline SegmentSet parse_rttm(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_rttm_stream(in);
}

inline std::string format_rttm(const SegmentSet &segs) {
  std::string out;
  char buf[512];
  for (const Segment &s : segs) {
    std::snprintf(buf, sizeof buf, "SPEAKER %s 1 %.3f %.3f <NA> <NA> %s <NA> <NA>\n", s.file_id.c_str(), s.onset,
                  s.duration, s.speaker.c_str());
    out += buf;
  }
  return out;
}

inline void write_rttm(const SegmentSet &segs, const std::string &path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << format_rttm(segs);
}

// ---------------------------------------------------------------------------
// Frame labels.

/// Frame t (center (t + 0.5) / rate) gets min(2, number of speakers active);
/// segments are half-open [onset, onset + duration).
inline FrameLabels labels_from_segments(const SegmentSet &segs, double duration_s, double label_rate = kLabelRate) {
  if (!(label_rate > 0.0)) throw ArgumentError("label rate must be positive");
  const auto T = static_cast<std::size_t>(std::llround(duration_s * label_rate));
  std::vector<int> count(T, 0);
  for (const Segment &s : segs) {
    // First frame whose center is >= onset, first frame whose center is >= end.
    auto first_at = [&](double time) {
      const double x = std::ceil(time * label_rate - 0.5 - 1e-9);
      return static_cast<long long>(std::max(0.0, x));
    };
    const long long a = first_at(s.onset);
    const long long b = std::min<long long>(first_at(s.onset + s.duration), static_cast<long long>(T));
    for (long long t = a; t < b; ++t) {
      const double center = (static_cast<double>(t) + 0.5) / label_rate;
      if (center >= s.onset && center < s.onset + s.duration) ++count[static_cast<std::size_t>(t)];
    }
  }
  FrameLabels fl;
  fl.label_rate = label_rate;
  fl.labels.resize(T);
  for (std::size_t t = 0; t < T; ++t) fl.labels[t] = std::min(count[t], 2);
  return fl;
}

/// Inverse of labels_from_segments for hypothesis output: "speech" covers
/// every frame with class >= 1 and "overlap" every frame with class 2.
inline SegmentSet segments_from_labels(const FrameLabels &fl, const std::string &file_id) {
  SegmentSet out;
  auto runs = [&](int min_class, const std::string &spk) {
    std::size_t t = 0;
    const std::size_t T = fl.labels.size();
    while (t < T) {
      if (fl.labels[t] < min_class) {
        ++t;
        continue;
      }
      std::size_t e = t;
      while (e < T && fl.labels[e] >= min_class) ++e;
      out.push_back({file_id, static_cast<double>(t) / fl.label_rate, static_cast<double>(e - t) / fl.label_rate, spk});
      t = e;
    }
  };
  runs(1, "speech");
  runs(2, "overlap");
  std::stable_sort(out.begin(), out.end(), [](const Segment &a, const Segment &b) { return a.onset < b.onset; });
  return out;
}

// ---------------------------------------------------------------------------
// Sliding-window inference.

/// Maps a window of signal to posteriors [T, 3] at roughly the label rate.
using PosteriorFn = std::function<Tensor(const MultichannelSignal &)>;

/// Resizes posterior rows to n frames: truncation or last-row repetition.
inline Tensor fit_rows(const Tensor &post, std::size_t n) {
  if (post.rank() != 2 || post.dim(0) == 0) throw ArgumentError("posteriors must be a non-empty T x M matrix");
  const std::size_t M = post.dim(1);
  Tensor out(Shape{n, M});
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t src = std::min(t, post.dim(0) - 1);
    for (std::size_t m = 0; m < M; ++m) out.at(t, m) = post.at(src, m);
  }
  return out;
}

/// Window posteriors are averaged on overlapping frames, then the class is
/// the argmax (ties toward the lower class).
inline FrameLabels sliding_infer(const PosteriorFn &model, const MultichannelSignal &sig, double win_s = 2.0,
                                 double hop_s = 0.5, double label_rate = kLabelRate) {
  const double spf = sig.sample_rate() / label_rate;
  if (std::abs(spf - std::round(spf)) > 1e-9) throw ArgumentError("sample rate must be a multiple of the label rate");
  const auto samples_per_frame = static_cast<std::size_t>(std::llround(spf));
  const std::size_t total = sig.frames() / samples_per_frame;
  const auto win = static_cast<std::size_t>(std::llround(win_s * label_rate));
  const auto hop = static_cast<std::size_t>(std::llround(hop_s * label_rate));
  if (win == 0 || hop == 0) throw ArgumentError("window and hop must span at least one frame");

  std::vector<std::size_t> starts;
  if (total <= win) {
    starts.push_back(0);
  } else {
    for (std::size_t s = 0; s + win <= total; s += hop) starts.push_back(s);
    if (starts.back() + win < total) starts.push_back(total - win);
  }

  std::size_t M = 0;
  Tensor acc;
  std::vector<double> cover(total, 0.0);
  for (std::size_t s : starts) {
    const std::size_t n = std::min(win, total - s);
    MultichannelSignal piece =
        total <= win ? sig
                     : slice_segment(sig, static_cast<double>(s * samples_per_frame) / sig.sample_rate(),
                                     static_cast<double>(n * samples_per_frame) / sig.sample_rate());
    Tensor post = fit_rows(model(piece), n);
    if (M == 0) {
      M = post.dim(1);
      acc = Tensor(Shape{total, M}, 0.0);
    }
    for (std::size_t t = 0; t < n; ++t) {
      cover[s + t] += 1.0;
      for (std::size_t m = 0; m < M; ++m) acc.at(s + t, m) += post.at(t, m);
    }
  }
  for (std::size_t t = 0; t < total; ++t)
    for (std::size_t m = 0; m < M; ++m) acc.at(t, m) /= cover[t];
  FrameLabels fl;
  fl.label_rate = label_rate;
  fl.labels = argmax_rows(acc);
  fl.posteriors = std::move(acc);
  return fl;
}

// ---------------------------------------------------------------------------
// Metrics.

struct VadMetrics {
  double fa = 0.0, miss = 0.0, ser = 0.0;  // percentages
};

struct OsdMetrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0;  // percentages
  bool degenerate = false;  // no positive predictions or no positive references
};

inline void require_comparable(const FrameLabels &ref, const FrameLabels &hyp) {
  if (ref.size() != hyp.size()) throw ArgumentError("reference and hypothesis lengths differ");
  if (ref.label_rate != hyp.label_rate) throw ArgumentError("reference and hypothesis rates differ");
}

/// False alarm and miss rates both normalized by total reference speech.
inline VadMetrics vad_metrics(const FrameLabels &ref, const FrameLabels &hyp) {
  require_comparable(ref, hyp);
  std::size_t speech = 0, fa = 0, miss = 0;
  for (std::size_t t = 0; t < ref.size(); ++t) {
    const bool r = ref.labels[t] >= 1, h = hyp.labels[t] >= 1;
    speech += r;
    fa += !r && h;
    miss += r && !h;
  }
  if (speech == 0) throw ArgumentError("VAD metrics undefined without reference speech");
  VadMetrics m;
  m.fa = 100.0 * static_cast<double>(fa) / static_cast<double>(speech);
  m.miss = 100.0 * static_cast<double>(miss) / static_cast<double>(speech);
  m.ser = m.fa + m.miss;
  return m;
}

inline OsdMetrics osd_metrics(const FrameLabels &ref, const FrameLabels &hyp) {
  require_comparable(ref, hyp);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t t = 0; t < ref.size(); ++t) {
    const bool r = ref.labels[t] == 2, h = hyp.labels[t] == 2;
    tp += r && h;
    fp += !r && h;
    fn += r && !h;
  }
  OsdMetrics m;
  m.degenerate = tp + fp == 0 || tp + fn == 0;
  m.precision = tp + fp ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

inline double frame_accuracy(const std::vector<int> &ref, const std::vector<int> &hyp) {
  if (ref.size() != hyp.size() || ref.empty()) throw ArgumentError("frame_accuracy: length mismatch or empty");
  std::size_t ok = 0;
  for (std::size_t t = 0; t < ref.size(); ++t) ok += ref[t] == hyp[t];
  return static_cast<double>(ok) / static_cast<double>(ref.size());
}

}  // namespace mcvad
