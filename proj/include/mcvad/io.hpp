// mcvad/io.hpp

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

// File formats: parameter checkpoints, spectral dumps, CSV matrices, and
// strict JSON configuration documents.
//
// Checkpoint layout (little-endian):
//   "MCVADCK1" | u64 meta_len | meta JSON | u64 n_tensors |
//   n x (u32 name_len | name | u32 rank | u64 dims[rank] | u64 offset) |
//   float64 payload (offsets counted in values from the payload start)
//
// Spectral dump layout: int64 header[8] = {magic, version, C, T, K, rate,
// hop_us, flags} followed by float64 values; flags bit 0 marks interleaved
// complex values.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcvad/arraysim.hpp"
#include "mcvad/autograd.hpp"
#include "mcvad/beamform.hpp"
#include "mcvad/errors.hpp"
#include "mcvad/frontend.hpp"
#include "mcvad/spectral.hpp"
#include "mcvad/tcn.hpp"
#include "mcvad/trainer.hpp"

namespace mcvad {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using json = nlohmann::json;

namespace io_detail {

template <typename T>
void put(std::string &out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

struct Reader {
  const std::string &buf;
  std::size_t pos = 0;
  template <typename T>
  T get() {
    if (pos + sizeof(T) > buf.size()) throw FormatError("truncated file");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    if (pos + n > buf.size()) throw FormatError("truncated file");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline std::string slurp(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void spit(const std::string &path, const std::string &data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw IoError("write failed for " + path);
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Checkpoints.

inline constexpr char kCheckpointMagic[9] = "MCVADCK1";

struct Checkpoint {
  json meta = json::object();
  ParamSet params;
};

inline std::string encode_checkpoint(const Checkpoint &ck) {
  using io_detail::put;
  std::string out(kCheckpointMagic, 8);
  const std::string meta = ck.meta.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint64_t>(out, ck.params.size());
  std::uint64_t offset = 0;
  for (const auto &[name, t] : ck.params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) put<std::uint64_t>(out, d);
    put<std::uint64_t>(out, offset);
    offset += t.size();
  }
  for (const auto &[name, t] : ck.params)
    out.append(reinterpret_cast<const char *>(t.data.data()), t.size() * sizeof(double));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string &buf) {
  io_detail::Reader r{buf};
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) throw FormatError("not a checkpoint (bad magic)");
  Checkpoint ck;
  const auto mlen = r.get<std::uint64_t>();
  try {
    ck.meta = json::parse(r.bytes(mlen));
  } catch (const json::exception &e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  const auto n = r.get<std::uint64_t>();
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> toc;
  for (std::uint64_t i = 0; i < n; ++i) {
    Entry e;
    e.name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint tensor rank too large");
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint64_t>());
    e.offset = r.get<std::uint64_t>();
    toc.push_back(std::move(e));
  }
  const std::size_t base = r.pos;
  const std::size_t avail = (buf.size() - base) / sizeof(double);
  for (const Entry &e : toc) {
    const std::size_t sz = shape_size(e.shape);
    if (e.offset + sz > avail) throw FormatError("checkpoint tensor '" + e.name + "' exceeds the payload");
    Tensor t(e.shape);
    std::memcpy(t.data.data(), buf.data() + base + e.offset * sizeof(double), sz * sizeof(double));
    if (!t.all_finite()) throw FormatError("checkpoint tensor '" + e.name + "' is not finite");
    ck.params[e.name] = std::move(t);
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint &ck, const std::string &path) {
  io_detail::spit(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string &path) { return decode_checkpoint(io_detail::slurp(path)); }

// ---------------------------------------------------------------------------
// Spectral dumps and CSV.

inline constexpr std::int64_t kDumpMagic = 0x504D554441564D43;  // "MCVADUMP"
inline constexpr std::int64_t kDumpVersion = 1;

struct DumpHeader {
  std::int64_t C = 0, T = 0, K = 0, rate = 0, hop_us = 0, flags = 0;
};

inline std::string encode_dump(const DumpHeader &h, const std::vector<double> &values) {
  const std::int64_t n = h.C * h.T * h.K * ((h.flags & 1) ? 2 : 1);
  if (n != static_cast<std::int64_t>(values.size())) throw ArgumentError("dump header does not match value count");
  std::string out;
  for (std::int64_t v : {kDumpMagic, kDumpVersion, h.C, h.T, h.K, h.rate, h.hop_us, h.flags})
    io_detail::put<std::int64_t>(out, v);
  out.append(reinterpret_cast<const char *>(values.data()), values.size() * sizeof(double));
  return out;
}

inline std::pair<DumpHeader, std::vector<double>> decode_dump(const std::string &buf) {
  io_detail::Reader r{buf};
  if (r.get<std::int64_t>() != kDumpMagic) throw FormatError("not a spectral dump (bad magic)");
  if (r.get<std::int64_t>() != kDumpVersion) throw UnsupportedCodecError("unsupported dump version");
  DumpHeader h;
  h.C = r.get<std::int64_t>();
  h.T = r.get<std::int64_t>();
  h.K = r.get<std::int64_t>();
  h.rate = r.get<std::int64_t>();
  h.hop_us = r.get<std::int64_t>();
  h.flags = r.get<std::int64_t>();
  if (h.C < 0 || h.T < 0 || h.K < 0) throw FormatError("negative dump dimensions");
  const auto n = static_cast<std::size_t>(h.C * h.T * h.K * ((h.flags & 1) ? 2 : 1));
  if (buf.size() - r.pos != n * sizeof(double)) throw FormatError("dump payload size mismatch");
  std::vector<double> v(n);
  std::memcpy(v.data(), buf.data() + r.pos, n * sizeof(double));
  return {h, std::move(v)};
}

/// Complex spectrogram dump, channel-major with interleaved re/im.
inline std::string encode_spectrogram(const ComplexSpectrogram &Y) {
  std::vector<double> v;
  v.reserve(Y.bins.size() * 2);
  for (const cplx &z : Y.bins) {
    v.push_back(z.real());
    v.push_back(z.imag());
  }
  return encode_dump({std::int64_t(Y.C), std::int64_t(Y.T), std::int64_t(Y.K), Y.rate,
                      std::llround(Y.hop_s * 1e6), 1},
                     v);
}

/// Real feature matrix [T, F] dumped with C = 1.
inline std::string encode_features(const Tensor &X, int rate, double hop_s) {
  if (X.rank() != 2) throw ArgumentError("feature dump expects a T x F matrix");
  return encode_dump({1, std::int64_t(X.dim(0)), std::int64_t(X.dim(1)), rate, std::llround(hop_s * 1e6), 0}, X.data);
}

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// Matrix [R, M] as CSV with a header row.
inline std::string matrix_csv(const Tensor &X, const std::vector<std::string> &header) {
  if (X.rank() != 2 || header.size() != X.dim(1)) throw ArgumentError("CSV header does not match matrix width");
  std::string out;
  for (std::size_t m = 0; m < header.size(); ++m) out += (m ? "," : "") + header[m];
  out += '\n';
  for (std::size_t r = 0; r < X.dim(0); ++r) {
    for (std::size_t m = 0; m < X.dim(1); ++m) out += (m ? "," : "") + fmt_num(X.at(r, m));
    out += '\n';
  }
  return out;
}

inline std::vector<std::string> numbered(const std::string &prefix, std::size_t n) {
  std::vector<std::string> h;
  for (std::size_t i = 0; i < n; ++i) h.push_back(prefix + std::to_string(i));
  return h;
}

// ---------------------------------------------------------------------------
// Strict JSON configuration.

namespace cfg_detail {

inline void check_keys(const json &j, std::initializer_list<const char *> allowed, const std::string &ctx) {
  if (!j.is_object()) throw ArgumentError(ctx + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ArgumentError(ctx + ": unknown key '" + it.key() + "'");
}

template <typename T>
void read(const json &j, const char *key, T &dst, const std::string &ctx) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception &) {
    throw ArgumentError(ctx + ": bad value for '" + key + "'");
  }
}

}  // namespace cfg_detail

inline json geometry_to_json(const ArrayGeometry &g) {
  if (g.kind == ArrayGeometry::Kind::Uca)
    return {{"kind", "uca"}, {"mics", g.mics()}, {"radius", g.radius}, {"speed", g.speed}, {"psi0", g.psi.at(0)}};
  json pos = json::array();
  for (const Point3 &p : g.positions) pos.push_back({p[0], p[1], p[2]});
  return {{"kind", "positions"}, {"positions", pos}, {"speed", g.speed}};
}

inline ArrayGeometry geometry_from_json(const json &j) {
  const std::string ctx = "geometry";
  cfg_detail::check_keys(j, {"kind", "mics", "radius", "speed", "psi0", "positions"}, ctx);
  std::string kind = "uca";
  double speed = 343.0;
  cfg_detail::read(j, "kind", kind, ctx);
  cfg_detail::read(j, "speed", speed, ctx);
  if (kind == "uca") {
    std::size_t mics = 8;
    double radius = 0.1, psi0 = 0.0;
    cfg_detail::read(j, "mics", mics, ctx);
    cfg_detail::read(j, "radius", radius, ctx);
    cfg_detail::read(j, "psi0", psi0, ctx);
    return ArrayGeometry::uca(mics, radius, speed, psi0);
  }
  if (kind == "positions") {
    std::vector<Point3> pos;
    cfg_detail::read(j, "positions", pos, ctx);
    if (pos.empty()) throw ArgumentError("geometry: positions must be non-empty");
    return ArrayGeometry::from_positions(std::move(pos), speed);
  }
  throw ArgumentError("geometry: unknown kind '" + kind + "'");
}

inline json frontend_to_json(const FrontendConfig &c) {
  return {{"kind", frontend_name(c.kind)},
          {"n_mels", c.n_mels},
          {"hidden", c.hidden},
          {"n_filters", c.n_filters},
          {"filter_len", c.filter_len},
          {"filter_stride", c.filter_stride},
          {"joint_layout", c.joint == JointLayout::Channel ? "channel" : "feature"},
          {"real_imag", c.real_imag},
          {"win_s", c.stft.win_len_s},
          {"hop_s", c.stft.hop_s},
          {"fft_size", c.stft.fft_size},
          {"geometry", geometry_to_json(c.geometry)}};
}

inline FrontendConfig frontend_from_json(const json &j) {
  const std::string ctx = "frontend";
  cfg_detail::check_keys(j,
                         {"kind", "n_mels", "hidden", "n_filters", "filter_len", "filter_stride", "joint_layout",
                          "real_imag", "win_s", "hop_s", "fft_size", "geometry"},
                         ctx);
  FrontendConfig c;
  std::string kind = frontend_name(c.kind), layout = "channel";
  cfg_detail::read(j, "kind", kind, ctx);
  c.kind = parse_frontend(kind);
  cfg_detail::read(j, "n_mels", c.n_mels, ctx);
  cfg_detail::read(j, "hidden", c.hidden, ctx);
  cfg_detail::read(j, "n_filters", c.n_filters, ctx);
  cfg_detail::read(j, "filter_len", c.filter_len, ctx);
  cfg_detail::read(j, "filter_stride", c.filter_stride, ctx);
  cfg_detail::read(j, "joint_layout", layout, ctx);
  if (layout != "channel" && layout != "feature") throw ArgumentError("frontend: joint_layout must be channel or feature");
  c.joint = layout == "channel" ? JointLayout::Channel : JointLayout::Feature;
  cfg_detail::read(j, "real_imag", c.real_imag, ctx);
  cfg_detail::read(j, "win_s", c.stft.win_len_s, ctx);
  cfg_detail::read(j, "hop_s", c.stft.hop_s, ctx);
  cfg_detail::read(j, "fft_size", c.stft.fft_size, ctx);
  if (j.contains("geometry")) c.geometry = geometry_from_json(j.at("geometry"));
  return c;
}

inline json tcn_to_json(const TcnConfig &c) {
  return {{"bottleneck", c.bottleneck}, {"hidden", c.hidden},   {"layers_per_block", c.layers_per_block},
          {"blocks", c.blocks},         {"kernel", c.kernel},   {"n_classes", c.n_classes},
          {"input_dim", c.input_dim}};
}

inline TcnConfig tcn_from_json(const json &j) {
  const std::string ctx = "tcn";
  cfg_detail::check_keys(j, {"bottleneck", "hidden", "layers_per_block", "blocks", "kernel", "n_classes", "input_dim"},
                         ctx);
  TcnConfig c;
  cfg_detail::read(j, "bottleneck", c.bottleneck, ctx);
  cfg_detail::read(j, "hidden", c.hidden, ctx);
  cfg_detail::read(j, "layers_per_block", c.layers_per_block, ctx);
  cfg_detail::read(j, "blocks", c.blocks, ctx);
  cfg_detail::read(j, "kernel", c.kernel, ctx);
  cfg_detail::read(j, "n_classes", c.n_classes, ctx);
  cfg_detail::read(j, "input_dim", c.input_dim, ctx);
  c.validate();
  return c;
}

inline json model_to_json(const ModelSpec &m) {
  return {{"frontend", frontend_to_json(m.frontend)}, {"tcn", tcn_to_json(m.tcn)}};
}

/// The TCN input width defaults to the front-end feature width.
inline ModelSpec model_from_json(const json &j) {
  cfg_detail::check_keys(j, {"frontend", "tcn"}, "model");
  ModelSpec m;
  if (j.contains("frontend")) m.frontend = frontend_from_json(j.at("frontend"));
  m.tcn.input_dim = feature_dim(m.frontend);
  if (j.contains("tcn")) {
    json t = j.at("tcn");
    if (t.is_object() && !t.contains("input_dim")) t["input_dim"] = feature_dim(m.frontend);
    m.tcn = tcn_from_json(t);
  }
  return m;
}

inline TrainConfig train_from_json(const json &j) {
  const std::string ctx = "train";
  cfg_detail::check_keys(j, {"batch_size", "steps_per_epoch", "segment_s", "lr", "patience", "max_epochs", "seed"}, ctx);
  TrainConfig c;
  cfg_detail::read(j, "batch_size", c.batch_size, ctx);
  cfg_detail::read(j, "steps_per_epoch", c.steps_per_epoch, ctx);
  cfg_detail::read(j, "segment_s", c.segment_s, ctx);
  cfg_detail::read(j, "lr", c.lr, ctx);
  cfg_detail::read(j, "patience", c.patience, ctx);
  cfg_detail::read(j, "max_epochs", c.max_epochs, ctx);
  cfg_detail::read(j, "seed", c.seed, ctx);
  c.validate();
  return c;
}

inline json train_to_json(const TrainConfig &c) {
  return {{"batch_size", c.batch_size}, {"steps_per_epoch", c.steps_per_epoch},
          {"segment_s", c.segment_s},   {"lr", c.lr},
          {"patience", c.patience},     {"max_epochs", c.max_epochs},
          {"seed", c.seed}};
}

inline InvariantConfig invariant_from_json(const json &j) {
  const std::string ctx = "invariant";
  cfg_detail::check_keys(j, {"P", "lambda", "min_keep", "rng_seed", "cosine"}, ctx);
  InvariantConfig c;
  cfg_detail::read(j, "P", c.P, ctx);
  cfg_detail::read(j, "lambda", c.lambda, ctx);
  cfg_detail::read(j, "min_keep", c.min_keep, ctx);
  cfg_detail::read(j, "rng_seed", c.rng_seed, ctx);
  cfg_detail::read(j, "cosine", c.cosine, ctx);
  check_lambda(c.lambda);
  if (c.P < 1 || c.min_keep < 2) throw ArgumentError("invariant: P >= 1 and min_keep >= 2 required");
  return c;
}

inline json invariant_to_json(const InvariantConfig &c) {
  return {{"P", c.P}, {"lambda", c.lambda}, {"min_keep", c.min_keep}, {"rng_seed", c.rng_seed}, {"cosine", c.cosine}};
}

inline const char *noise_name(NoiseKind k) {
  return k == NoiseKind::None ? "none" : k == NoiseKind::White ? "white" : "diffuse";
}

inline NoiseKind parse_noise(const std::string &s) {
  if (s == "none") return NoiseKind::None;
  if (s == "white") return NoiseKind::White;
  if (s == "diffuse") return NoiseKind::Diffuse;
  throw ArgumentError("unknown noise kind '" + s + "'");
}

inline ToyConfig toy_from_json(const json &j) {
  const std::string ctx = "toy";
  cfg_detail::check_keys(j, {"geometry", "segment_s", "sample_rate", "noise", "snr_min_db", "snr_max_db"}, ctx);
  ToyConfig c;
  if (j.contains("geometry")) c.geometry = geometry_from_json(j.at("geometry"));
  std::string noise = noise_name(c.noise);
  cfg_detail::read(j, "segment_s", c.segment_s, ctx);
  cfg_detail::read(j, "sample_rate", c.sample_rate, ctx);
  cfg_detail::read(j, "noise", noise, ctx);
  c.noise = parse_noise(noise);
  cfg_detail::read(j, "snr_min_db", c.snr_min_db, ctx);
  cfg_detail::read(j, "snr_max_db", c.snr_max_db, ctx);
  if (!(c.segment_s > 0.0) || c.sample_rate <= 0 || c.snr_min_db > c.snr_max_db)
    throw ArgumentError("toy: invalid segment length, rate or SNR range");
  return c;
}

/// Azimuths are given in degrees in JSON.
inline SceneSpec scene_from_json(const json &j) {
  const std::string ctx = "scene";
  cfg_detail::check_keys(j, {"geometry", "sources", "noise", "snr_db", "duration_s", "sample_rate", "seed", "file_id"},
                         ctx);
  SceneSpec s;
  if (j.contains("geometry")) s.geometry = geometry_from_json(j.at("geometry"));
  std::string noise = noise_name(s.noise);
  cfg_detail::read(j, "noise", noise, ctx);
  s.noise = parse_noise(noise);
  cfg_detail::read(j, "snr_db", s.snr_db, ctx);
  cfg_detail::read(j, "duration_s", s.duration_s, ctx);
  cfg_detail::read(j, "sample_rate", s.sample_rate, ctx);
  cfg_detail::read(j, "seed", s.seed, ctx);
  cfg_detail::read(j, "file_id", s.file_id, ctx);
  if (j.contains("sources")) {
    if (!j.at("sources").is_array()) throw ArgumentError("scene: sources must be an array");
    for (const json &js : j.at("sources")) {
      const std::string sctx = "scene.source";
      cfg_detail::check_keys(js, {"azimuth_deg", "onset", "duration", "signal", "level_db", "resonance_hz", "speaker"},
                             sctx);
      SourceSpec src;
      double az = 0.0;
      std::string sig = "ar2";
      cfg_detail::read(js, "azimuth_deg", az, sctx);
      src.azimuth = az * std::numbers::pi / 180.0;
      cfg_detail::read(js, "onset", src.onset, sctx);
      cfg_detail::read(js, "duration", src.duration, sctx);
      cfg_detail::read(js, "signal", sig, sctx);
      if (sig == "ar2")
        src.kind = SourceKind::Ar2;
      else if (sig == "noise")
        src.kind = SourceKind::ModulatedNoise;
      else
        throw ArgumentError("scene.source: signal must be ar2 or noise");
      cfg_detail::read(js, "level_db", src.level_db, sctx);
      cfg_detail::read(js, "resonance_hz", src.resonance_hz, sctx);
      cfg_detail::read(js, "speaker", src.speaker, sctx);
      s.sources.push_back(std::move(src));
    }
  }
  s.validate();
  return s;
}

inline json scene_to_json(const SceneSpec &s) {
  json src = json::array();
  for (const SourceSpec &x : s.sources)
    src.push_back({{"azimuth_deg", x.azimuth * 180.0 / std::numbers::pi},
                   {"onset", x.onset},
                   {"duration", x.duration},
                   {"signal", x.kind == SourceKind::Ar2 ? "ar2" : "noise"},
                   {"level_db", x.level_db},
                   {"resonance_hz", x.resonance_hz},
                   {"speaker", x.speaker}});
  return {{"geometry", geometry_to_json(s.geometry)},
          {"sources", src},
          {"noise", noise_name(s.noise)},
          {"snr_db", s.snr_db},
          {"duration_s", s.duration_s},
          {"sample_rate", s.sample_rate},
          {"seed", s.seed},
          {"file_id", s.file_id}};
}

inline json load_json(const std::string &path) {
  const std::string text = io_detail::slurp(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error &e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
}

}  // namespace mcvad
