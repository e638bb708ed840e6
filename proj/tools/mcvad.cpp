// tools/mcvad.cpp

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

// Command-line front door: simulate, features, beampattern, srp, train,
// infer, score, maskeval. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcvad/mcvad.hpp"

namespace fs = std::filesystem;
using namespace mcvad;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

void add_common(CLI::App *sub, Common &c) {
  sub->add_option("--config", c.config, "JSON configuration file");
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--out", c.out, "Output directory");
}

fs::path out_dir(const Common &c) {
  fs::path p(c.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create output directory " + c.out);
  return p;
}

void write_text(const fs::path &p, const std::string &s) { io_detail::spit(p.string(), s); }

std::string stem(const std::string &path) { return fs::path(path).stem().string(); }

json metrics_json(const FrameLabels &ref, const FrameLabels &hyp) {
  json j;
  j["frames"] = ref.size();
  const OsdMetrics o = osd_metrics(ref, hyp);
  j["osd"] = {{"precision", std::stod(fmt_num(o.precision))},
              {"recall", std::stod(fmt_num(o.recall))},
              {"f1", std::stod(fmt_num(o.f1))},
              {"degenerate", o.degenerate}};
  bool speech = false;
  for (int v : ref.labels) speech |= v >= 1;
  if (speech) {
    const VadMetrics v = vad_metrics(ref, hyp);
    j["vad"] = {{"fa", std::stod(fmt_num(v.fa))}, {"miss", std::stod(fmt_num(v.miss))}, {"ser", std::stod(fmt_num(v.ser))}};
  } else {
    j["vad"] = nullptr;
  }
  return j;
}

double segments_end(const SegmentSet &s) {
  double e = 0.0;
  for (const Segment &x : s) e = std::max(e, x.onset + x.duration);
  return e;
}

struct LoadedModel {
  ModelSpec spec;
  ParamSet params;
};

LoadedModel load_model(const std::string &path) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.meta.contains("model")) throw FormatError("checkpoint has no model description");
  return {model_from_json(ck.meta.at("model")), std::move(ck.params)};
}

std::vector<int> parse_ids(const std::string &s) {
  std::vector<int> ids;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      ids.push_back(v);
    } catch (const std::exception &) {
      throw ArgumentError("bad channel list '" + s + "'");
    }
  }
  if (ids.empty()) throw ArgumentError("empty channel list");
  return ids;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Common &c) {
  SceneSpec spec = c.config.empty() ? toy_scene_spec(ToyConfig{}, c.seed.value_or(0), 0)
                                    : scene_from_json(load_json(c.config));
  if (c.seed) spec.seed = *c.seed;
  const Scene sc = synth_scene(spec);
  const fs::path dir = out_dir(c);
  write_wav(sc.mix, (dir / (spec.file_id + ".wav")).string(), WavEncoding::Float32);
  write_rttm(sc.truth, (dir / (spec.file_id + ".rttm")).string());
  write_text(dir / (spec.file_id + ".json"), scene_to_json(spec).dump(2) + "\n");
  std::cout << (dir / (spec.file_id + ".wav")).string() << "\n";
  return 0;
}

int cmd_features(const Common &c, const std::string &variant, const std::string &wav, const std::string &ckpt) {
  const MultichannelSignal sig = read_wav(wav);
  ModelSpec spec;
  ParamSet params;
  if (!ckpt.empty()) {
    LoadedModel m = load_model(ckpt);
    spec = m.spec;
    params = std::move(m.params);
    if (!variant.empty() && parse_frontend(variant) != spec.frontend.kind)
      throw ArgumentError("checkpoint front end is " + std::string(frontend_name(spec.frontend.kind)));
  } else {
    if (!c.config.empty()) spec.frontend = frontend_from_json(load_json(c.config));
    if (!variant.empty()) spec.frontend.kind = parse_frontend(variant);
    params = frontend_init(spec.frontend, sig.sample_rate(), c.seed.value_or(0));
  }
  const Tensor X = frontend_features(params, spec.frontend, sig);
  const fs::path dir = out_dir(c);
  write_text(dir / "features.csv", matrix_csv(X, numbered("f", X.dim(1))));
  const double hop = spec.frontend.kind == FrontendKind::Analytic
                         ? static_cast<double>(spec.frontend.filter_stride) / sig.sample_rate()
                         : spec.frontend.stft.hop_s;
  write_text(dir / "features.bin", encode_features(X, sig.sample_rate(), hop));
  std::cout << X.dim(0) << " frames x " << X.dim(1) << " features\n";
  return 0;
}

int cmd_beampattern(const Common &c, const std::string &wav, const std::string &ckpt, const std::vector<double> &freqs) {
  const LoadedModel m = load_model(ckpt);
  const MultichannelSignal sig = read_wav(wav);
  FrontendTrace trace;
  frontend_features(m.params, m.spec.frontend, sig, &trace);
  if (trace.w_mag.size() == 0) throw ArgumentError("front end has no combination weights");
  CombinationWeights wm{detail::tc_to_ct(trace.w_mag), WeightKind::Magnitude};
  CombinationWeights wp{trace.w_phi.size() ? detail::tc_to_ct(trace.w_phi) : Tensor(wm.w.shape, 0.0), WeightKind::Phase};
  const Eigen::MatrixXcd w = complex_combination_weights(wm, wp);
  const ArrayGeometry geom = m.spec.frontend.geometry.subset(sig.channel_ids());
  const std::vector<double> thetas = degree_grid(360);
  std::string csv = "freq_hz";
  for (std::size_t i = 0; i < thetas.size(); ++i) csv += ",theta_" + std::to_string(i);
  csv += "\n";
  for (double f : freqs) {
    const TimeAveragedBeampattern bp = time_avg_beampattern(w, geom, f, thetas);
    csv += fmt_num(f);
    for (double v : bp.normalized) csv += "," + fmt_num(v);
    csv += "\n";
  }
  write_text(out_dir(c) / "beampattern.csv", csv);
  return 0;
}

int cmd_srp(const Common &c, const std::string &wav, double f_min, double f_max) {
  const MultichannelSignal sig = read_wav(wav);
  const ArrayGeometry geom = c.config.empty() ? ArrayGeometry::uca(sig.channels(), 0.1)
                                              : geometry_from_json(load_json(c.config));
  const auto cand = circle_candidates(360, 2.0);
  const SrpMap map = srp_phat(stft(sig), geom, cand, f_min, f_max);
  std::string csv = "theta_deg,energy\n";
  for (std::size_t i = 0; i < map.energy.size(); ++i) csv += std::to_string(i) + "," + fmt_num(map.energy[i]) + "\n";
  write_text(out_dir(c) / "srp.csv", csv);
  std::cout << "argmax_deg " << map.argmax << "\n";
  return 0;
}

std::vector<LabeledSegment> load_pairs(const json &pairs, double seg_s) {
  std::vector<LabeledSegment> out;
  for (const json &p : pairs) {
    cfg_detail::check_keys(p, {"wav", "rttm"}, "data.pairs");
    const MultichannelSignal sig = read_wav(p.at("wav").get<std::string>());
    const SegmentSet ref = parse_rttm(p.at("rttm").get<std::string>());
    const FrameLabels all = labels_from_segments(ref, sig.duration_s());
    const auto per = static_cast<std::size_t>(std::llround(seg_s * kLabelRate));
    for (std::size_t s = 0; s + per <= all.size(); s += per) {
      LabeledSegment ls{slice_segment(sig, s / kLabelRate, seg_s), {}, {}};
      ls.labels.labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(s),
                              all.labels.begin() + static_cast<std::ptrdiff_t>(s + per));
      out.push_back(std::move(ls));
    }
  }
  return out;
}

int cmd_train(const Common &c) {
  if (c.config.empty()) throw ArgumentError("train requires --config");
  const json j = load_json(c.config);
  cfg_detail::check_keys(j, {"model", "train", "invariant", "data"}, "train config");
  ModelSpec spec = model_from_json(j.value("model", json::object()));
  TrainConfig tcfg = train_from_json(j.value("train", json::object()));
  if (c.seed) tcfg.seed = *c.seed;
  std::optional<InvariantConfig> icfg;
  if (j.contains("invariant") && !j.at("invariant").is_null()) icfg = invariant_from_json(j.at("invariant"));

  const json data = j.value("data", json::object());
  cfg_detail::check_keys(data, {"toy", "n_train", "n_valid", "pairs", "valid_pairs"}, "data");
  std::vector<LabeledSegment> train_set, valid_set;
  if (data.contains("pairs")) {
    train_set = load_pairs(data.at("pairs"), tcfg.segment_s);
    valid_set = load_pairs(data.value("valid_pairs", data.at("pairs")), tcfg.segment_s);
  } else {
    ToyConfig toy = toy_from_json(data.value("toy", json::object()));
    toy.segment_s = tcfg.segment_s;
    const std::size_t n_train = data.value("n_train", std::size_t{64});
    const std::size_t n_valid = data.value("n_valid", std::size_t{16});
    train_set = toy_dataset(toy, n_train, derive_seed({tcfg.seed, 1}));
    valid_set = toy_dataset(toy, n_valid, derive_seed({tcfg.seed, 2}));
  }
  if (spec.frontend.kind == FrontendKind::Mvdr || spec.frontend.geometry.mics() != train_set.at(0).signal.channels())
    spec.frontend.geometry = spec.frontend.geometry.mics() == train_set.at(0).signal.channels()
                                 ? spec.frontend.geometry
                                 : ArrayGeometry::uca(train_set.at(0).signal.channels(), 0.1);

  const fs::path dir = out_dir(c);
  std::ofstream log(dir / "train_log.ndjson", std::ios::binary);
  if (!log) throw IoError("cannot write training log");
  TrainResult res = train(spec, train_set, valid_set, tcfg, icfg, &log);

  Checkpoint ck;
  ck.meta = {{"model", model_to_json(spec)},
             {"train", train_to_json(tcfg)},
             {"best_epoch", res.best_epoch},
             {"best_val_f1", std::stod(fmt_num(res.best_f1))}};
  if (icfg) ck.meta["invariant"] = invariant_to_json(*icfg);
  ck.params = res.best;
  save_checkpoint(ck, (dir / "model.ckpt").string());
  json summary = {{"epochs_run", res.epochs_run},
                  {"best_epoch", res.best_epoch},
                  {"best_val_f1", std::stod(fmt_num(res.best_f1))},
                  {"first_ce", std::stod(fmt_num(res.steps.front().ce))},
                  {"last_ce", std::stod(fmt_num(res.steps.back().ce))}};
  write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_infer(const Common &c, const std::string &ckpt, const std::string &wav, double win, double hop) {
  const LoadedModel m = load_model(ckpt);
  const MultichannelSignal sig = read_wav(wav);
  const FrameLabels fl = sliding_infer(posterior_fn(m.params, m.spec), sig, win, hop);
  const fs::path dir = out_dir(c);
  const fs::path path = dir / (stem(wav) + ".rttm");
  write_rttm(segments_from_labels(fl, stem(wav)), path.string());
  std::cout << path.string() << "\n";
  return 0;
}

std::string metrics_table(const json &m) {
  char buf[256];
  std::string s;
  std::snprintf(buf, sizeof buf, "%-10s %10s\n", "metric", "value");
  s += buf;
  auto row = [&](const char *name, const json &v) {
    if (v.is_null()) return;
    std::snprintf(buf, sizeof buf, "%-10s %10.3f\n", name, v.get<double>());
    s += buf;
  };
  if (!m.at("vad").is_null()) {
    row("FA", m["vad"]["fa"]);
    row("Miss", m["vad"]["miss"]);
    row("SER", m["vad"]["ser"]);
  }
  row("P", m["osd"]["precision"]);
  row("R", m["osd"]["recall"]);
  row("F1", m["osd"]["f1"]);
  return s;
}

int cmd_score(const Common &c, const std::string &ref_path, const std::string &hyp_path) {
  const SegmentSet ref = parse_rttm(ref_path);
  const SegmentSet hyp = parse_rttm(hyp_path);
  const double dur = std::max(segments_end(ref), segments_end(hyp));
  const json m = metrics_json(labels_from_segments(ref, dur), labels_from_segments(hyp, dur));
  if (c.out != ".") {
    const fs::path dir = out_dir(c);
    write_text(dir / "metrics.json", m.dump(2) + "\n");
    write_text(dir / "metrics.txt", metrics_table(m));
  }
  std::cout << m.dump(2) << "\n";
  return 0;
}

int cmd_maskeval(const Common &c, const std::string &ckpt, const std::string &wav, const std::string &rttm,
                 const std::vector<std::string> &keeps, double win, double hop) {
  const LoadedModel m = load_model(ckpt);
  const MultichannelSignal sig = read_wav(wav);
  const SegmentSet ref_segs = parse_rttm(rttm);
  std::vector<std::vector<int>> sets{sig.channel_ids()};
  for (const std::string &k : keeps) sets.push_back(parse_ids(k));

  json rows = json::array();
  std::string table = "C   keep                 F1        SER\n";
  for (const auto &ids : sets) {
    const MultichannelSignal sub = mask_channels(sig, std::set<int>(ids.begin(), ids.end()));
    ModelSpec spec = m.spec;
    if (spec.frontend.kind == FrontendKind::Mvdr) spec.frontend.geometry = m.spec.frontend.geometry;
    const FrameLabels hyp = sliding_infer(posterior_fn(m.params, spec), sub, win, hop);
    FrameLabels ref = labels_from_segments(ref_segs, static_cast<double>(hyp.size()) / kLabelRate);
    const json mj = metrics_json(ref, hyp);
    std::string keep_s;
    for (int id : sub.channel_ids()) keep_s += (keep_s.empty() ? "" : ",") + std::to_string(id);
    rows.push_back({{"C", sub.channels()}, {"keep", keep_s}, {"metrics", mj}});
    char buf[160];
    std::snprintf(buf, sizeof buf, "C=%-2zu %-18s %8.3f %10s\n", sub.channels(), keep_s.c_str(),
                  mj["osd"]["f1"].get<double>(),
                  mj["vad"].is_null() ? "n/a" : fmt_num(mj["vad"]["ser"].get<double>()).c_str());
    table += buf;
  }
  const fs::path dir = out_dir(c);
  write_text(dir / "maskeval.json", json{{"rows", rows}}.dump(2) + "\n");
  write_text(dir / "maskeval.txt", table);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Multichannel voice activity and overlapped speech detection toolkit"};
  app.require_subcommand(1);

  Common sim_c, feat_c, bp_c, srp_c, train_c, infer_c, score_c, mask_c;
  std::string variant, wav, ckpt, ref, hyp, rttm;
  std::vector<double> freqs{500.0, 1000.0, 1500.0, 2000.0};
  std::vector<std::string> keeps;
  double f_min = kSrpMinHz, f_max = -1.0, win = 2.0, hop = 0.5;

  auto *sim = app.add_subcommand("simulate", "Render a scene to WAV and ground-truth RTTM");
  add_common(sim, sim_c);

  auto *feat = app.add_subcommand("features", "Extract front-end features from a WAV file");
  add_common(feat, feat_c);
  feat->add_option("--variant", variant, "stft|analytic|sacc|ecsacc|icsacc|mvdr");
  feat->add_option("--wav", wav, "Input WAV")->required();
  feat->add_option("--checkpoint", ckpt, "Trained checkpoint");

  auto *bp = app.add_subcommand("beampattern", "Time-averaged beampattern of learned combination weights");
  add_common(bp, bp_c);
  bp->add_option("--wav", wav, "Input WAV")->required();
  bp->add_option("--checkpoint", ckpt, "Trained checkpoint")->required();
  bp->add_option("--freqs", freqs, "Frequencies in Hz")->delimiter(',');

  auto *srp = app.add_subcommand("srp", "SRP-PHAT energy map over a circle of candidates");
  add_common(srp, srp_c);
  srp->add_option("--wav", wav, "Input WAV")->required();
  srp->add_option("--fmin", f_min, "Lowest frequency (Hz)");
  srp->add_option("--fmax", f_max, "Highest frequency (Hz); default is the alias-free limit");

  auto *tr = app.add_subcommand("train", "Train a front end and classifier");
  add_common(tr, train_c);

  auto *inf = app.add_subcommand("infer", "Sliding-window inference to RTTM");
  add_common(inf, infer_c);
  inf->add_option("--checkpoint", ckpt, "Trained checkpoint")->required();
  inf->add_option("--wav", wav, "Input WAV")->required();
  inf->add_option("--win", win, "Window length (s)");
  inf->add_option("--hop", hop, "Window hop (s)");

  auto *sc = app.add_subcommand("score", "Score a hypothesis RTTM against a reference");
  add_common(sc, score_c);
  sc->add_option("ref", ref, "Reference RTTM")->required();
  sc->add_option("hyp", hyp, "Hypothesis RTTM")->required();

  auto *me = app.add_subcommand("maskeval", "Evaluate with subsets of active channels");
  add_common(me, mask_c);
  me->add_option("--checkpoint", ckpt, "Trained checkpoint")->required();
  me->add_option("--wav", wav, "Input WAV")->required();
  me->add_option("--rttm", rttm, "Reference RTTM")->required();
  me->add_option("--keep", keeps, "Comma-separated channel ids to keep (repeatable)");
  me->add_option("--win", win, "Window length (s)");
  me->add_option("--hop", hop, "Window hop (s)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*sim) return cmd_simulate(sim_c);
    if (*feat) return cmd_features(feat_c, variant, wav, ckpt);
    if (*bp) return cmd_beampattern(bp_c, wav, ckpt, freqs);
    if (*srp) return cmd_srp(srp_c, wav, f_min, f_max);
    if (*tr) return cmd_train(train_c);
    if (*inf) return cmd_infer(infer_c, ckpt, wav, win, hop);
    if (*sc) return cmd_score(score_c, ref, hyp);
    if (*me) return cmd_maskeval(mask_c, ckpt, wav, rttm, keeps, win, hop);
  } catch (const NumericError &e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
