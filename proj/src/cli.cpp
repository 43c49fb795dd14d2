/* Copyright 2026 The roadnoise Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "roadnoise/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "roadnoise/error.hpp"
#include "roadnoise/model_file.hpp"
#include "roadnoise/quant.hpp"
#include "roadnoise/rng.hpp"
#include "roadnoise/runtime.hpp"
#include "roadnoise/synth.hpp"
#include "roadnoise/train.hpp"
#include "roadnoise/wav.hpp"

namespace roadnoise {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, std::size_t line) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgument("config line " + std::to_string(line) + ": expected a boolean, got '" +
                        v + "'");
}

Arch parse_arch(const std::string& s) {
  if (s == "cnn") return Arch::Cnn;
  if (s == "ast") return Arch::Ast;
  throw InvalidArgument("arch must be cnn or ast (got '" + s + "')");
}

struct Options {
  std::uint64_t seed = 0;
  std::string config;

  // synth
  std::string synth_out;
  std::size_t clips_per_class = 300;
  double duration_s = 1.0;
  double speed_min = kMinSpeedKmh;
  double speed_max = kMaxSpeedKmh;
  bool overwrite = false;

  // features
  std::string manifest;
  std::string out_dir;
  FeatureConfig features;

  // train
  std::string arch = "cnn";
  std::size_t epochs = 10;
  std::string out;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  double val_fraction = 0.1;
  std::string report;

  // quantize
  std::string model;
  std::size_t calibration_size = 64;

  // classify / bench
  std::string wav;
  bool stdin_pcm = false;
  std::string events;
  std::size_t votes = 5;
  bool no_timing = false;
  std::size_t repetitions = kMinBenchRepetitions;
};

// --- subcommands ------------------------------------------------------------

int cmd_synth(const Options& o, std::ostream& out) {
  SynthSpec spec;
  spec.clips_per_class = o.clips_per_class;
  spec.duration_s = o.duration_s;
  spec.speed_min_kmh = o.speed_min;
  spec.speed_max_kmh = o.speed_max;
  spec.master_seed = o.seed;
  spec.out_dir = o.synth_out;
  spec.overwrite = o.overwrite;
  const CorpusManifest m = synth_corpus(spec);
  out << "manifest=" << (spec.out_dir / kManifestName).string() << " clips=" << m.entries.size()
      << '\n';
  return 0;
}

int cmd_features(const Options& o, std::ostream& out) {
  o.features.validate();
  const CorpusManifest m = read_manifest(o.manifest);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(o.out_dir, ec);
  if (ec) throw IoError(o.out_dir, "cannot create directory: " + ec.message());
  for (const auto& e : m.entries) {
    const AudioClip clip = read_wav(m.resolve(e).string());
    const FeatureMatrix f = extract_logmel(clip, o.features);
    const fs::path dst = fs::path(o.out_dir) / fs::path(e.path).replace_extension(".csv").filename();
    write_feature_csv(dst.string(), f);
  }
  out << "features=" << o.out_dir << " count=" << m.entries.size() << '\n';
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  TrainConfig cfg;
  cfg.arch = parse_arch(o.arch);
  cfg.learning_rate = o.lr;
  cfg.momentum = o.momentum;
  cfg.batch_size = o.batch_size;
  cfg.epochs = o.epochs;
  cfg.seed = o.seed;
  cfg.val_fraction = o.val_fraction;
  cfg.validate();
  const TrainResult r = train(cfg, read_manifest(o.manifest));
  save_model(o.out, r.model);
  if (!o.report.empty()) {
    std::ofstream rep(o.report);
    if (!rep) throw IoError(o.report, "cannot open for writing");
    write_report_jsonl(rep, r.report);
  } else {
    write_report_jsonl(out, r.report);
  }
  out << "model=" << o.out << " best_epoch=" << r.report.best_epoch << '\n';
  return 0;
}

int cmd_quantize(const Options& o, std::ostream& out) {
  const Model model = load_model(o.model);
  const auto* params = std::get_if<CnnParams>(&model.net);
  if (!params) throw InvalidArgument("quantize needs a float cnn model");
  if (o.calibration_size < kMinCalibrationSize) {
    throw InvalidArgument("calibration-size must be >= " + std::to_string(kMinCalibrationSize));
  }
  CorpusManifest m = read_manifest(o.manifest);
  std::vector<std::size_t> order(m.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(o.seed, 5));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  order.resize(std::min(order.size(), o.calibration_size));
  std::sort(order.begin(), order.end());
  std::vector<Tensor> calib;
  for (std::size_t i : order) {
    const AudioClip clip = read_wav(m.resolve(m.entries[i]).string());
    calib.push_back(model.norm.apply(extract_logmel(clip, FeatureConfig{})));
  }
  Model q;
  q.net = quantize_model(*params, calib);
  q.norm = model.norm;
  save_model(o.out, q);
  out << "model=" << o.out << " bytes=" << memory_footprint(q) << '\n';
  return 0;
}

StreamConfig stream_config(const Options& o) {
  StreamConfig cfg;
  cfg.smoothing_votes = o.votes;
  return cfg;
}

int cmd_classify(const Options& o, std::istream& in, std::ostream& out) {
  if (o.wav.empty() == !o.stdin_pcm) {
    throw InvalidArgument("classify needs exactly one of --wav or --stdin-pcm");
  }
  const auto model = std::make_shared<const Model>(load_model(o.model));
  const StreamConfig cfg = stream_config(o);
  Stream stream(model, cfg);

  std::ofstream file;
  std::ostream* sink = &out;
  if (!o.events.empty() && o.events != "-") {
    file.open(o.events);
    if (!file) throw IoError(o.events, "cannot open for writing");
    sink = &file;
  }
  std::size_t count = 0;
  auto drain = [&] {
    while (auto ev = stream.poll_event()) {
      if (o.no_timing) ev->latency_ms = 0.0;
      write_event_json(*sink, *ev);
      ++count;
    }
  };

  if (!o.wav.empty()) {
    const AudioClip clip = read_wav(o.wav);
    if (clip.sample_rate_hz != cfg.sample_rate_hz) {
      throw UnsupportedRate("expected " + std::to_string(cfg.sample_rate_hz) + " Hz, got " +
                            std::to_string(clip.sample_rate_hz) + " Hz");
    }
    if (clip.samples.size() < cfg.window_len_samples) {
      throw InvalidArgument("clip shorter than one window");
    }
    const std::span<const double> all(clip.samples);
    for (std::size_t pos = 0; pos < all.size(); pos += cfg.window_hop_samples) {
      stream.push_samples(all.subspan(pos, std::min(cfg.window_hop_samples, all.size() - pos)));
      drain();
    }
  } else {
    std::vector<char> bytes(2 * cfg.window_hop_samples);
    std::vector<double> samples;
    bool odd = false;
    char carry = 0;
    while (in) {
      in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      const auto got = static_cast<std::size_t>(in.gcount());
      if (got == 0) break;
      std::vector<char> buf;
      if (odd) buf.push_back(carry);
      buf.insert(buf.end(), bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(got));
      odd = buf.size() % 2 != 0;
      if (odd) carry = buf.back();
      samples.clear();
      for (std::size_t i = 0; i + 1 < buf.size(); i += 2) {
        const auto lo = static_cast<std::uint16_t>(static_cast<unsigned char>(buf[i]));
        const auto hi = static_cast<std::uint16_t>(static_cast<unsigned char>(buf[i + 1]));
        samples.push_back(from_pcm16(static_cast<std::int16_t>(lo | (hi << 8))));
      }
      stream.push_samples(samples);
      drain();
    }
    if (stream.counters().pushed < cfg.window_len_samples) {
      throw InvalidArgument("clip shorter than one window");
    }
  }
  sink->flush();
  if (sink == &file) {
    if (!file) throw IoError(o.events, "write failed");
    out << "events=" << o.events << " count=" << count << '\n';
  }
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out, std::ostream& err) {
  const GradCheckResult r = grad_check_detailed(parse_arch(o.arch), o.seed);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", r.max_rel_err);
  out << "max_rel_err=" << buf << '\n';
  if (r.max_rel_err >= 1e-4) {
    err << "error: gradient check exceeds 1e-4\n";
    return 1;
  }
  return 0;
}

int cmd_bench(const Options& o, std::ostream& out) {
  const auto model = std::make_shared<const Model>(load_model(o.model));
  const AudioClip clip = read_wav(o.wav);
  write_bench_json(out, bench(model, clip, o.repetitions, stream_config(o)));
  return 0;
}

// --- config injection -------------------------------------------------------

const std::set<std::string> kFlagOptions = {"overwrite", "stdin-pcm", "no-timing"};

std::vector<std::string> with_config(const std::vector<std::string>& args, CLI::App& app) {
  std::string config_path;
  std::ptrdiff_t sub_pos = -1;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      ++i;
    } else if (a.rfind("--config=", 0) == 0) {
      config_path = a.substr(9);
    } else if (a == "--seed") {
      ++i;
    } else if (sub_pos < 0 && !a.empty() && a[0] != '-') {
      sub_pos = static_cast<std::ptrdiff_t>(i);
    }
  }
  if (config_path.empty()) return args;

  CLI::App* sub = nullptr;
  if (sub_pos >= 0) sub = app.get_subcommand_no_throw(args[static_cast<std::size_t>(sub_pos)]);
  std::vector<std::string> global_args, sub_args;
  for (const auto& e : parse_config_file(config_path)) {
    std::string name = e.key;
    std::replace(name.begin(), name.end(), '_', '-');
    if (name == "config") {
      throw InvalidArgument("config line " + std::to_string(e.line) + ": nested config");
    }
    std::vector<std::string>* target = nullptr;
    if (sub && sub->get_option_no_throw("--" + name)) {
      target = &sub_args;
    } else if (app.get_option_no_throw("--" + name)) {
      target = &global_args;
    } else {
      throw InvalidArgument("config line " + std::to_string(e.line) + ": unknown key '" +
                            e.key + "'");
    }
    if (kFlagOptions.count(name)) {
      if (parse_bool(e.value, e.line)) target->push_back("--" + name);
    } else {
      target->push_back("--" + name);
      target->push_back(e.value);
    }
  }
  // Config values come first so that explicit flags (TakeLast) override them.
  std::vector<std::string> merged = global_args;
  if (sub_pos < 0) {
    merged.insert(merged.end(), args.begin(), args.end());
    return merged;
  }
  merged.insert(merged.end(), args.begin(), args.begin() + sub_pos + 1);
  merged.insert(merged.end(), sub_args.begin(), sub_args.end());
  merged.insert(merged.end(), args.begin() + sub_pos + 1, args.end());
  return merged;
}

}  // namespace

std::vector<ConfigEntry> parse_config(std::istream& in) {
  std::vector<ConfigEntry> entries;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument("config line " + std::to_string(line) + ": expected key=value");
    }
    ConfigEntry e{trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line};
    if (e.key.empty() || e.key.find_first_of(" \t") != std::string::npos) {
      throw InvalidArgument("config line " + std::to_string(line) + ": malformed key");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ConfigEntry> parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open config");
  return parse_config(in);
}

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Road-type classification from tyre noise", "roadnoise"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  Options o;
  app.add_option("--seed", o.seed, "Master seed for every random choice");
  app.add_option("--config", o.config, "key=value file supplying flag defaults");

  auto* synth = app.add_subcommand("synth", "Synthesize a labelled corpus");
  synth->add_option("--out", o.synth_out, "Output directory")->required();
  synth->add_option("--clips-per-class", o.clips_per_class)->capture_default_str();
  synth->add_option("--duration-s", o.duration_s)->capture_default_str();
  synth->add_option("--speed-min", o.speed_min)->capture_default_str();
  synth->add_option("--speed-max", o.speed_max)->capture_default_str();
  synth->add_flag("--overwrite", o.overwrite, "Replace a non-empty output directory");

  auto* features = app.add_subcommand("features", "Write log-mel CSVs for a corpus");
  features->add_option("--manifest", o.manifest)->required();
  features->add_option("--out-dir", o.out_dir)->required();
  features->add_option("--frame-len", o.features.frame_len)->capture_default_str();
  features->add_option("--hop", o.features.hop)->capture_default_str();
  features->add_option("--n-mels", o.features.n_mels)->capture_default_str();
  features->add_option("--f-min", o.features.f_min_hz)->capture_default_str();
  features->add_option("--f-max", o.features.f_max_hz)->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "Train a classifier from scratch");
  train_cmd->add_option("--arch", o.arch, "cnn or ast")->capture_default_str();
  train_cmd->add_option("--manifest", o.manifest)->required();
  train_cmd->add_option("--epochs", o.epochs)->capture_default_str();
  train_cmd->add_option("--out", o.out, "Model file")->required();
  train_cmd->add_option("--lr", o.lr)->capture_default_str();
  train_cmd->add_option("--momentum", o.momentum)->capture_default_str();
  train_cmd->add_option("--batch-size", o.batch_size)->capture_default_str();
  train_cmd->add_option("--val-fraction", o.val_fraction)->capture_default_str();
  train_cmd->add_option("--report", o.report, "JSON-lines epoch report (default stdout)");

  auto* quantize = app.add_subcommand("quantize", "Post-training int8 quantization");
  quantize->add_option("--model", o.model)->required();
  quantize->add_option("--manifest", o.manifest, "Calibration corpus")->required();
  quantize->add_option("--out", o.out)->required();
  quantize->add_option("--calibration-size", o.calibration_size)->capture_default_str();

  auto* classify = app.add_subcommand("classify", "Stream audio through a model");
  classify->add_option("--model", o.model)->required();
  auto* wav_opt = classify->add_option("--wav", o.wav);
  auto* pcm_opt = classify->add_flag("--stdin-pcm", o.stdin_pcm,
                                     "Read raw 16-bit LE mono 44.1 kHz samples from stdin");
  wav_opt->excludes(pcm_opt);
  classify->add_option("--events", o.events, "JSON-lines output (default stdout)");
  classify->add_option("--votes", o.votes, "Smoothing window K")->capture_default_str();
  classify->add_flag("--no-timing", o.no_timing, "Write latency_ms as 0 for reproducible logs");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gradcheck->add_option("--arch", o.arch)->capture_default_str();

  auto* bench_cmd = app.add_subcommand("bench", "Per-window latency benchmark");
  bench_cmd->add_option("--model", o.model)->required();
  bench_cmd->add_option("--wav", o.wav)->required();
  bench_cmd->add_option("--repetitions", o.repetitions)->capture_default_str();
  bench_cmd->add_option("--votes", o.votes)->capture_default_str();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    std::vector<std::string> argv = with_config(args, app);
    std::reverse(argv.begin(), argv.end());
    try {
      app.parse(argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      app.exit(e, out, err);
      return 1;
    }

    if (synth->parsed()) return cmd_synth(o, out);
    if (features->parsed()) return cmd_features(o, out);
    if (train_cmd->parsed()) return cmd_train(o, out);
    if (quantize->parsed()) return cmd_quantize(o, out);
    if (classify->parsed()) return cmd_classify(o, in, out);
    if (gradcheck->parsed()) return cmd_gradcheck(o, out, err);
    if (bench_cmd->parsed()) return cmd_bench(o, out);
    err << app.help();
    return 1;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace roadnoise
