#pragma once

// Command implementations behind the `unmask` executable. Kept in a header
// so tests can drive them without spawning processes.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "unmask/bench.hpp"
#include "unmask/config.hpp"
#include "unmask/evaluation.hpp"
#include "unmask/ingest.hpp"
#include "unmask/pipeline.hpp"

namespace unmask::cli {

inline constexpr const char* kToolVersion = "0.1.0";

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Digests

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t size) { EVP_DigestUpdate(ctx_, data, size); }
  void update(const std::string& s) { update(s.data(), s.size()); }

  void update_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::format, "cannot open " + path.string());
    std::vector<char> buffer(1 << 16);
    while (in) {
      in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
      update(buffer.data(), static_cast<std::size_t>(in.gcount()));
    }
  }

  std::string hex() {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, out, &len);
    std::ostringstream s;
    for (unsigned int i = 0; i < len; ++i)
      s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(out[i]);
    return s.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

// Directories hash their image sequence (names and bytes, in sequence order);
// raw-y8 bodies include their sidecar header.
inline std::string content_digest(const fs::path& path) {
  Sha256 sha;
  if (fs::is_directory(path)) {
    for (const auto& file : list_image_sequence(path)) {
      sha.update(file.filename().string());
      sha.update_file(file);
    }
  } else {
    sha.update_file(path);
    if (fs::exists(raw_y8_header_path(path))) sha.update_file(raw_y8_header_path(path));
  }
  return sha.hex();
}

// ---------------------------------------------------------------------------
// Shared option handling

struct DetectorFlags {
  std::optional<std::size_t> w, stride, k, m, threads;
  std::optional<double> lambda, smoothSigma;
  std::optional<std::string> bins, channel;
  bool singleCore = false;
  std::optional<std::string> configFile;

  void add_to(CLI::App& app) {
    app.add_option("--w", w, "Half-window length in frames (default 10)");
    app.add_option("--stride", stride, "Frames between window starts (default 5)");
    app.add_option("--k", k, "Unmasking loops (default 10)");
    app.add_option("--m", m, "Features eliminated per loop, even (default 50)");
    app.add_option("--lambda", lambda, "L2 regularization strength (default 0.1)");
    app.add_option("--smooth-sigma", smoothSigma, "Temporal Gaussian sigma in frames (default 10)");
    app.add_option("--bins", bins, "Spatial bin grid RxC (default 2x2)");
    app.add_option("--channel", channel, "motion | appearance | fusion");
    app.add_option("--threads", threads, "Worker threads; >= 2 runs the two stages concurrently");
    app.add_flag("--single-core", singleCore, "Run everything on one thread");
    app.add_option("--config", configFile, "key=value file; flags override it");
  }

  // Defaults < config file < flags. Non-detector keys from the file are
  // returned for the caller.
  DetectorConfig resolve(std::map<std::string, std::string>& extra) const {
    DetectorConfig config;
    if (configFile) {
      for (const auto& [key, value] : read_key_value_file(*configFile))
        if (!apply_setting(config, key, value)) extra[key] = value;
    }
    if (w) config.w = *w;
    if (stride) config.stride = *stride;
    if (k) config.k = *k;
    if (m) config.m = *m;
    if (lambda) config.lambda = *lambda;
    if (smoothSigma) config.smoothingSigma = *smoothSigma;
    if (bins) config.bins = parse_bin_layout(*bins);
    if (channel) config.channels = parse_channel_selection(*channel);
    if (threads) config.workers = std::max<std::size_t>(1, *threads);
    if (singleCore) config.workers = 1;
    return config;
  }
};

inline FrameFormat parse_frame_format(const std::string& text) {
  if (text == "pgm" || text == "pgm-sequence") return FrameFormat::pgm_sequence;
  if (text == "raw" || text == "raw-y8") return FrameFormat::raw_y8;
  fail(ErrorKind::argument, "format must be pgm-sequence or raw-y8, got '" + text + "'");
}

inline json config_json(const DetectorConfig& c) {
  return json{{"w", c.w},
              {"stride", c.stride},
              {"k", c.k},
              {"m", c.m},
              {"lambda", c.lambda},
              {"bins", c.bins.to_string()},
              {"smooth_sigma", c.smoothingSigma},
              {"channel", to_string(c.channels)},
              {"threads", c.workers}};
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::format, "cannot write " + path.string());
  out << text;
}

inline json windows_json(std::span<const WindowScore> windows) {
  json out = json::object();
  for (const auto& w : windows) {
    json entry{{"start", w.start}};
    for (std::size_t c = 0; c < kChannelCount; ++c)
      if (!w.bins[c].empty()) entry[to_string(static_cast<Channel>(c))] = w.bins[c];
    out[std::to_string(w.windowId)] = std::move(entry);
  }
  return out;
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  DetectorFlags detector;
  std::optional<std::string> frames, activations, format, out, manifest, mapsOut, dumpProfiles,
      dumpWindows;
  double mapSigma = 10.0;
};

inline int cmd_run(const RunOptions& opt, std::ostream& log) {
  const auto started = std::chrono::steady_clock::now();
  std::map<std::string, std::string> extra;
  DetectorConfig config = opt.detector.resolve(extra);

  auto pick = [&](const std::optional<std::string>& flag, const char* key) {
    if (flag) return flag;
    if (auto it = extra.find(key); it != extra.end()) {
      auto v = std::optional<std::string>(it->second);
      extra.erase(it);
      return v;
    }
    return std::optional<std::string>{};
  };
  DetectorSources sources;
  const auto frames = pick(opt.frames, "frames");
  const auto activations = pick(opt.activations, "activations");
  const auto format = pick(opt.format, "format");
  const auto out = pick(opt.out, "out");
  const auto manifest_path = pick(opt.manifest, "manifest");
  const auto maps_out = pick(opt.mapsOut, "maps-out");
  for (const auto& [key, value] : extra) fail(ErrorKind::argument, "unknown config key '" + key + "'");

  require(frames || activations, ErrorKind::argument,
          "at least one of --frames or --activations is required");
  require(out.has_value(), ErrorKind::argument, "--out is required");
  if (!opt.detector.channel && !extra.count("channel") && !opt.detector.configFile) {
    config.channels = frames && activations ? ChannelSelection::fusion
                      : frames              ? ChannelSelection::motion
                                            : ChannelSelection::appearance;
  }
  if (config.uses(Channel::motion))
    require(frames.has_value(), ErrorKind::argument,
            std::string("channel ") + to_string(config.channels) + " requires --frames");
  if (config.uses(Channel::appearance))
    require(activations.has_value(), ErrorKind::argument,
            std::string("channel ") + to_string(config.channels) + " requires --activations");
  config.retainMaps = maps_out.has_value();
  config.validate();

  if (frames && config.uses(Channel::motion)) sources.frames = *frames;
  if (activations && config.uses(Channel::appearance)) sources.activations = *activations;
  sources.frameFormat = format ? parse_frame_format(*format) : FrameFormat::pgm_sequence;

  const auto result = run_detector(sources, config);

  std::ostringstream csv;
  write_scores_csv(csv, result.series);
  write_text(*out, csv.str());
  if (maps_out) {
    const auto maps = detector_score_maps(result.windows, result.series.frames, config);
    write_score_maps(*maps_out, maps);
  }
  if (opt.dumpProfiles) {
    std::ostringstream p;
    write_profiles_csv(p, result.windows);
    write_text(*opt.dumpProfiles, p.str());
  }
  if (opt.dumpWindows) write_text(*opt.dumpWindows, windows_json(result.windows).dump(2) + "\n");

  json inputs = json::array();
  if (sources.frames)
    inputs.push_back({{"role", "frames"},
                      {"path", sources.frames->string()},
                      {"sha256", content_digest(*sources.frames)}});
  if (sources.activations)
    inputs.push_back({{"role", "activations"},
                      {"path", sources.activations->string()},
                      {"sha256", content_digest(*sources.activations)}});
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  json manifest{
      {"tool", "unmask"},
      {"version", kToolVersion},
      {"command", "run"},
      {"config", config_json(config)},
      {"inputs", inputs},
      {"outputs", {{"scores", *out}}},
      {"frames", result.series.frames},
      {"windows", result.windows.size()},
      {"timing",
       {{"wall_seconds", wall},
        {"feature_seconds", result.timings.featureSeconds},
        {"prediction_seconds", result.timings.predictionSeconds},
        {"feature_fps", result.timings.feature_fps()},
        {"prediction_fps", result.timings.prediction_fps()}}},
      {"interpretation",
       {{"motion_descriptor",
         "per-voxel 3D gradient magnitude over 10x10x5 cubes, block-local central differences"},
        {"static_cube_gate", "max |d/dt| < 1e-4"},
        {"temporal_smoothing", "Gaussian, radius ceil(3 sigma), truncated and renormalized"},
        {"classifier", "L2 logistic regression, zero init, accelerated full-batch descent"}}}};
  if (maps_out) manifest["outputs"]["maps"] = *maps_out;
  const fs::path mpath = manifest_path ? fs::path(*manifest_path) : fs::path(*out + ".manifest.json");
  write_text(mpath, manifest.dump(2) + "\n");
  log << "wrote " << result.series.frames << " frame scores to " << *out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

inline std::vector<double> read_scores_csv(const fs::path& path, const std::string& column) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::format, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::format,
          path.string() + ": empty score file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(trim(cell));
  }
  const auto it = std::find(header.begin(), header.end(), column);
  require(it != header.end(), ErrorKind::format, path.string() + ": no column '" + column + "'");
  const auto index = static_cast<std::size_t>(it - header.begin());
  std::vector<double> values;
  for (std::size_t row = 2; std::getline(in, line); ++row) {
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    require(index < cells.size() && !cells[index].empty(), ErrorKind::format,
            path.string() + ":" + std::to_string(row) + ": missing value for " + column);
    try {
      values.push_back(std::stod(cells[index]));
    } catch (const std::exception&) {
      fail(ErrorKind::format, path.string() + ":" + std::to_string(row) + ": bad number '" +
                                  cells[index] + "'");
    }
  }
  return values;
}

inline json report_json(const RocReport& report) {
  json points = json::array();
  for (const auto& p : report.points) {
    json threshold = std::isinf(p.threshold) ? json("inf") : json(p.threshold);
    points.push_back({{"threshold", threshold}, {"fpr", p.fpr}, {"tpr", p.tpr}});
  }
  return json{{"level", to_string(report.level)}, {"auc", report.auc}, {"points", points}};
}

inline std::string roc_csv(const RocReport& report) {
  std::ostringstream out;
  out << "fpr,tpr\n";
  out.precision(17);
  for (const auto& p : report.points) out << p.fpr << ',' << p.tpr << '\n';
  return out.str();
}

struct EvalOptions {
  std::string scores, gt, level = "frame", column = "score_smoothed";
  std::optional<std::string> maps, out, rocCsv;
  double mapSigma = 10.0;
};

inline int cmd_eval(const EvalOptions& opt, std::ostream& log) {
  require(opt.level == "frame" || opt.level == "pixel", ErrorKind::argument,
          "level must be frame or pixel, got '" + opt.level + "'");
  const auto gt = load_ground_truth(opt.gt);
  RocReport report;
  if (opt.level == "frame") {
    const auto scores = read_scores_csv(opt.scores, opt.column);
    require(scores.size() == gt.frameLabels.size(), ErrorKind::alignment,
            "score rows " + std::to_string(scores.size()) + " do not match ground-truth frames " +
                std::to_string(gt.frameLabels.size()));
    report = frame_auc(scores, gt.frameLabels);
  } else {
    require(gt.has_masks(), ErrorKind::capability,
            "pixel-level evaluation requires a directory of ground-truth masks");
    require(opt.maps.has_value(), ErrorKind::argument, "pixel-level evaluation requires --maps");
    const auto maps = read_score_maps(*opt.maps);
    report = pixel_auc(maps, gt, opt.mapSigma);
  }
  const std::string body = report_json(report).dump(2) + "\n";
  if (opt.out) {
    write_text(*opt.out, body);
    fs::path roc = opt.rocCsv ? fs::path(*opt.rocCsv)
                              : fs::path(*opt.out).replace_extension(".roc.csv");
    write_text(roc, roc_csv(report));
  } else {
    log << body;
    if (opt.rocCsv) write_text(*opt.rocCsv, roc_csv(report));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  DetectorFlags detector;
  std::optional<std::string> frames, activations, format;
  std::optional<std::size_t> synthetic;
  std::size_t repeat = 3;
};

inline int cmd_bench(const BenchOptions& opt, std::ostream& out) {
  std::map<std::string, std::string> extra;
  DetectorConfig config = opt.detector.resolve(extra);
  if (!opt.detector.channel && !opt.frames && !opt.synthetic && opt.activations)
    config.channels = ChannelSelection::appearance;
  config.workers = 1;
  config.validate();
  require(opt.repeat >= 1, ErrorKind::argument, "--repeat must be >= 1");

  std::vector<Frame> frames;
  std::vector<ActivationFrame> activations;
  if (config.uses(Channel::motion)) {
    require(opt.frames || opt.synthetic, ErrorKind::argument,
            "bench requires --frames or --synthetic");
    if (opt.frames) {
      frames = load_frames(*opt.frames, opt.format ? parse_frame_format(*opt.format)
                                                   : FrameFormat::pgm_sequence);
    } else {
      frames = synthetic_noise_frames(*opt.synthetic);
    }
  }
  if (config.uses(Channel::appearance)) {
    require(opt.activations.has_value(), ErrorKind::argument,
            std::string("channel ") + to_string(config.channels) + " requires --activations");
    activations = load_activations(*opt.activations);
  }
  const auto result = run_bench(frames, activations, config, opt.repeat);
  json report{{"frames", result.frames},
              {"repeat", result.repeat},
              {"single_core", true},
              {"config", config_json(config)},
              {"feature_fps", result.feature_fps()},
              {"prediction_fps", result.prediction_fps()},
              {"feature_fps_runs", result.featureFps},
              {"prediction_fps_runs", result.predictionFps},
              {"reference", {{"feature_fps", 726.3}, {"prediction_fps", 34.9}}}};
  out << report.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

inline std::string single_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

inline void diagnostic(std::ostream& err, std::string_view kind, const std::string& message) {
  err << "unmask: error kind=" << kind << " message=\"" << single_line(message) << "\"\n";
}

inline int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training-free video anomaly detection by unmasking", "unmask"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Score a video and write the per-frame CSV and manifest");
  run.detector.add_to(*run_cmd);
  run_cmd->add_option("--frames", run.frames, "PGM directory/file or raw-y8 body");
  run_cmd->add_option("--format", run.format, "pgm-sequence | raw-y8 (default pgm-sequence)");
  run_cmd->add_option("--activations", run.activations, "UMK1 activation tensor file");
  run_cmd->add_option("--out", run.out, "Score CSV to write");
  run_cmd->add_option("--manifest", run.manifest, "Manifest path (default <out>.manifest.json)");
  run_cmd->add_option("--maps-out", run.mapsOut, "Also write per-frame score maps (UMM1)");
  run_cmd->add_option("--dump-profiles", run.dumpProfiles, "Accuracy profiles CSV");
  run_cmd->add_option("--dump-windows", run.dumpWindows, "Per-window bin scores JSON");

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "ROC/AUC of a score CSV against ground truth");
  eval_cmd->add_option("--scores", eval.scores, "Score CSV from `unmask run`")->required();
  eval_cmd->add_option("--gt", eval.gt, "Mask directory or 0/1 label file")->required();
  eval_cmd->add_option("--level", eval.level, "frame | pixel");
  eval_cmd->add_option("--column", eval.column, "Score column (default score_smoothed)");
  eval_cmd->add_option("--maps", eval.maps, "Score maps (UMM1) for pixel level");
  eval_cmd->add_option("--map-sigma", eval.mapSigma, "Spatial Gaussian sigma in pixels (default 10)");
  eval_cmd->add_option("--out", eval.out, "Report JSON (default: stdout)");
  eval_cmd->add_option("--roc-csv", eval.rocCsv, "fpr,tpr CSV (default <out>.roc.csv)");

  BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "Single-core throughput of both stages");
  bench.detector.add_to(*bench_cmd);
  bench_cmd->add_option("--frames", bench.frames, "PGM directory/file or raw-y8 body");
  bench_cmd->add_option("--format", bench.format, "pgm-sequence | raw-y8");
  bench_cmd->add_option("--activations", bench.activations, "UMK1 activation tensor file");
  bench_cmd->add_option("--synthetic", bench.synthetic, "Use N frames of 160x120 noise");
  bench_cmd->add_option("--repeat", bench.repeat, "Timed repetitions; the median is reported");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    diagnostic(err, "argument", e.what());
    return 2;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run, err);
    if (eval_cmd->parsed()) return cmd_eval(eval, out);
    return cmd_bench(bench, out);
  } catch (const Error& e) {
    diagnostic(err, to_string(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    diagnostic(err, "internal", e.what());
    return 1;
  }
}

}  // namespace unmask::cli
