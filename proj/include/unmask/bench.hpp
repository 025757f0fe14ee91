#pragma once

// Stage-separated throughput measurement: feature extraction and prediction
// (unmasking + aggregation) are timed independently on one thread.

#include <algorithm>
#include <chrono>
#include <random>
#include <span>
#include <vector>

#include "unmask/pipeline.hpp"

namespace unmask {

struct BenchResult {
  std::size_t frames = 0;
  std::size_t repeat = 0;
  std::vector<double> featureFps;     // one per repeat
  std::vector<double> predictionFps;  // one per repeat

  static double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : (v[mid - 1] + v[mid]) / 2.0;
  }
  double feature_fps() const { return median(featureFps); }
  double prediction_fps() const { return median(predictionFps); }
};

inline BenchResult run_bench(std::span<const Frame> frames,
                             std::span<const ActivationFrame> activations, DetectorConfig config,
                             std::size_t repeat) {
  require(repeat >= 1, ErrorKind::argument, "repeat must be >= 1");
  config.workers = 1;
  config.validate();
  const bool motion = config.uses(Channel::motion);
  const bool appearance = config.uses(Channel::appearance);
  const std::size_t count = motion ? frames.size() : activations.size();
  require(!(motion && appearance) || frames.size() == activations.size(), ErrorKind::alignment,
          "frame count does not match activation count");
  require(count >= 2 * config.w, ErrorKind::stream_too_short,
          "benchmark stream shorter than one window");

  using Clock = std::chrono::steady_clock;
  BenchResult result;
  result.frames = count;
  result.repeat = repeat;
  for (std::size_t r = 0; r < repeat; ++r) {
    FeatureStage features(config);
    std::vector<WindowWork> work;
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < count; ++i) {
      auto w = features.push(motion ? &frames[i] : nullptr, appearance ? &activations[i] : nullptr);
      if (w) work.push_back(std::move(*w));
    }
    const auto t1 = Clock::now();
    ScoringStage scoring(config);
    for (const auto& w : work) scoring.consume(w);
    const auto series = scoring.finish(count);
    const auto t2 = Clock::now();
    (void)series;
    result.featureFps.push_back(count / std::chrono::duration<double>(t1 - t0).count());
    result.predictionFps.push_back(count / std::chrono::duration<double>(t2 - t1).count());
  }
  return result;
}

// Uniform 8-bit noise at working resolution: every cube carries motion.
inline std::vector<Frame> synthetic_noise_frames(std::size_t count, std::uint32_t seed = 1) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<Frame> frames;
  frames.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    Frame f{t, kWorkWidth, kWorkHeight, std::vector<float>(kWorkWidth * kWorkHeight)};
    for (auto& p : f.pixels) p = static_cast<float>(byte(rng) / 255.0);
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace unmask
