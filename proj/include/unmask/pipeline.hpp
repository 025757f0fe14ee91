#pragma once

// Online detector: sliding windows over the stream, unmasking per
// (window, bin, channel), per-frame aggregation, late fusion and temporal
// smoothing.
//
// Two stages hand work over through a bounded queue:
//   FeatureStage  frames/activations -> WindowWork (labeled batches)
//   ScoringStage  WindowWork -> window scores -> emitted frame scores

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "unmask/bounded_queue.hpp"
#include "unmask/error.hpp"
#include "unmask/features.hpp"
#include "unmask/ingest.hpp"
#include "unmask/logistic.hpp"
#include "unmask/smoothing.hpp"
#include "unmask/unmasking.hpp"

namespace unmask {

enum class ChannelSelection { motion, appearance, fusion };

inline const char* to_string(ChannelSelection c) {
  switch (c) {
    case ChannelSelection::motion: return "motion";
    case ChannelSelection::appearance: return "appearance";
    case ChannelSelection::fusion: return "fusion";
  }
  return "?";
}

inline ChannelSelection parse_channel_selection(const std::string& text) {
  if (text == "motion") return ChannelSelection::motion;
  if (text == "appearance") return ChannelSelection::appearance;
  if (text == "fusion") return ChannelSelection::fusion;
  fail(ErrorKind::argument, "channel must be motion, appearance or fusion, got '" + text + "'");
}

struct DetectorConfig {
  std::size_t w = 10;       // half-window, frames
  std::size_t stride = 5;   // frames between window starts
  std::size_t k = 10;       // unmasking loops
  std::size_t m = 50;       // features eliminated per loop
  double lambda = 0.1;
  BinLayout bins{};
  double smoothingSigma = 10.0;
  ChannelSelection channels = ChannelSelection::motion;
  std::size_t workers = 1;  // 1 = everything on the calling thread
  std::size_t queueCapacity = 4;
  bool retainMaps = false;

  bool uses(Channel c) const {
    if (channels == ChannelSelection::fusion) return true;
    return (c == Channel::motion) == (channels == ChannelSelection::motion);
  }

  void validate() const {
    bins.validate();
    if (uses(Channel::motion)) {
      require(w >= kSlotDepth && w % kSlotDepth == 0, ErrorKind::argument,
              "w must be a positive multiple of 5 for the motion channel, got " +
                  std::to_string(w));
    }
    require(w >= 1, ErrorKind::argument, "w must be >= 1");
    require(stride >= 1, ErrorKind::argument, "stride must be >= 1");
    require(k >= 1, ErrorKind::argument, "k must be >= 1");
    require(m >= 2 && m % 2 == 0, ErrorKind::argument,
            "m must be even and >= 2, got " + std::to_string(m));
    require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::argument, "lambda must be >= 0");
    require(smoothingSigma >= 0.0 && std::isfinite(smoothingSigma), ErrorKind::argument,
            "smooth-sigma must be >= 0");
  }

  UnmaskOptions unmask_options() const {
    UnmaskOptions o;
    o.loops = k;
    o.eliminatePerLoop = m;
    o.train.lambda = lambda;
    return o;
  }
};

// ---------------------------------------------------------------------------
// Window planning

struct WindowSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive; end - start == 2w
};

inline std::vector<WindowSpan> plan_windows(std::size_t frame_count, std::size_t w,
                                            std::size_t stride) {
  require(w >= 1 && stride >= 1, ErrorKind::argument, "plan_windows: w and stride must be >= 1");
  if (frame_count < 2 * w) {
    fail(ErrorKind::stream_too_short, "stream of " + std::to_string(frame_count) +
                                          " frames is shorter than one window of " +
                                          std::to_string(2 * w));
  }
  const std::size_t count = (frame_count - 2 * w) / stride + 1;
  std::vector<WindowSpan> windows(count);
  for (std::size_t j = 0; j < count; ++j) windows[j] = {j * stride, j * stride + 2 * w};
  return windows;
}

struct WindowGeometry {
  std::size_t w = 10;
  std::size_t stride = 5;

  std::size_t start(std::size_t window_id) const { return window_id * stride; }

  // Ids [first, last) of windows whose second half contains `frame`,
  // restricted to the first `window_count` windows.
  std::pair<std::size_t, std::size_t> covering(std::size_t frame, std::size_t window_count) const {
    if (frame < w || window_count == 0) return {0, 0};
    const std::size_t last = std::min((frame - w) / stride + 1, window_count);
    const std::size_t first = frame < 2 * w ? 0 : (frame - 2 * w) / stride + 1;
    return {first, std::max(first, last)};
  }

  bool covered(std::size_t frame, std::size_t window_count) const {
    const auto [a, b] = covering(frame, window_count);
    return a < b;
  }
};

// ---------------------------------------------------------------------------
// Batches

struct MotionSlot {
  std::size_t start = 0;
  std::span<const CubeFeature> cubes;
};

// Cubes of the slots lying wholly inside [start, start + 2w), labeled by the
// half their slot starts in.
inline WindowBatch motion_window_batch(std::size_t window_id, std::size_t start, std::size_t w,
                                       std::size_t bin, std::span<const MotionSlot> slots) {
  WindowBatch batch(kCubeValues);
  batch.windowId = window_id;
  batch.bin = bin;
  batch.channel = Channel::motion;
  for (const auto& slot : slots) {
    if (slot.start < start || slot.start + kSlotDepth > start + 2 * w) continue;
    const std::uint8_t label = slot.start >= start + w ? 1 : 0;
    for (const auto& cube : slot.cubes)
      if (cube.bin == bin) batch.add(cube.values, label);
  }
  return batch;
}

// One example per frame of the window.
inline WindowBatch appearance_window_batch(std::size_t window_id, std::size_t start,
                                           std::size_t w, std::size_t bin,
                                           std::span<const AppearanceFeature> features) {
  WindowBatch batch(features.empty() ? 0 : features.front().values.size());
  batch.windowId = window_id;
  batch.bin = bin;
  batch.channel = Channel::appearance;
  for (const auto& f : features) {
    if (f.bin != bin || f.frame < start || f.frame >= start + 2 * w) continue;
    batch.add(f.values, f.frame >= start + w ? 1 : 0);
  }
  return batch;
}

struct WindowWork {
  std::size_t windowId = 0;
  std::size_t start = 0;
  std::vector<WindowBatch> batches;       // enabled channels, bins in order
  std::vector<std::uint8_t> activeCells;  // motion cells with a cube in the second half
};

class FeatureStage {
 public:
  explicit FeatureStage(const DetectorConfig& config)
      : config_(config), geometry_{config.w, config.stride} {
    config_.validate();
  }

  std::size_t frames_seen() const { return seen_; }
  std::size_t windows_emitted() const { return next_window_; }

  // Consumes the next frame of the stream. Either argument may be null when
  // its channel is disabled. Returns the window that this frame completes.
  std::optional<WindowWork> push(const Frame* frame, const ActivationFrame* activation) {
    const std::size_t index = seen_;
    if (config_.uses(Channel::motion)) {
      require(frame != nullptr, ErrorKind::argument, "motion channel needs a frame per step");
      Frame resized = frame->width == kWorkWidth && frame->height == kWorkHeight
                          ? *frame
                          : resize_bilinear(*frame, kWorkWidth, kWorkHeight);
      resized.index = index;
      frames_.push_back(std::move(resized));
    }
    if (config_.uses(Channel::appearance)) {
      require(activation != nullptr, ErrorKind::argument,
              "appearance channel needs activation maps per step");
      auto binned = bin_activations(*activation, config_.bins);
      for (auto& f : binned) f.frame = index;
      appearance_.emplace(index, std::move(binned));
    }
    ++seen_;

    const std::size_t start = geometry_.start(next_window_);
    if (seen_ != start + 2 * config_.w) return std::nullopt;
    WindowWork work = build(next_window_, start);
    ++next_window_;
    evict(geometry_.start(next_window_));
    return work;
  }

 private:
  const std::vector<CubeFeature>& slot_cubes(std::size_t slot_start) {
    auto it = slots_.find(slot_start);
    if (it != slots_.end()) return it->second;
    const std::size_t offset = slot_start - frames_.front().index;
    std::vector<Frame> stack(frames_.begin() + static_cast<std::ptrdiff_t>(offset),
                             frames_.begin() + static_cast<std::ptrdiff_t>(offset + kSlotDepth));
    return slots_.emplace(slot_start, extract_cubes(stack, config_.bins)).first->second;
  }

  WindowWork build(std::size_t window_id, std::size_t start) {
    WindowWork work;
    work.windowId = window_id;
    work.start = start;
    const std::size_t w = config_.w;
    if (config_.uses(Channel::motion)) {
      std::vector<MotionSlot> slots;
      for (std::size_t s = start; s + kSlotDepth <= start + 2 * w; s += kSlotDepth)
        slots.push_back({s, slot_cubes(s)});
      for (std::size_t b = 0; b < config_.bins.count(); ++b)
        work.batches.push_back(motion_window_batch(window_id, start, w, b, slots));
      if (config_.retainMaps) {
        work.activeCells.assign(kGridCols * kGridRows, 0);
        for (const auto& slot : slots)
          if (slot.start >= start + w)
            for (const auto& c : slot.cubes) work.activeCells[c.gridY * kGridCols + c.gridX] = 1;
      }
    }
    if (config_.uses(Channel::appearance)) {
      std::vector<AppearanceFeature> features;
      for (std::size_t f = start; f < start + 2 * w; ++f)
        for (const auto& a : appearance_.at(f)) features.push_back(a);
      for (std::size_t b = 0; b < config_.bins.count(); ++b)
        work.batches.push_back(appearance_window_batch(window_id, start, w, b, features));
    }
    return work;
  }

  void evict(std::size_t keep_from) {
    while (!frames_.empty() && frames_.front().index < keep_from) frames_.pop_front();
    slots_.erase(slots_.begin(), slots_.lower_bound(keep_from));
    appearance_.erase(appearance_.begin(), appearance_.lower_bound(keep_from));
  }

  DetectorConfig config_;
  WindowGeometry geometry_;
  std::deque<Frame> frames_;
  std::map<std::size_t, std::vector<CubeFeature>> slots_;
  std::map<std::size_t, std::vector<AppearanceFeature>> appearance_;
  std::size_t seen_ = 0;
  std::size_t next_window_ = 0;
};

// ---------------------------------------------------------------------------
// Scoring

struct WindowScore {
  std::size_t windowId = 0;
  std::size_t start = 0;
  std::array<std::vector<double>, kChannelCount> bins;  // empty when disabled
  std::array<std::vector<UnmaskingProfile>, kChannelCount> profiles;
  std::vector<std::uint8_t> activeCells;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < std::min(workers, n); ++t) pool.emplace_back(body);
    body();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

inline WindowScore score_window(const WindowWork& work, const DetectorConfig& config) {
  WindowScore score;
  score.windowId = work.windowId;
  score.start = work.start;
  score.activeCells = work.activeCells;
  const auto options = config.unmask_options();
  std::vector<UnmaskingProfile> profiles(work.batches.size());
  detail::parallel_for(work.batches.size(), config.workers,
                       [&](std::size_t i) { profiles[i] = unmask(work.batches[i], options); });
  for (std::size_t i = 0; i < work.batches.size(); ++i) {
    const auto c = static_cast<std::size_t>(work.batches[i].channel);
    score.bins[c].push_back(unmask::score(profiles[i]));
    score.profiles[c].push_back(std::move(profiles[i]));
  }
  return score;
}

struct ScoreSeries {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::array<bool, kChannelCount> enabled{};
  std::vector<double> perBinChannel;  // [(frame * 2 + channel) * bins + bin]
  std::array<std::vector<double>, kChannelCount> perChannel;
  std::vector<double> fused;
  std::vector<double> smoothed;

  double bin_score(std::size_t frame, Channel c, std::size_t bin) const {
    return perBinChannel[(frame * kChannelCount + static_cast<std::size_t>(c)) * bins + bin];
  }
};

// Mean of the per-bin scores of the windows covering `frame` (window order).
inline double covered_mean(std::span<const WindowScore> windows, const WindowGeometry& geometry,
                           std::size_t frame, std::size_t channel, std::size_t bin) {
  const auto [first, last] = geometry.covering(frame, windows.size());
  double sum = 0.0;
  for (std::size_t j = first; j < last; ++j) sum += windows[j].bins[channel][bin];
  return sum / static_cast<double>(last - first);
}

struct FrameValues {
  std::vector<double> perBinChannel;  // [channel * bins + bin]
  std::array<double, kChannelCount> perChannel{};
  double fused = 0.0;
};

inline FrameValues frame_values(std::span<const WindowScore> windows,
                                const WindowGeometry& geometry, const DetectorConfig& config,
                                std::size_t source_frame) {
  const std::size_t bins = config.bins.count();
  FrameValues v;
  v.perBinChannel.assign(kChannelCount * bins, 0.0);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    if (!config.uses(static_cast<Channel>(c))) continue;
    double best = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
      const double s = covered_mean(windows, geometry, source_frame, c, b);
      v.perBinChannel[c * bins + b] = s;
      best = b == 0 ? s : std::max(best, s);
    }
    v.perChannel[c] = best;
    total += best;
    ++used;
  }
  v.fused = total / static_cast<double>(used);
  return v;
}

// Batch aggregation: per (bin, channel) mean over covering windows, nearest
// scored frame for uncovered frames (earlier frame on ties), max over bins,
// mean over channels, then temporal smoothing.
inline ScoreSeries aggregate(std::span<const WindowScore> windows, std::size_t frame_count,
                             const DetectorConfig& config) {
  const WindowGeometry geometry{config.w, config.stride};
  const std::size_t bins = config.bins.count();
  std::vector<std::ptrdiff_t> source(frame_count, -1);
  std::ptrdiff_t previous = -1;
  for (std::size_t f = 0; f < frame_count; ++f) {
    if (geometry.covered(f, windows.size())) previous = static_cast<std::ptrdiff_t>(f);
    source[f] = previous;
  }
  if (previous < 0) {
    fail(ErrorKind::stream_too_short,
         "no window completed within " + std::to_string(frame_count) + " frames");
  }
  std::ptrdiff_t following = -1;
  for (std::size_t r = frame_count; r-- > 0;) {
    if (geometry.covered(r, windows.size())) following = static_cast<std::ptrdiff_t>(r);
    const auto f = static_cast<std::ptrdiff_t>(r);
    if (source[r] == f) continue;
    if (source[r] < 0 || (following >= 0 && following - f < f - source[r])) source[r] = following;
  }

  ScoreSeries series;
  series.frames = frame_count;
  series.bins = bins;
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    series.enabled[c] = config.uses(static_cast<Channel>(c));
    if (series.enabled[c]) series.perChannel[c].resize(frame_count);
  }
  series.perBinChannel.assign(frame_count * kChannelCount * bins, 0.0);
  series.fused.resize(frame_count);
  for (std::size_t f = 0; f < frame_count; ++f) {
    const auto v = frame_values(windows, geometry, config, static_cast<std::size_t>(source[f]));
    std::copy(v.perBinChannel.begin(), v.perBinChannel.end(),
              series.perBinChannel.begin() + static_cast<std::ptrdiff_t>(f * kChannelCount * bins));
    for (std::size_t c = 0; c < kChannelCount; ++c)
      if (series.enabled[c]) series.perChannel[c][f] = v.perChannel[c];
    series.fused[f] = v.fused;
  }
  series.smoothed = smooth(series.fused, config.smoothingSigma);
  return series;
}

struct EmittedFrame {
  std::size_t frame = 0;
  std::array<std::optional<double>, kChannelCount> channel;
  double fused = 0.0;
  double smoothed = 0.0;  // truncated kernel over the frames emitted so far
};

using FrameSink = std::function<void(const EmittedFrame&)>;

class ScoringStage {
 public:
  ScoringStage(const DetectorConfig& config, FrameSink sink = {})
      : config_(config),
        geometry_{config.w, config.stride},
        taps_(gaussian_kernel(config.smoothingSigma)),
        sink_(std::move(sink)) {
    config_.validate();
  }

  void consume(const WindowWork& work) {
    require(work.windowId == windows_.size(), ErrorKind::argument,
            "windows must be scored in order");
    windows_.push_back(score_window(work, config_));
    // No later window reaches below this frame.
    emit_ready(geometry_.start(windows_.size()) + config_.w, std::nullopt);
  }

  ScoreSeries finish(std::size_t frame_count) {
    if (windows_.empty()) {
      fail(ErrorKind::stream_too_short, "stream of " + std::to_string(frame_count) +
                                            " frames is shorter than one window of " +
                                            std::to_string(2 * config_.w));
    }
    emit_ready(frame_count, frame_count);
    return aggregate(windows_, frame_count, config_);
  }

  const std::vector<WindowScore>& windows() const { return windows_; }

 private:
  // Emits frames in order for as long as their final values are known.
  void emit_ready(std::size_t horizon, std::optional<std::size_t> total) {
    const std::size_t limit = total ? *total : horizon;
    const std::size_t chunk_begin = emitted_;
    while (emitted_ < limit) {
      const std::size_t f = emitted_;
      std::optional<std::size_t> src;
      if (geometry_.covered(f, windows_.size())) {
        src = f;
      } else {
        std::optional<std::size_t> next;
        for (std::size_t q = f + 1; q < limit; ++q)
          if (geometry_.covered(q, windows_.size())) {
            next = q;
            break;
          }
        if (last_covered_ && next) {
          src = f - *last_covered_ <= *next - f ? *last_covered_ : *next;
        } else if (next) {
          src = next;
        } else if (last_covered_ && (total || f - *last_covered_ <= horizon - f)) {
          src = last_covered_;
        }
      }
      if (!src) break;
      if (*src == f) last_covered_ = f;
      const auto v = frame_values(windows_, geometry_, config_, *src);
      fused_.push_back(v.fused);
      pending_.push_back(v);
      ++emitted_;
    }
    for (std::size_t f = chunk_begin; f < emitted_; ++f) {
      const auto& v = pending_[f - chunk_begin];
      EmittedFrame e;
      e.frame = f;
      for (std::size_t c = 0; c < kChannelCount; ++c)
        if (config_.uses(static_cast<Channel>(c))) e.channel[c] = v.perChannel[c];
      e.fused = v.fused;
      e.smoothed = smooth_at(fused_, f, taps_);
      if (sink_) sink_(e);
    }
    pending_.clear();
  }

  DetectorConfig config_;
  WindowGeometry geometry_;
  std::vector<double> taps_;
  FrameSink sink_;
  std::vector<WindowScore> windows_;
  std::vector<double> fused_;
  std::vector<FrameValues> pending_;
  std::optional<std::size_t> last_covered_;
  std::size_t emitted_ = 0;
};

// Single-threaded online detector; push one step of the stream at a time.
class OnlineDetector {
 public:
  explicit OnlineDetector(const DetectorConfig& config, FrameSink sink = {})
      : features_(config), scoring_(config, std::move(sink)) {}

  void push(const Frame* frame, const ActivationFrame* activation = nullptr) {
    if (auto work = features_.push(frame, activation)) scoring_.consume(*work);
  }

  ScoreSeries finish() { return scoring_.finish(features_.frames_seen()); }

  const std::vector<WindowScore>& windows() const { return scoring_.windows(); }

 private:
  FeatureStage features_;
  ScoringStage scoring_;
};

// ---------------------------------------------------------------------------
// End-to-end runs

struct DetectorSources {
  std::optional<std::filesystem::path> frames;
  FrameFormat frameFormat = FrameFormat::pgm_sequence;
  std::optional<std::filesystem::path> activations;
};

struct StageTimings {
  double featureSeconds = 0.0;
  double predictionSeconds = 0.0;
  std::size_t frames = 0;

  double feature_fps() const { return featureSeconds > 0 ? frames / featureSeconds : 0.0; }
  double prediction_fps() const {
    return predictionSeconds > 0 ? frames / predictionSeconds : 0.0;
  }
};

struct DetectorResult {
  ScoreSeries series;
  std::vector<WindowScore> windows;
  StageTimings timings;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Pulls aligned steps from whichever inputs the configuration needs.
class StepSource {
 public:
  StepSource(const DetectorSources& sources, const DetectorConfig& config) {
    if (config.uses(Channel::motion)) {
      require(sources.frames.has_value(), ErrorKind::argument,
              "channel " + std::string(to_string(config.channels)) + " requires --frames");
      frames_.emplace(*sources.frames, sources.frameFormat);
    }
    if (config.uses(Channel::appearance)) {
      require(sources.activations.has_value(), ErrorKind::argument,
              "channel " + std::string(to_string(config.channels)) + " requires --activations");
      activations_.emplace(*sources.activations);
    }
    if (frames_ && activations_ && frames_->count() != activations_->count()) {
      fail(ErrorKind::alignment, "frame count " + std::to_string(frames_->count()) +
                                     " does not match activation count " +
                                     std::to_string(activations_->count()));
    }
    count_ = frames_ ? frames_->count() : activations_->count();
    if (count_ < 2 * config.w) {
      fail(ErrorKind::stream_too_short, "stream of " + std::to_string(count_) +
                                            " frames is shorter than one window of " +
                                            std::to_string(2 * config.w));
    }
  }

  std::size_t count() const { return count_; }

  bool next(std::optional<Frame>& frame, std::optional<ActivationFrame>& activation) {
    if (taken_ >= count_) return false;
    ++taken_;
    if (frames_) frame = frames_->next();
    if (activations_) activation = activations_->next();
    return true;
  }

 private:
  std::optional<FrameReader> frames_;
  std::optional<ActivationReader> activations_;
  std::size_t count_ = 0;
  std::size_t taken_ = 0;
};

}  // namespace detail

// With config.workers >= 2 feature extraction and unmasking run on separate
// threads; the emitted scores are identical either way.
inline DetectorResult run_detector(const DetectorSources& sources, const DetectorConfig& config,
                                   FrameSink sink = {}) {
  config.validate();
  detail::StepSource steps(sources, config);
  FeatureStage features(config);
  ScoringStage scoring(config, std::move(sink));
  DetectorResult result;
  result.timings.frames = steps.count();

  auto produce_one = [&](std::optional<WindowWork>& work) {
    std::optional<Frame> frame;
    std::optional<ActivationFrame> activation;
    if (!steps.next(frame, activation)) return false;
    const auto t0 = detail::Clock::now();
    work = features.push(frame ? &*frame : nullptr, activation ? &*activation : nullptr);
    result.timings.featureSeconds += detail::seconds_since(t0);
    return true;
  };
  auto consume_one = [&](const WindowWork& work) {
    const auto t0 = detail::Clock::now();
    scoring.consume(work);
    result.timings.predictionSeconds += detail::seconds_since(t0);
  };

  if (config.workers <= 1) {
    std::optional<WindowWork> work;
    while (produce_one(work))
      if (work) consume_one(*work);
  } else {
    BoundedQueue<WindowWork> queue(config.queueCapacity);
    std::exception_ptr producer_error;
    std::jthread producer([&] {
      try {
        std::optional<WindowWork> work;
        while (produce_one(work))
          if (work && !queue.push(std::move(*work))) break;
      } catch (...) {
        producer_error = std::current_exception();
      }
      queue.close();
    });
    try {
      while (auto work = queue.pop()) consume_one(*work);
    } catch (...) {
      queue.close();
      throw;
    }
    producer.join();
    if (producer_error) std::rethrow_exception(producer_error);
  }

  const auto t0 = detail::Clock::now();
  result.series = scoring.finish(steps.count());
  result.timings.predictionSeconds += detail::seconds_since(t0);
  result.windows = scoring.windows();
  return result;
}

// In-memory variant used by tests and benchmarks.
inline DetectorResult run_detector(std::span<const Frame> frames,
                                   std::span<const ActivationFrame> activations,
                                   const DetectorConfig& config, FrameSink sink = {}) {
  config.validate();
  const bool motion = config.uses(Channel::motion);
  const bool appearance = config.uses(Channel::appearance);
  if (motion && appearance && frames.size() != activations.size()) {
    fail(ErrorKind::alignment, "frame count does not match activation count");
  }
  const std::size_t count = motion ? frames.size() : activations.size();
  if (count < 2 * config.w) {
    fail(ErrorKind::stream_too_short, "stream of " + std::to_string(count) +
                                          " frames is shorter than one window of " +
                                          std::to_string(2 * config.w));
  }
  FeatureStage features(config);
  ScoringStage scoring(config, std::move(sink));
  DetectorResult result;
  result.timings.frames = count;
  for (std::size_t i = 0; i < count; ++i) {
    auto t0 = detail::Clock::now();
    auto work = features.push(motion ? &frames[i] : nullptr, appearance ? &activations[i] : nullptr);
    result.timings.featureSeconds += detail::seconds_since(t0);
    if (work) {
      t0 = detail::Clock::now();
      scoring.consume(*work);
      result.timings.predictionSeconds += detail::seconds_since(t0);
    }
  }
  const auto t0 = detail::Clock::now();
  result.series = scoring.finish(count);
  result.timings.predictionSeconds += detail::seconds_since(t0);
  result.windows = scoring.windows();
  return result;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_scores_csv(std::ostream& out, const ScoreSeries& series) {
  out << "frame,score_motion,score_appearance,score_fused,score_smoothed\n";
  for (std::size_t f = 0; f < series.frames; ++f) {
    out << f;
    for (std::size_t c = 0; c < kChannelCount; ++c) {
      out << ',';
      if (series.enabled[c]) out << detail::format_score(series.perChannel[c][f]);
    }
    out << ',' << detail::format_score(series.fused[f]) << ','
        << detail::format_score(series.smoothed[f]) << '\n';
  }
}

// windowId,bin,channel,loop,accuracy
inline void write_profiles_csv(std::ostream& out, std::span<const WindowScore> windows) {
  out << "windowId,bin,channel,loop,accuracy\n";
  for (const auto& w : windows)
    for (std::size_t c = 0; c < kChannelCount; ++c)
      for (std::size_t b = 0; b < w.profiles[c].size(); ++b) {
        const auto& acc = w.profiles[c][b].accuracies;
        for (std::size_t l = 0; l < acc.size(); ++l)
          out << w.windowId << ',' << b << ',' << to_string(static_cast<Channel>(c)) << ','
              << l << ',' << detail::format_score(acc[l]) << '\n';
      }
}

}  // namespace unmask
