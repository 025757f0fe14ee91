#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "synthetic.hpp"
#include "unmask/pipeline.hpp"

namespace {

using namespace unmask;
using unmask::testing::noise_frames;
using unmask::testing::TempDir;

WindowScore window(std::size_t id, std::size_t stride, std::vector<double> motion,
                   std::vector<double> appearance = {}) {
  WindowScore w;
  w.windowId = id;
  w.start = id * stride;
  w.bins[0] = std::move(motion);
  w.bins[1] = std::move(appearance);
  return w;
}

std::vector<ActivationFrame> random_activations(std::size_t count, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<ActivationFrame> out;
  for (std::size_t i = 0; i < count; ++i) {
    ActivationFrame a{i, 256, 13, 13, std::vector<float>(256 * 169)};
    for (auto& v : a.values) v = u(rng);
    out.push_back(std::move(a));
  }
  return out;
}

TEST(Config, Defaults) {
  const DetectorConfig c;
  EXPECT_EQ(c.w, 10u);
  EXPECT_EQ(c.stride, 5u);
  EXPECT_EQ(c.k, 10u);
  EXPECT_EQ(c.m, 50u);
  EXPECT_EQ(c.lambda, 0.1);
  EXPECT_EQ(c.bins.rows, 2u);
  EXPECT_EQ(c.bins.cols, 2u);
  EXPECT_EQ(c.channels, ChannelSelection::motion);
}

TEST(Config, ValidationRejectsBadValues) {
  DetectorConfig c;
  c.w = 7;
  EXPECT_THROW(c.validate(), Error);
  c.channels = ChannelSelection::appearance;
  EXPECT_NO_THROW(c.validate());
  c.m = 5;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_THROW(parse_channel_selection("both"), Error);
  EXPECT_EQ(parse_channel_selection("fusion"), ChannelSelection::fusion);
}

TEST(PlanWindows, Examples) {
  const auto one = plan_windows(20, 10, 5);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].start, 0u);
  EXPECT_EQ(one[0].end, 20u);

  const auto three = plan_windows(30, 10, 5);
  ASSERT_EQ(three.size(), 3u);
  EXPECT_EQ(three[1].start, 5u);
  EXPECT_EQ(three[2].start, 10u);

  EXPECT_EQ(plan_windows(30, 10, 1).size(), 11u);
  try {
    plan_windows(19, 10, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::stream_too_short);
  }
}

TEST(PlanWindows, SecondHalvesCoverTheTail) {
  for (std::size_t w : {1u, 5u, 10u})
    for (std::size_t s : {1u, 3u, 5u, 7u, 20u})
      for (std::size_t t = 2 * w; t < 2 * w + 40; ++t) {
        const auto windows = plan_windows(t, w, s);
        const WindowGeometry g{w, s};
        const std::size_t end = windows.back().start + 2 * w;
        for (std::size_t f = 0; f < t; ++f) {
          bool in_second_half = false;
          for (const auto& span : windows)
            in_second_half |= f >= span.start + w && f < span.end;
          EXPECT_EQ(g.covered(f, windows.size()), in_second_half) << "w=" << w << " s=" << s << " f=" << f;
          if (s <= w) {
            EXPECT_EQ(in_second_half, f >= w && f < end);
          }
        }
      }
}

TEST(WindowBatches, AppearanceHasOneExamplePerFrame) {
  std::vector<AppearanceFeature> features;
  for (const auto& a : random_activations(25, 1)) {
    auto bins = bin_activations(a);
    features.insert(features.end(), bins.begin(), bins.end());
  }
  for (std::size_t bin = 0; bin < 4; ++bin) {
    const auto batch = appearance_window_batch(1, 5, 10, bin, features);
    EXPECT_EQ(batch.count(0), 10u);
    EXPECT_EQ(batch.count(1), 10u);
    EXPECT_EQ(batch.dims(), 12544u);
  }
}

TEST(WindowBatches, MotionSlotArithmetic) {
  const auto frames = noise_frames(20, 2);
  std::vector<std::vector<CubeFeature>> cubes;
  for (std::size_t s = 0; s < 4; ++s)
    cubes.push_back(extract_cubes(std::span(frames).subspan(5 * s, 5)));
  std::vector<MotionSlot> slots;
  for (std::size_t s = 0; s < 4; ++s) slots.push_back({5 * s, cubes[s]});
  for (std::size_t bin = 0; bin < 4; ++bin) {
    const auto batch = motion_window_batch(0, 0, 10, bin, slots);
    EXPECT_EQ(batch.count(0), 96u);
    EXPECT_EQ(batch.count(1), 96u);
    for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_EQ(batch.row(i).size(), 500u);
  }
}

TEST(WindowBatches, StaticFirstHalfIsDegenerate) {
  auto frames = noise_frames(20, 3);
  for (std::size_t i = 1; i < 10; ++i) frames[i].pixels = frames[0].pixels;
  DetectorConfig config;
  const auto result = run_detector(frames, {}, config);
  ASSERT_EQ(result.windows.size(), 1u);
  for (const auto& p : result.windows[0].profiles[0]) {
    EXPECT_TRUE(p.degenerate);
    EXPECT_EQ(p.accuracies, std::vector<double>(10, 0.5));
  }
}

TEST(Aggregate, SingleWindowBackfills) {
  DetectorConfig config;
  const std::vector<WindowScore> windows{window(0, 5, {0.7, 0.6, 0.5, 0.5})};
  const auto s = aggregate(windows, 20, config);
  for (std::size_t f = 0; f < 20; ++f) {
    EXPECT_EQ(s.perChannel[0][f], 0.7);
    EXPECT_EQ(s.fused[f], 0.7);
  }
}

TEST(Aggregate, OverlappingWindowsAverage) {
  DetectorConfig config;
  const std::vector<WindowScore> windows{window(0, 5, {0.4, 0.4, 0.4, 0.4}),
                                         window(1, 5, {0.6, 0.6, 0.6, 0.6})};
  const auto s = aggregate(windows, 25, config);
  EXPECT_EQ(s.perChannel[0][12], 0.4);
  EXPECT_EQ(s.perChannel[0][15], 0.5);
  EXPECT_EQ(s.perChannel[0][19], 0.5);
  EXPECT_EQ(s.perChannel[0][22], 0.6);
}

TEST(Aggregate, MaxOverBins) {
  DetectorConfig config;
  const std::vector<WindowScore> windows{window(0, 5, {0.5, 0.9, 0.5, 0.5})};
  const auto s = aggregate(windows, 20, config);
  EXPECT_EQ(s.perChannel[0][15], 0.9);
  EXPECT_EQ(s.bin_score(15, Channel::motion, 1), 0.9);
}

TEST(Aggregate, UncoveredTailTakesNearestCoveredFrame) {
  DetectorConfig config;
  // T=27: windows at 0 and 5; frames 25, 26 have no covering window.
  const std::vector<WindowScore> windows{window(0, 5, {0.4, 0.4, 0.4, 0.4}),
                                         window(1, 5, {0.8, 0.8, 0.8, 0.8})};
  const auto s = aggregate(windows, 27, config);
  EXPECT_EQ(s.perChannel[0][25], s.perChannel[0][24]);
  EXPECT_EQ(s.perChannel[0][26], 0.8);
  EXPECT_EQ(s.perChannel[0][0], s.perChannel[0][10]);
}

TEST(Aggregate, FusionOfEqualChannelsIsThatValue) {
  DetectorConfig config;
  config.channels = ChannelSelection::fusion;
  const std::vector<WindowScore> windows{window(0, 5, {0.3, 0.65, 0.2, 0.1}, {0.65, 0.1, 0.1, 0.1})};
  const auto s = aggregate(windows, 20, config);
  for (std::size_t f = 0; f < 20; ++f) EXPECT_EQ(s.fused[f], 0.65);
}

TEST(Aggregate, FusionLiesBetweenChannels) {
  DetectorConfig config;
  config.channels = ChannelSelection::fusion;
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<WindowScore> windows;
  for (std::size_t id = 0; id < 9; ++id)
    windows.push_back(window(id, 5, {u(rng), u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng), u(rng)}));
  const auto s = aggregate(windows, 63, config);
  for (std::size_t f = 0; f < 63; ++f) {
    EXPECT_GE(s.fused[f], std::min(s.perChannel[0][f], s.perChannel[1][f]));
    EXPECT_LE(s.fused[f], std::max(s.perChannel[0][f], s.perChannel[1][f]));
  }
}

TEST(Aggregate, IdempotentRerun) {
  DetectorConfig config;
  std::mt19937 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<WindowScore> windows;
  for (std::size_t id = 0; id < 12; ++id) windows.push_back(window(id, 5, {u(rng), u(rng), u(rng), u(rng)}));
  const auto a = aggregate(windows, 78, config);
  const auto b = aggregate(windows, 78, config);
  EXPECT_EQ(a.fused, b.fused);
  EXPECT_EQ(a.smoothed, b.smoothed);
  EXPECT_EQ(a.perBinChannel, b.perBinChannel);
}

TEST(Smoothing, ConstantIsPreserved) {
  const std::vector<double> series(40, 0.63);
  for (double v : smooth(series, 10.0)) EXPECT_NEAR(v, 0.63, 1e-15);
}

TEST(Smoothing, ZeroSigmaIsIdentity) {
  const std::vector<double> series{0.1, 0.9, 0.3, 0.5};
  EXPECT_EQ(smooth(series, 0.0), series);
}

TEST(Smoothing, ImpulseMatchesDirectConvolution) {
  std::vector<double> series(21, 0.0);
  series[10] = 1.0;
  const auto out = smooth(series, 1.0);
  for (std::size_t i = 0; i < series.size(); ++i) {
    double num = 0, den = 0;
    for (int d = -3; d <= 3; ++d) {
      const int j = static_cast<int>(i) + d;
      if (j < 0 || j >= 21) continue;
      const double g = std::exp(-0.5 * d * d);
      num += g * series[j];
      den += g;
    }
    EXPECT_NEAR(out[i], num / den, 1e-15);
  }
  EXPECT_NEAR(out[10], 1.0 / (1 + 2 * std::exp(-0.5) + 2 * std::exp(-2.0) + 2 * std::exp(-4.5)), 1e-15);
}

TEST(Smoothing, KernelRadius) {
  EXPECT_EQ(gaussian_kernel(10.0).size(), 61u);
  EXPECT_EQ(gaussian_kernel(0.5).size(), 5u);
  EXPECT_THROW(gaussian_kernel(-1.0), Error);
}

TEST(Detector, TwentyFrameRun) {
  const auto frames = noise_frames(20, 4);
  const auto r = run_detector(frames, {}, DetectorConfig{});
  ASSERT_EQ(r.windows.size(), 1u);
  ASSERT_EQ(r.series.frames, 20u);
  for (std::size_t f = 0; f < 20; ++f) EXPECT_EQ(r.series.fused[f], r.series.fused[10]);
}

TEST(Detector, OnlineEmissionMatchesBatchAggregation) {
  const auto frames = noise_frames(47, 5);
  DetectorConfig config;
  config.k = 3;
  std::vector<EmittedFrame> emitted;
  OnlineDetector online(config, [&](const EmittedFrame& e) { emitted.push_back(e); });
  for (const auto& f : frames) online.push(&f);
  const auto series = online.finish();
  ASSERT_EQ(emitted.size(), 47u);
  for (std::size_t f = 0; f < 47; ++f) {
    EXPECT_EQ(emitted[f].frame, f);
    EXPECT_EQ(emitted[f].fused, series.fused[f]);
    EXPECT_EQ(*emitted[f].channel[0], series.perChannel[0][f]);
    EXPECT_FALSE(emitted[f].channel[1].has_value());
  }
  EXPECT_NEAR(emitted.back().smoothed, series.smoothed.back(), 1e-15);

  const auto batch = run_detector(frames, {}, config);
  EXPECT_EQ(batch.series.fused, series.fused);
  EXPECT_EQ(batch.series.smoothed, series.smoothed);
}

TEST(Detector, FusionRunUsesBothChannels) {
  const auto frames = noise_frames(25, 6);
  const auto acts = random_activations(25, 7);
  DetectorConfig config;
  config.channels = ChannelSelection::fusion;
  config.k = 2;
  const auto r = run_detector(frames, acts, config);
  ASSERT_EQ(r.windows.size(), 2u);
  EXPECT_EQ(r.windows[0].bins[0].size(), 4u);
  EXPECT_EQ(r.windows[0].bins[1].size(), 4u);
  for (std::size_t f = 0; f < 25; ++f)
    EXPECT_NEAR(r.series.fused[f], 0.5 * (r.series.perChannel[0][f] + r.series.perChannel[1][f]), 1e-15);
  EXPECT_THROW(run_detector(frames, std::span(acts).first(24), config), Error);
}

TEST(Detector, ResizesFramesToWorkingResolution) {
  std::vector<Frame> frames;
  for (const auto& f : noise_frames(20, 8)) frames.push_back(resize_bilinear(f, 320, 240));
  const auto r = run_detector(frames, {}, DetectorConfig{});
  EXPECT_EQ(r.series.frames, 20u);
}

TEST(Detector, ThreadedFileRunMatchesSingleThread) {
  TempDir dir;
  const auto frames = noise_frames(33, 9);
  write_raw_y8(dir / "v.y8", frames);
  DetectorSources sources;
  sources.frames = dir / "v.y8";
  sources.frameFormat = FrameFormat::raw_y8;
  DetectorConfig config;
  config.k = 3;
  const auto single = run_detector(sources, config);
  config.workers = 2;
  std::size_t sink_calls = 0;
  const auto threaded = run_detector(sources, config, [&](const EmittedFrame&) { ++sink_calls; });
  EXPECT_EQ(single.series.fused, threaded.series.fused);
  EXPECT_EQ(single.series.smoothed, threaded.series.smoothed);
  EXPECT_EQ(sink_calls, 33u);
}

TEST(Detector, MissingInputNamesTheFlag) {
  DetectorSources sources;
  DetectorConfig config;
  try {
    run_detector(sources, config);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::argument);
    EXPECT_NE(std::string(e.what()).find("--frames"), std::string::npos);
  }
}

TEST(Detector, ShortStreamIsReported) {
  const auto frames = noise_frames(19, 10);
  try {
    run_detector(frames, {}, DetectorConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::stream_too_short);
  }
}

TEST(Output, ScoreCsvLeavesDisabledChannelsBlank) {
  const auto r = run_detector(noise_frames(20, 11), {}, DetectorConfig{});
  std::ostringstream out;
  write_scores_csv(out, r.series);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "frame,score_motion,score_appearance,score_fused,score_smoothed");
  std::getline(in, line);
  EXPECT_NE(line.find(",,"), std::string::npos);
  std::size_t rows = 1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 20u);
}

TEST(Queue, ClosedQueueDrains) {
  BoundedQueue<int> q(2);
  EXPECT_TRUE(q.push(1));
  EXPECT_TRUE(q.push(2));
  q.close();
  EXPECT_FALSE(q.push(3));
  EXPECT_EQ(q.pop(), 1);
  EXPECT_EQ(q.pop(), 2);
  EXPECT_FALSE(q.pop().has_value());
}

}  // namespace
