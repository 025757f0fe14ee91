#pragma once

// Frame-level and pixel-level ROC analysis.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unmask/error.hpp"
#include "unmask/features.hpp"
#include "unmask/ingest.hpp"
#include "unmask/pipeline.hpp"
#include "unmask/smoothing.hpp"

namespace unmask {

enum class EvalLevel { frame, pixel };

inline const char* to_string(EvalLevel level) {
  return level == EvalLevel::frame ? "frame" : "pixel";
}

struct RocPoint {
  double threshold = 0.0;  // +inf for the (0,0) sentinel
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocReport {
  EvalLevel level = EvalLevel::frame;
  std::vector<RocPoint> points;
  double auc = 0.0;
};

inline double trapezoid_area(std::span<const RocPoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  return area;
}

// One vertex per distinct score, visited from the highest; a sample counts
// as detected at threshold t when its score is >= t.
inline RocReport roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels,
                           EvalLevel level = EvalLevel::frame) {
  require(scores.size() == labels.size(), ErrorKind::alignment,
          "score count " + std::to_string(scores.size()) + " does not match label count " +
              std::to_string(labels.size()));
  const auto positives =
      static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  const std::size_t negatives = labels.size() - positives;
  require(positives > 0 && negatives > 0, ErrorKind::undefined_auc,
          "AUC is undefined unless both classes are present (positives=" +
              std::to_string(positives) + ", negatives=" + std::to_string(negatives) + ")");
  for (double s : scores) require(!std::isnan(s), ErrorKind::data, "NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocReport report;
  report.level = level;
  report.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      if (labels[order[i]]) ++tp; else ++fp;
      ++i;
    }
    report.points.push_back({threshold, static_cast<double>(fp) / negatives,
                             static_cast<double>(tp) / positives});
  }
  report.auc = trapezoid_area(report.points);
  return report;
}

inline RocReport frame_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  return roc_curve(scores, labels, EvalLevel::frame);
}

// ---------------------------------------------------------------------------
// Spatial score maps

struct ScoreMap {
  std::size_t frame = 0;
  std::size_t gridWidth = kGridCols;
  std::size_t gridHeight = kGridRows;
  std::vector<double> cells;  // row-major

  double at(std::size_t gx, std::size_t gy) const { return cells[gy * gridWidth + gx]; }
};

// Per-cell scores of one window. Cells that carried a cube take that cube's
// score; all other cells take the score of their bin. The detector assigns
// every cube the score of its (window, bin), so both agree there.
inline std::vector<double> window_cell_grid(std::span<const double> bin_scores,
                                            std::span<const std::optional<double>> cube_scores,
                                            const BinLayout& layout) {
  require(bin_scores.size() == layout.count(), ErrorKind::argument,
          "window_cell_grid: one score per bin required");
  require(cube_scores.empty() || cube_scores.size() == kGridCols * kGridRows, ErrorKind::argument,
          "window_cell_grid: cube scores must cover the 16x12 grid");
  std::vector<double> grid(kGridCols * kGridRows);
  for (std::size_t gy = 0; gy < kGridRows; ++gy)
    for (std::size_t gx = 0; gx < kGridCols; ++gx) {
      const std::size_t cell = gy * kGridCols + gx;
      grid[cell] = !cube_scores.empty() && cube_scores[cell] ? *cube_scores[cell]
                                                             : bin_scores[bin_of_patch(gx, gy, layout)];
    }
  return grid;
}

// Averages per-window cell grids onto frames with the same rule used for
// frame scores: mean over windows whose second half holds the frame, nearest
// covered frame (earlier on ties) for the rest.
inline std::vector<ScoreMap> cube_score_map(std::span<const std::vector<double>> window_grids,
                                            const WindowGeometry& geometry,
                                            std::size_t frame_count) {
  const std::size_t cells = kGridCols * kGridRows;
  for (const auto& g : window_grids)
    require(g.size() == cells, ErrorKind::argument, "cube_score_map: grid must have 192 cells");
  std::vector<std::ptrdiff_t> source(frame_count, -1);
  std::ptrdiff_t previous = -1;
  for (std::size_t f = 0; f < frame_count; ++f) {
    if (geometry.covered(f, window_grids.size())) previous = static_cast<std::ptrdiff_t>(f);
    source[f] = previous;
  }
  require(previous >= 0, ErrorKind::stream_too_short, "cube_score_map: no window covers any frame");
  std::ptrdiff_t following = -1;
  for (std::size_t r = frame_count; r-- > 0;) {
    if (geometry.covered(r, window_grids.size())) following = static_cast<std::ptrdiff_t>(r);
    const auto f = static_cast<std::ptrdiff_t>(r);
    if (source[r] == f) continue;
    if (source[r] < 0 || (following >= 0 && following - f < f - source[r])) source[r] = following;
  }

  std::vector<ScoreMap> maps(frame_count);
  for (std::size_t f = 0; f < frame_count; ++f) {
    const auto [first, last] = geometry.covering(static_cast<std::size_t>(source[f]),
                                                 window_grids.size());
    maps[f].frame = f;
    maps[f].cells.assign(cells, 0.0);
    for (std::size_t c = 0; c < cells; ++c) {
      double sum = 0.0;
      for (std::size_t j = first; j < last; ++j) sum += window_grids[j][c];
      maps[f].cells[c] = sum / static_cast<double>(last - first);
    }
  }
  return maps;
}

// Score maps of a detector run; channels are averaged per cell.
inline std::vector<ScoreMap> detector_score_maps(std::span<const WindowScore> windows,
                                                 std::size_t frame_count,
                                                 const DetectorConfig& config) {
  std::vector<std::vector<double>> grids;
  grids.reserve(windows.size());
  for (const auto& w : windows) {
    std::vector<double> fused(kGridCols * kGridRows, 0.0);
    std::size_t used = 0;
    for (std::size_t c = 0; c < kChannelCount; ++c) {
      if (!config.uses(static_cast<Channel>(c))) continue;
      std::vector<std::optional<double>> cubes;
      if (static_cast<Channel>(c) == Channel::motion) {
        require(w.activeCells.size() == kGridCols * kGridRows, ErrorKind::configuration,
                "score maps need cube provenance; rerun the detector with map output enabled");
        cubes.resize(w.activeCells.size());
        for (std::size_t cell = 0; cell < cubes.size(); ++cell)
          if (w.activeCells[cell])
            cubes[cell] = w.bins[c][bin_of_patch(cell % kGridCols, cell / kGridCols, config.bins)];
      }
      const auto grid = window_cell_grid(w.bins[c], cubes, config.bins);
      for (std::size_t cell = 0; cell < grid.size(); ++cell) fused[cell] += grid[cell];
      ++used;
    }
    for (double& v : fused) v /= static_cast<double>(used);
    grids.push_back(std::move(fused));
  }
  return cube_score_map(grids, WindowGeometry{config.w, config.stride}, frame_count);
}

namespace detail {

inline std::vector<double> nearest_resample(std::span<const double> src, std::size_t sw,
                                            std::size_t sh, std::size_t dw, std::size_t dh) {
  std::vector<double> out(dw * dh);
  for (std::size_t y = 0; y < dh; ++y) {
    const std::size_t sy = std::min(y * sh / dh, sh - 1);
    for (std::size_t x = 0; x < dw; ++x) out[y * dw + x] = src[sy * sw + std::min(x * sw / dw, sw - 1)];
  }
  return out;
}

}  // namespace detail

// Grid -> 160x120 by nearest neighbour over patch extents -> spatial Gaussian
// (sigma in working-resolution pixels) -> nearest-neighbour rescale to the
// requested size.
inline std::vector<double> upsample_map(const ScoreMap& map, double sigma_px,
                                        std::size_t out_width = kWorkWidth,
                                        std::size_t out_height = kWorkHeight) {
  require(map.cells.size() == map.gridWidth * map.gridHeight, ErrorKind::argument,
          "upsample_map: malformed map");
  require(out_width > 0 && out_height > 0, ErrorKind::argument, "upsample_map: zero-size target");
  auto work = detail::nearest_resample(map.cells, map.gridWidth, map.gridHeight, kWorkWidth,
                                       kWorkHeight);
  if (sigma_px > 0.0) work = smooth_2d(work, kWorkWidth, kWorkHeight, sigma_px);
  if (out_width == kWorkWidth && out_height == kWorkHeight) return work;
  return detail::nearest_resample(work, kWorkWidth, kWorkHeight, out_width, out_height);
}

// Lowest threshold at which a frame counts as detected: for an abnormal frame
// the value of the (floor(0.4 G) + 1)-th highest map pixel inside its mask of
// G pixels ("more than 40%"), for a normal frame its highest map pixel.
inline double pixel_critical_score(std::span<const double> pixels, const Mask& mask) {
  require(pixels.size() == mask.pixels.size(), ErrorKind::alignment,
          "map and mask resolutions differ");
  const std::size_t anomalous = mask.anomalous_count();
  if (anomalous == 0) return *std::max_element(pixels.begin(), pixels.end());
  std::vector<double> inside;
  inside.reserve(anomalous);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    if (mask.pixels[i]) inside.push_back(pixels[i]);
  const std::size_t needed = (4 * anomalous) / 10 + 1;
  std::nth_element(inside.begin(), inside.begin() + static_cast<std::ptrdiff_t>(needed - 1),
                   inside.end(), std::greater<>());
  return inside[needed - 1];
}

inline RocReport pixel_auc(std::span<const ScoreMap> maps, const GroundTruth& gt,
                           double sigma_px = 10.0) {
  require(gt.has_masks(), ErrorKind::capability,
          "pixel-level evaluation requires per-frame ground-truth masks");
  const auto& masks = *gt.pixelMasks;
  require(maps.size() == masks.size(), ErrorKind::alignment,
          "map count " + std::to_string(maps.size()) + " does not match mask count " +
              std::to_string(masks.size()));
  std::vector<double> critical(maps.size());
  for (std::size_t f = 0; f < maps.size(); ++f) {
    const auto pixels = upsample_map(maps[f], sigma_px, masks[f].width, masks[f].height);
    critical[f] = pixel_critical_score(pixels, masks[f]);
  }
  return roc_curve(critical, labels_from_masks(masks), EvalLevel::pixel);
}

// ---------------------------------------------------------------------------
// Map files: "UMM1", u32 count, gridWidth, gridHeight, then f32 cells
// (little-endian, frame-major, row-major).

inline void write_score_maps(const std::filesystem::path& path, std::span<const ScoreMap> maps) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::format, "cannot write " + path.string());
  const std::size_t gw = maps.empty() ? kGridCols : maps.front().gridWidth;
  const std::size_t gh = maps.empty() ? kGridRows : maps.front().gridHeight;
  out.write("UMM1", 4);
  detail::write_u32_le(out, static_cast<std::uint32_t>(maps.size()));
  detail::write_u32_le(out, static_cast<std::uint32_t>(gw));
  detail::write_u32_le(out, static_cast<std::uint32_t>(gh));
  for (const auto& m : maps)
    for (double v : m.cells)
      detail::write_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline std::vector<ScoreMap> read_score_maps(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  require(bytes.size() >= 16, ErrorKind::truncation,
          path.string() + ": header truncated at byte offset " + std::to_string(bytes.size()));
  require(std::memcmp(bytes.data(), "UMM1", 4) == 0, ErrorKind::format,
          path.string() + ": bad magic at byte offset 0 (expected UMM1)");
  const std::size_t count = detail::read_u32_le(bytes.data() + 4);
  const std::size_t gw = detail::read_u32_le(bytes.data() + 8);
  const std::size_t gh = detail::read_u32_le(bytes.data() + 12);
  const std::size_t need = 16 + count * gw * gh * 4;
  require(bytes.size() == need, ErrorKind::truncation,
          path.string() + ": file is " + std::to_string(bytes.size()) +
              " bytes but header declares " + std::to_string(need));
  std::vector<ScoreMap> maps(count);
  const std::uint8_t* p = bytes.data() + 16;
  for (std::size_t f = 0; f < count; ++f) {
    maps[f] = ScoreMap{f, gw, gh, std::vector<double>(gw * gh)};
    for (auto& v : maps[f].cells) {
      v = detail::read_f32_le(p);
      p += 4;
    }
  }
  return maps;
}

}  // namespace unmask
