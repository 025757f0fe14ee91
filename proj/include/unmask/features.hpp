#pragma once

// Motion descriptors (per-voxel 3D gradient magnitudes over 10x10x5 cubes)
// and appearance descriptors (binned conv activation maps).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "unmask/error.hpp"
#include "unmask/ingest.hpp"

namespace unmask {

inline constexpr std::size_t kWorkWidth = 160;
inline constexpr std::size_t kWorkHeight = 120;
inline constexpr std::size_t kPatchSize = 10;
inline constexpr std::size_t kSlotDepth = 5;
inline constexpr std::size_t kGridCols = kWorkWidth / kPatchSize;   // 16
inline constexpr std::size_t kGridRows = kWorkHeight / kPatchSize;  // 12
inline constexpr std::size_t kCubeValues = kPatchSize * kPatchSize * kSlotDepth;
inline constexpr double kStaticGradient = 1e-4;

inline constexpr std::size_t kActivationChannels = 256;
inline constexpr std::size_t kActivationSide = 13;

using CubeValues = std::array<double, kCubeValues>;

// Voxel (x, y, t) of a cube lives at t*100 + y*10 + x.
constexpr std::size_t voxel_index(std::size_t x, std::size_t y, std::size_t t) {
  return (t * kPatchSize + y) * kPatchSize + x;
}

struct BinLayout {
  std::size_t rows = 2;
  std::size_t cols = 2;

  std::size_t count() const { return rows * cols; }

  void validate() const {
    require(rows >= 1 && cols >= 1, ErrorKind::argument, "bin layout must be at least 1x1");
    require(kGridRows % rows == 0 && kGridCols % cols == 0, ErrorKind::argument,
            "bin layout " + to_string() + " does not tile the 16x12 patch grid");
  }

  std::string to_string() const { return std::to_string(rows) + "x" + std::to_string(cols); }
};

inline BinLayout parse_bin_layout(const std::string& text) {
  const auto x = text.find_first_of("xX");
  require(x != std::string::npos, ErrorKind::argument, "bins must look like RxC, got '" + text + "'");
  BinLayout layout;
  try {
    layout.rows = std::stoul(text.substr(0, x));
    layout.cols = std::stoul(text.substr(x + 1));
  } catch (const std::exception&) {
    fail(ErrorKind::argument, "bins must look like RxC, got '" + text + "'");
  }
  layout.validate();
  return layout;
}

// Pixel extent of one motion bin at working resolution.
struct BinExtent {
  std::size_t x0, y0, x1, y1;  // half-open
};

inline BinExtent motion_bin_extent(std::size_t bin, const BinLayout& layout) {
  const std::size_t w = kWorkWidth / layout.cols;
  const std::size_t h = kWorkHeight / layout.rows;
  const std::size_t r = bin / layout.cols;
  const std::size_t c = bin % layout.cols;
  return {c * w, r * h, (c + 1) * w, (r + 1) * h};
}

inline std::size_t bin_of_patch(std::size_t grid_x, std::size_t grid_y,
                                const BinLayout& layout = {}) {
  require(grid_x < kGridCols && grid_y < kGridRows, ErrorKind::argument,
          "patch (" + std::to_string(grid_x) + "," + std::to_string(grid_y) +
              ") outside the 16x12 grid");
  return (grid_y * layout.rows / kGridRows) * layout.cols + grid_x * layout.cols / kGridCols;
}

struct CubeFeature {
  std::size_t frameStart = 0;
  std::size_t gridX = 0;
  std::size_t gridY = 0;
  std::size_t bin = 0;
  CubeValues values{};
};

struct AppearanceFeature {
  std::size_t frame = 0;
  std::size_t bin = 0;
  std::vector<double> values;
};

// Returns the norm that was divided out (0 leaves the vector untouched).
inline double l2_normalize(std::span<double> v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  const double norm = std::sqrt(sum);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
  return norm;
}

namespace detail {

// Derivative along one axis of the block: central differences inside,
// one-sided differences on the two faces.
inline double axis_derivative(const CubeValues& v, std::size_t pos, std::size_t extent,
                              std::size_t stride, std::size_t flat) {
  if (pos == 0) return v[flat + stride] - v[flat];
  if (pos == extent - 1) return v[flat] - v[flat - stride];
  return (v[flat + stride] - v[flat - stride]) / 2.0;
}

}  // namespace detail

struct VoxelGradient {
  double gx, gy, gt;
};

inline VoxelGradient voxel_gradient(const CubeValues& voxels, std::size_t x, std::size_t y,
                                    std::size_t t) {
  const std::size_t flat = voxel_index(x, y, t);
  return {detail::axis_derivative(voxels, x, kPatchSize, 1, flat),
          detail::axis_derivative(voxels, y, kPatchSize, kPatchSize, flat),
          detail::axis_derivative(voxels, t, kSlotDepth, kPatchSize * kPatchSize, flat)};
}

// Per-voxel gradient magnitude, 500 values, before normalization.
inline CubeValues gradient_feature(const CubeValues& voxels) {
  CubeValues out{};
  for (std::size_t t = 0; t < kSlotDepth; ++t)
    for (std::size_t y = 0; y < kPatchSize; ++y)
      for (std::size_t x = 0; x < kPatchSize; ++x) {
        const auto g = voxel_gradient(voxels, x, y, t);
        out[voxel_index(x, y, t)] = std::sqrt(g.gx * g.gx + g.gy * g.gy + g.gt * g.gt);
      }
  return out;
}

// A cube whose intensities never change over time carries no motion.
inline bool is_static_cube(const CubeValues& voxels) {
  for (std::size_t t = 0; t < kSlotDepth; ++t)
    for (std::size_t y = 0; y < kPatchSize; ++y)
      for (std::size_t x = 0; x < kPatchSize; ++x) {
        const std::size_t flat = voxel_index(x, y, t);
        const double gt =
            detail::axis_derivative(voxels, t, kSlotDepth, kPatchSize * kPatchSize, flat);
        if (std::abs(gt) >= kStaticGradient) return false;
      }
  return true;
}

inline CubeValues gather_cube(std::span<const Frame> frames, std::size_t grid_x,
                              std::size_t grid_y) {
  CubeValues block{};
  for (std::size_t t = 0; t < kSlotDepth; ++t) {
    const auto& f = frames[t];
    for (std::size_t y = 0; y < kPatchSize; ++y) {
      const float* row = f.pixels.data() + (grid_y * kPatchSize + y) * f.width + grid_x * kPatchSize;
      for (std::size_t x = 0; x < kPatchSize; ++x) block[voxel_index(x, y, t)] = row[x];
    }
  }
  return block;
}

inline void validate_slot(std::span<const Frame> frames) {
  require(frames.size() == kSlotDepth, ErrorKind::argument,
          "extract_cubes needs exactly 5 frames, got " + std::to_string(frames.size()));
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto& f = frames[t];
    require(f.width == kWorkWidth && f.height == kWorkHeight &&
                f.pixels.size() == kWorkWidth * kWorkHeight,
            ErrorKind::argument,
            "extract_cubes needs 160x120 frames, got " + std::to_string(f.width) + "x" +
                std::to_string(f.height));
    require(t == 0 || f.index == frames[t - 1].index + 1, ErrorKind::argument,
            "extract_cubes needs consecutive frame indices");
  }
}

// Non-static cubes of one 5-frame slot, ordered by (gridY, gridX).
inline std::vector<CubeFeature> extract_cubes(std::span<const Frame> frames,
                                              const BinLayout& layout = {}) {
  validate_slot(frames);
  std::vector<CubeFeature> cubes;
  for (std::size_t gy = 0; gy < kGridRows; ++gy) {
    for (std::size_t gx = 0; gx < kGridCols; ++gx) {
      const auto block = gather_cube(frames, gx, gy);
      if (is_static_cube(block)) continue;
      CubeFeature cube{frames.front().index, gx, gy, bin_of_patch(gx, gy, layout),
                       gradient_feature(block)};
      if (l2_normalize(cube.values) == 0.0) continue;
      cubes.push_back(cube);
    }
  }
  return cubes;
}

// ---------------------------------------------------------------------------
// Appearance

struct ActivationShape {
  std::size_t channels = kActivationChannels;
  std::size_t height = kActivationSide;
  std::size_t width = kActivationSide;
};

// Square windows over the activation map; adjacent windows share one
// row/column, so 13 splits into two windows of 7 (0-6 and 6-12).
struct AppearanceWindow {
  std::size_t row0, col0, rows, cols;
};

inline std::vector<AppearanceWindow> appearance_windows(const ActivationShape& shape,
                                                        const BinLayout& layout) {
  require((shape.height - 1) % layout.rows == 0 && (shape.width - 1) % layout.cols == 0,
          ErrorKind::argument,
          "bin layout " + layout.to_string() + " cannot split a " + std::to_string(shape.height) +
              "x" + std::to_string(shape.width) + " activation map with shared borders");
  const std::size_t step_r = (shape.height - 1) / layout.rows;
  const std::size_t step_c = (shape.width - 1) / layout.cols;
  std::vector<AppearanceWindow> windows;
  for (std::size_t r = 0; r < layout.rows; ++r)
    for (std::size_t c = 0; c < layout.cols; ++c)
      windows.push_back({r * step_r, c * step_c, step_r + 1, step_c + 1});
  return windows;
}

// One L2-normalized vector per bin: each channel's window flattened row-major,
// channel blocks concatenated in channel order.
inline std::vector<AppearanceFeature> bin_activations(const ActivationFrame& act,
                                                      const BinLayout& layout = {},
                                                      const ActivationShape& expected = {}) {
  require(act.channels == expected.channels && act.height == expected.height &&
              act.width == expected.width,
          ErrorKind::argument,
          "activation tensor is " + std::to_string(act.channels) + "x" +
              std::to_string(act.height) + "x" + std::to_string(act.width) + ", expected " +
              std::to_string(expected.channels) + "x" + std::to_string(expected.height) + "x" +
              std::to_string(expected.width));
  require(act.values.size() == act.channels * act.height * act.width, ErrorKind::argument,
          "activation tensor size does not match its dimensions");
  const auto windows = appearance_windows(expected, layout);
  std::vector<AppearanceFeature> out;
  out.reserve(windows.size());
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const auto& win = windows[b];
    AppearanceFeature feature{act.index, b, {}};
    feature.values.reserve(act.channels * win.rows * win.cols);
    for (std::size_t c = 0; c < act.channels; ++c)
      for (std::size_t y = 0; y < win.rows; ++y)
        for (std::size_t x = 0; x < win.cols; ++x)
          feature.values.push_back(act.at(c, win.row0 + y, win.col0 + x));
    l2_normalize(feature.values);
    out.push_back(std::move(feature));
  }
  return out;
}

// Debug dump: frameStart,gridX,gridY,bin,v0..v499
inline void write_cubes_csv(std::ostream& out, std::span<const CubeFeature> cubes) {
  out << "frameStart,gridX,gridY,bin";
  for (std::size_t i = 0; i < kCubeValues; ++i) out << ",v" << i;
  out << '\n';
  out.precision(17);
  for (const auto& c : cubes) {
    out << c.frameStart << ',' << c.gridX << ',' << c.gridY << ',' << c.bin;
    for (double v : c.values) out << ',' << v;
    out << '\n';
  }
}

}  // namespace unmask
