#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "unmask/error.hpp"

namespace unmask {

// Unnormalized Gaussian taps for offsets -radius..radius, radius = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  require(sigma >= 0.0 && std::isfinite(sigma), ErrorKind::argument,
          "smoothing sigma must be a finite value >= 0");
  if (sigma == 0.0) return {1.0};
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t d = -radius; d <= radius; ++d)
    taps[static_cast<std::size_t>(d + radius)] =
        std::exp(-static_cast<double>(d * d) / (2.0 * sigma * sigma));
  return taps;
}

// Truncated convolution at one position: taps falling outside the sequence
// are dropped and the remaining weights renormalized.
inline double smooth_at(std::span<const double> series, std::size_t index,
                        std::span<const double> taps) {
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const auto n = static_cast<std::ptrdiff_t>(series.size());
  const auto i = static_cast<std::ptrdiff_t>(index);
  double acc = 0.0;
  double norm = 0.0;
  const auto lo = std::max<std::ptrdiff_t>(0, i - radius);
  const auto hi = std::min<std::ptrdiff_t>(n - 1, i + radius);
  for (std::ptrdiff_t j = lo; j <= hi; ++j) {
    const double wgt = taps[static_cast<std::size_t>(j - i + radius)];
    acc += wgt * series[static_cast<std::size_t>(j)];
    norm += wgt;
  }
  return std::clamp(acc / norm, 0.0, 1.0);
}

inline std::vector<double> smooth(std::span<const double> series, double sigma) {
  const auto taps = gaussian_kernel(sigma);
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = smooth_at(series, i, taps);
  return out;
}

// Separable 2D version of smooth() over a row-major width x height grid.
inline std::vector<double> smooth_2d(std::span<const double> grid, std::size_t width,
                                     std::size_t height, double sigma) {
  require(grid.size() == width * height, ErrorKind::argument, "smooth_2d: size mismatch");
  std::vector<double> rows(grid.size());
  std::vector<double> line;
  for (std::size_t y = 0; y < height; ++y) {
    const auto r = smooth(grid.subspan(y * width, width), sigma);
    std::copy(r.begin(), r.end(), rows.begin() + static_cast<std::ptrdiff_t>(y * width));
  }
  std::vector<double> out(grid.size());
  line.resize(height);
  for (std::size_t x = 0; x < width; ++x) {
    for (std::size_t y = 0; y < height; ++y) line[y] = rows[y * width + x];
    const auto c = smooth(line, sigma);
    for (std::size_t y = 0; y < height; ++y) out[y * width + x] = c[y];
  }
  return out;
}

}  // namespace unmask
