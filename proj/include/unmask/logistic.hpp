#pragma once

// L2-regularized logistic regression trained by deterministic full-batch
// accelerated gradient descent.
//
// Objective over the active features A:
//   mean_i log(1 + exp(-(2y_i - 1)(w_A . x_iA + b))) + lambda/2 * |w_A|^2
// The bias is neither regularized nor ever eliminated.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unmask/error.hpp"

namespace unmask {

enum class Channel : std::uint8_t { motion = 0, appearance = 1 };

inline constexpr std::size_t kChannelCount = 2;

inline const char* to_string(Channel c) { return c == Channel::motion ? "motion" : "appearance"; }

// Labeled examples of one (window, bin, channel) triple, stored row-major.
class WindowBatch {
 public:
  WindowBatch() = default;
  explicit WindowBatch(std::size_t dims) : dims_(dims) {}

  std::size_t windowId = 0;
  std::size_t bin = 0;
  Channel channel = Channel::motion;

  std::size_t dims() const { return dims_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

  void add(std::span<const double> values, std::uint8_t label) {
    require(values.size() == dims_, ErrorKind::argument,
            "example has " + std::to_string(values.size()) + " values, batch expects " +
                std::to_string(dims_));
    require(label <= 1, ErrorKind::argument, "labels must be 0 or 1");
    values_.insert(values_.end(), values.begin(), values.end());
    labels_.push_back(label);
  }

  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * dims_, dims_};
  }
  std::uint8_t label(std::size_t i) const { return labels_[i]; }
  std::span<const std::uint8_t> labels() const { return labels_; }

  std::size_t count(std::uint8_t label) const {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
  }

  // Swap normal/abnormal for every example.
  WindowBatch with_flipped_labels() const {
    WindowBatch copy = *this;
    for (auto& l : copy.labels_) l = static_cast<std::uint8_t>(1 - l);
    return copy;
  }

 private:
  std::size_t dims_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> labels_;
};

struct ClassifierState {
  std::vector<double> weights;          // full dimensionality, zero outside activeSet
  double biasTerm = 0.0;
  std::vector<std::size_t> activeSet;   // ascending feature indices
};

struct TrainOptions {
  double lambda = 0.1;
  double tolerance = 1e-6;
  std::size_t maxIterations = 500;
};

struct TrainResult {
  ClassifierState state;
  double trainingAccuracy = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

class DegenerateBatch : public Error {
 public:
  explicit DegenerateBatch(const std::string& what) : Error(ErrorKind::data, what) {}
};

inline std::vector<std::size_t> full_active_set(std::size_t dims) {
  std::vector<std::size_t> all(dims);
  for (std::size_t i = 0; i < dims; ++i) all[i] = i;
  return all;
}

namespace detail {

// Stable logistic function.
inline double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

}  // namespace detail

inline TrainResult train_logistic(const WindowBatch& batch, std::span<const std::size_t> active_set,
                                  const TrainOptions& options = {}) {
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  require(!active_set.empty(), ErrorKind::argument, "train_logistic: empty active set");
  require(options.lambda >= 0.0, ErrorKind::argument, "train_logistic: negative lambda");
  if (batch.count(0) == 0 || batch.count(1) == 0) {
    throw DegenerateBatch("train_logistic: batch holds a single class");
  }

  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto a = static_cast<Eigen::Index>(active_set.size());
  RowMatrix x(n, a);
  Eigen::VectorXd y(n);
  double squared_norms = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = batch.row(static_cast<std::size_t>(i));
    for (Eigen::Index j = 0; j < a; ++j) {
      require(active_set[static_cast<std::size_t>(j)] < batch.dims(), ErrorKind::argument,
              "train_logistic: active feature out of range");
      x(i, j) = row[active_set[static_cast<std::size_t>(j)]];
    }
    y(i) = batch.label(static_cast<std::size_t>(i));
    squared_norms += x.row(i).squaredNorm() + 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  // Trace bound on the Hessian (sigmoid' <= 1/4).
  const double lipschitz = 0.25 * squared_norms * inv_n + options.lambda;
  const double step = 1.0 / lipschitz;

  Eigen::VectorXd w = Eigen::VectorXd::Zero(a);
  double b = 0.0;
  Eigen::VectorXd yw = w;  // extrapolated point
  double yb = 0.0;
  Eigen::VectorXd scores(n), residual(n), grad_w(a);
  double momentum = 1.0;

  TrainResult result;
  for (std::size_t it = 0; it < options.maxIterations; ++it) {
    scores.noalias() = x * yw;
    for (Eigen::Index i = 0; i < n; ++i) residual(i) = detail::sigmoid(scores(i) + yb) - y(i);
    grad_w.noalias() = x.transpose() * residual;
    grad_w *= inv_n;
    grad_w += options.lambda * yw;
    const double grad_b = residual.sum() * inv_n;

    result.iterations = it + 1;
    const double grad_norm = std::max(grad_w.lpNorm<Eigen::Infinity>(), std::abs(grad_b));
    if (grad_norm < options.tolerance) {
      w = yw;
      b = yb;
      result.converged = true;
      break;
    }

    Eigen::VectorXd next_w = yw - step * grad_w;
    const double next_b = yb - step * grad_b;
    // Adaptive restart when the step points against the momentum direction.
    if (grad_w.dot(next_w - w) + grad_b * (next_b - b) > 0.0) momentum = 1.0;
    const double next_momentum = (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum)) / 2.0;
    const double beta = (momentum - 1.0) / next_momentum;
    yw = next_w + beta * (next_w - w);
    yb = next_b + beta * (next_b - b);
    w = std::move(next_w);
    b = next_b;
    momentum = next_momentum;
  }

  scores.noalias() = x * w;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int predicted = scores(i) + b > 0.0 ? 1 : 0;  // score 0 predicts normal
    if (predicted == static_cast<int>(y(i))) ++correct;
  }
  result.trainingAccuracy = static_cast<double>(correct) * inv_n;

  result.state.weights.assign(batch.dims(), 0.0);
  for (Eigen::Index j = 0; j < a; ++j)
    result.state.weights[active_set[static_cast<std::size_t>(j)]] = w(j);
  result.state.biasTerm = b;
  result.state.activeSet.assign(active_set.begin(), active_set.end());
  return result;
}

}  // namespace unmask
