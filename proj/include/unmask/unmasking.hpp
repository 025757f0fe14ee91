#pragma once

// Unmasking: repeatedly fit a linear classifier separating the two halves of
// a window, record its training accuracy and strip the features it leaned
// on most. Accuracy that survives many eliminations marks an abnormal event.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "unmask/error.hpp"
#include "unmask/logistic.hpp"

namespace unmask {

inline constexpr double kChanceAccuracy = 0.5;

struct UnmaskOptions {
  std::size_t loops = 10;           // k
  std::size_t eliminatePerLoop = 50;  // m
  TrainOptions train{};
};

struct UnmaskingProfile {
  std::vector<double> accuracies;         // one per loop
  std::vector<std::size_t> activeSizes;   // active features while training each loop
  std::size_t loops = 0;
  std::size_t eliminatedPerLoop = 0;
  bool degenerate = false;                // a class had fewer than two examples
};

struct Elimination {
  std::vector<std::size_t> remaining;  // ascending
  std::vector<std::size_t> removed;    // in selection order
  bool exhausted = false;
};

// Drops m/2 of the largest and m/2 of the most negative weights. When one
// sign runs short the quota is topped up by |weight|; ties favour the lower
// feature index throughout.
inline Elimination eliminate_features(std::span<const double> weights,
                                      std::span<const std::size_t> active_set, std::size_t m) {
  require(m >= 2 && m % 2 == 0, ErrorKind::argument,
          "eliminate_features: m must be even and >= 2, got " + std::to_string(m));
  Elimination out;
  if (active_set.size() <= m) {
    out.removed.assign(active_set.begin(), active_set.end());
    out.exhausted = true;
    return out;
  }

  std::vector<std::size_t> positive, negative;
  for (auto f : active_set) {
    require(f < weights.size(), ErrorKind::argument, "eliminate_features: feature out of range");
    if (weights[f] > 0.0) positive.push_back(f);
    if (weights[f] < 0.0) negative.push_back(f);
  }
  std::sort(positive.begin(), positive.end(), [&](std::size_t a, std::size_t b) {
    return weights[a] != weights[b] ? weights[a] > weights[b] : a < b;
  });
  std::sort(negative.begin(), negative.end(), [&](std::size_t a, std::size_t b) {
    return weights[a] != weights[b] ? weights[a] < weights[b] : a < b;
  });

  const std::size_t half = m / 2;
  std::vector<char> taken(weights.size(), 0);
  for (std::size_t i = 0; i < std::min(half, positive.size()); ++i) {
    out.removed.push_back(positive[i]);
    taken[positive[i]] = 1;
  }
  for (std::size_t i = 0; i < std::min(half, negative.size()); ++i) {
    out.removed.push_back(negative[i]);
    taken[negative[i]] = 1;
  }
  if (out.removed.size() < m) {
    std::vector<std::size_t> rest;
    for (auto f : active_set)
      if (!taken[f]) rest.push_back(f);
    std::sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
      const double wa = std::abs(weights[a]);
      const double wb = std::abs(weights[b]);
      return wa != wb ? wa > wb : a < b;
    });
    for (std::size_t i = 0; out.removed.size() < m; ++i) {
      out.removed.push_back(rest[i]);
      taken[rest[i]] = 1;
    }
  }
  for (auto f : active_set)
    if (!taken[f]) out.remaining.push_back(f);
  return out;
}

inline Elimination eliminate_features(const ClassifierState& state, std::size_t m) {
  return eliminate_features(state.weights, state.activeSet, m);
}

inline bool is_degenerate(const WindowBatch& batch) {
  return batch.count(0) < 2 || batch.count(1) < 2;
}

inline UnmaskingProfile unmask(const WindowBatch& batch, const UnmaskOptions& options = {}) {
  require(options.loops >= 1, ErrorKind::argument, "unmask: k must be >= 1");
  require(options.eliminatePerLoop >= 2 && options.eliminatePerLoop % 2 == 0,
          ErrorKind::argument, "unmask: m must be even and >= 2");

  UnmaskingProfile profile;
  profile.loops = options.loops;
  profile.eliminatedPerLoop = options.eliminatePerLoop;
  profile.degenerate = is_degenerate(batch);

  auto active = full_active_set(batch.dims());
  for (std::size_t loop = 0; loop < options.loops; ++loop) {
    profile.activeSizes.push_back(active.size());
    if (profile.degenerate || active.empty()) {
      profile.accuracies.push_back(kChanceAccuracy);
      // Keep the nominal active-set arithmetic even when nothing is trained.
      active.resize(active.size() > options.eliminatePerLoop
                        ? active.size() - options.eliminatePerLoop
                        : 0);
      continue;
    }
    const auto fit = train_logistic(batch, active, options.train);
    profile.accuracies.push_back(fit.trainingAccuracy);
    active = eliminate_features(fit.state, options.eliminatePerLoop).remaining;
  }
  return profile;
}

// Anomaly score of a window half: mean accuracy over the loops.
inline double score(const UnmaskingProfile& profile) {
  if (profile.accuracies.empty()) return kChanceAccuracy;
  return std::accumulate(profile.accuracies.begin(), profile.accuracies.end(), 0.0) /
         static_cast<double>(profile.accuracies.size());
}

}  // namespace unmask
