// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
#include "biocascade/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace biocascade {

TrainingStats compute_training_stats(const std::vector<EmbeddingVector>& train) {
  if (train.empty()) throw DataError("training set is empty");
  const std::size_t dim = train.front().size();
  TrainingStats stats;
  stats.mu.assign(dim, 0.0);
  for (const auto& v : train) {
    if (v.size() != dim) throw std::invalid_argument("dimension mismatch in training set");
    for (std::size_t i = 0; i < dim; ++i) stats.mu[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(train.size());
  for (double& m : stats.mu) m *= inv;
  stats.source_count = train.size();
  return stats;
}

namespace {

// 1-based rank of each element when the vector's own elements are sorted
// ascending by distance to mu; ties keep original index order.
std::vector<std::size_t> distance_ranks(const EmbeddingVector& v, const EmbeddingVector& mu) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(v[a] - mu[a]) < std::abs(v[b] - mu[b]);
  });
  std::vector<std::size_t> rank(v.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) rank[order[pos]] = pos + 1;
  return rank;
}

const TrainingStats& require_stats(const TrainingStats* stats, std::size_t dim) {
  if (stats == nullptr) throw std::invalid_argument("fusion method requires training stats");
  if (stats->mu.size() != dim) throw std::invalid_argument("training stats dimension mismatch");
  return *stats;
}

}  // namespace

EmbeddingVector fuse(const EmbeddingVector& a, const EmbeddingVector& b, FusionMethodId method,
                     const TrainingStats* stats) {
  if (a.size() != b.size()) throw std::invalid_argument("dimension mismatch in fuse");
  const std::size_t dim = a.size();
  EmbeddingVector out(dim);

  switch (method) {
    case FusionMethodId::kAverage1:
      for (std::size_t i = 0; i < dim; ++i) out[i] = 0.5 * (a[i] + b[i]);
      break;

    case FusionMethodId::kAverage2: {
      const auto& s = require_stats(stats, dim);
      for (std::size_t i = 0; i < dim; ++i) {
        out[i] = 0.5 * (a[i] * std::abs(a[i] - s.mu[i]) + b[i] * std::abs(b[i] - s.mu[i]));
      }
      break;
    }

    case FusionMethodId::kDistance1: {
      const auto& s = require_stats(stats, dim);
      for (std::size_t i = 0; i < dim; ++i) {
        out[i] = std::abs(a[i] - s.mu[i]) >= std::abs(b[i] - s.mu[i]) ? a[i] : b[i];
      }
      break;
    }

    case FusionMethodId::kDistance2: {
      const auto& s = require_stats(stats, dim);
      const auto rank_a = distance_ranks(a, s.mu);
      const auto rank_b = distance_ranks(b, s.mu);
      for (std::size_t i = 0; i < dim; ++i) {
        out[i] = rank_a[i] >= rank_b[i] ? a[i] : b[i];
      }
      break;
    }

    case FusionMethodId::kIndex1: {
      const std::size_t half = (dim + 1) / 2;
      for (std::size_t i = 0; i < dim; ++i) out[i] = i < half ? a[i] : b[i];
      break;
    }

    case FusionMethodId::kIndex2:
      for (std::size_t i = 0; i < dim; ++i) out[i] = (i % 2 == 0) ? a[i] : b[i];
      break;
  }
  return out;
}

namespace {

EmbeddingVector fuse_group_rec(std::span<const EmbeddingVector> members, FusionMethodId method,
                               const TrainingStats* stats) {
  if (members.size() == 1) return members[0];
  const std::size_t half = members.size() / 2;
  EmbeddingVector left = fuse_group_rec(members.first(half), method, stats);
  EmbeddingVector right = fuse_group_rec(members.subspan(half), method, stats);
  return fuse(left, right, method, stats);
}

}  // namespace

EmbeddingVector fuse_group(std::span<const EmbeddingVector> members, FusionMethodId method,
                           const TrainingStats* stats) {
  if (members.empty() || !is_power_of_two(members.size())) {
    throw std::invalid_argument("group size must be a power of two");
  }
  return fuse_group_rec(members, method, stats);
}

}  // namespace biocascade
