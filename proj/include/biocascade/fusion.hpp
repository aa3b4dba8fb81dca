// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
//
// Feature-level fusion operators that merge two templates into one, plus the
// hierarchical extension to groups of 2^k templates.
#pragma once

#include <span>

#include "biocascade/core.hpp"

namespace biocascade {

// Per-position arithmetic mean over a training split.
TrainingStats compute_training_stats(const std::vector<EmbeddingVector>& train);

// Fuses two templates of equal dimension.
//
//   avg1   elementwise mean
//   avg2   elementwise mean weighted by each element's distance to mu
//          (not renormalized by the weight sum)
//   dist1  per position, the element farther from mu (ties keep a)
//   dist2  per position, the element with the higher distance rank within
//          its own vector (ranks sort ascending by |x_i - mu_i|, ties by
//          original index; rank ties keep a)
//   idx1   first ceil(dim/2) positions from a, remainder from b
//   idx2   odd positions (1-based) from a, even from b
//
// stats must be non-null for avg2/dist1/dist2.
EmbeddingVector fuse(const EmbeddingVector& a, const EmbeddingVector& b, FusionMethodId method,
                     const TrainingStats* stats = nullptr);

// Fuses 2^k templates by repeated binary fusion over balanced halves, in
// member order. For avg1 this equals the flat mean of all members.
EmbeddingVector fuse_group(std::span<const EmbeddingVector> members, FusionMethodId method,
                           const TrainingStats* stats = nullptr);

}  // namespace biocascade
