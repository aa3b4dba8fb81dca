// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
//
// Pairing of reference templates for fusion: cost matrices with a forbidden
// diagonal, a minimum-cost assignment solver, extraction of disjoint pairs
// from the assignment permutation, and the iterative procedure that grows
// pairs into groups of n1 subjects.
#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <utility>

#include "biocascade/core.hpp"

namespace biocascade {

// Square pairing-cost matrix. The diagonal carries the largest finite double
// as a sentinel so that no subject can be assigned to itself.
struct CostMatrix {
  static constexpr double kDiagonalSentinel = std::numeric_limits<double>::max();

  std::size_t size = 0;
  std::vector<double> costs;  // row-major, size x size

  explicit CostMatrix(std::size_t n)
      : size(n), costs(n * n, 0.0) {
    for (std::size_t i = 0; i < n; ++i) costs[i * n + i] = kDiagonalSentinel;
  }

  double at(std::size_t i, std::size_t j) const { return costs[i * size + j]; }
  void set(std::size_t i, std::size_t j, double v) { costs[i * size + j] = v; }

  // Off-diagonal cost symmetrized as (C + C^T) / 2.
  double sym_at(std::size_t i, std::size_t j) const {
    return 0.5 * (at(i, j) + at(j, i));
  }
};

enum class PairingMethodId { kRandom, kSoftBiometric, kSimilarityScore };

const char* to_string(PairingMethodId m);
PairingMethodId pairing_method_from_string(const std::string& s);

struct PairingResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // i < j, sorted by i
  double total_cost = 0.0;
  PairingMethodId method = PairingMethodId::kSimilarityScore;
};

// Pairwise Euclidean distances between reference templates (lower cost =
// more similar).
CostMatrix cost_matrix_scores(const std::vector<EmbeddingVector>& references);

struct SoftWeights {
  double sex = 1.0;
  double race = 1.0;
  double age = 1.0;
};

// Attribute view used for soft-biometric costs. Ages become fractional once
// groups are aggregated by mean.
struct SoftProfile {
  std::string sex;
  std::string race;
  double age = 0.0;
};

// Soft-biometric dissimilarity: weighted category mismatches plus the age
// difference normalized by the gallery's age range (1 when degenerate).
CostMatrix cost_matrix_soft(const std::vector<SoftProfile>& attributes,
                            const SoftWeights& weights = {});
CostMatrix cost_matrix_soft(const std::vector<SoftBiometrics>& attributes,
                            const SoftWeights& weights = {});

// Minimum-cost assignment (permutation) under the sentinel diagonal, so the
// result has no fixed points. O(N^3) shortest-augmenting-path solver.
std::vector<std::size_t> solve_assignment(const CostMatrix& c);

// Turns a fixed-point-free permutation into a perfect matching: 2-cycles
// become pairs, longer cycles split into consecutive pairs, and the single
// leftovers of odd cycles are pooled and matched greedily by ascending cost.
PairingResult extract_pairs(const std::vector<std::size_t>& f, const CostMatrix& c);

// Exact minimum-cost perfect matching by exhaustive enumeration; N <= 12.
PairingResult brute_force_matching(const CostMatrix& c);

double matching_cost(const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                     const CostMatrix& c);

// One merge step: new group g was formed from previous-level groups
// (first, second), members ordered first-then-second.
struct GroupMerge {
  std::size_t first = 0;
  std::size_t second = 0;
};

// Output of the iterative grouping. Level t holds groups of size 2^t;
// level 0 is the identity grouping over reference indices. Representatives
// are the fused templates used to build cost matrices at each iteration and
// are exactly the vectors an index built from this hierarchy stores.
struct PairingHierarchy {
  std::vector<std::vector<std::vector<std::size_t>>> groups_per_level;
  std::vector<std::vector<EmbeddingVector>> reps_per_level;
  std::vector<std::vector<GroupMerge>> merges;       // one list per iteration
  std::vector<PairingResult> pairings;               // empty for random method
};

// Grows groups of 1 into groups of n1 by repeated pairing. Score and soft
// methods build a fresh cost matrix per iteration (over fused
// representatives resp. aggregated attributes); the random method shuffles
// deterministically under the seed. Soft attributes may be empty for the
// other methods.
PairingHierarchy pair_hierarchy(const std::vector<EmbeddingVector>& references,
                                const std::vector<std::optional<SoftBiometrics>>& soft,
                                PairingMethodId method, int n1, FusionMethodId fusion,
                                const TrainingStats* stats, std::uint64_t seed,
                                bool renormalize_fused = false);

}  // namespace biocascade
