// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
//
// Cascaded retrieval over the index forest with per-level pre-selection,
// the exhaustive baseline, and exact comparison-count accounting.
#pragma once

#include <functional>
#include <optional>

#include "biocascade/core.hpp"

namespace biocascade {

struct Candidate {
  SubjectId subject_id = 0;
  double score = 0.0;  // comparator distance, ascending = better
};

struct CandidateList {
  std::vector<Candidate> entries;  // sorted by (score, subject_id)
};

struct RetrievalTrace {
  std::vector<std::uint64_t> compared_per_level;
  std::vector<std::uint64_t> selected_per_level;
  CandidateList candidates;

  std::uint64_t comparisons_total() const;
};

// Halving pre-selection plan: keep round(k1 * N/n1) nodes after the root
// level, then half of the previous count (at least one) after each further
// level. k1 must lie in (0, 1].
CascadeSchedule default_schedule(std::uint64_t gallery_size, int n1, double k1);

// Keeps every compared node at every level; the cascade becomes lossless.
CascadeSchedule keep_all_schedule(std::uint64_t gallery_size, int n1);

// Keeps exactly one node per level; evaluates the workload lower bound.
CascadeSchedule all_ones_schedule(int n1);

// Comparison handle: scores one forest node against the current probe.
// Plaintext and protected backends both reduce to this signature; counting
// invocations gives the exact per-transaction workload.
using NodeScorer = std::function<double(const FusionNode&)>;

NodeScorer plaintext_scorer(const EmbeddingVector& probe);

// Walks the cascade: level 1 scores all roots and keeps the best
// selections[0]; every further level scores the two children of each kept
// node. The final level's compared leaves, ranked ascending, form the
// candidate list (optionally truncated to final_selection). Score ties
// resolve toward the lower node ordinal / subject id.
RetrievalTrace retrieve(const IndexForest& forest, const CascadeSchedule& schedule,
                        const NodeScorer& scorer,
                        std::optional<std::uint64_t> final_selection = std::nullopt);

// Baseline: scores the probe against every reference template.
CandidateList exhaustive_search(const EmbeddingVector& probe,
                                const std::vector<SubjectRecord>& references);

// Baseline over the forest's leaves with an arbitrary comparison handle;
// used for parity checks against protected backends.
CandidateList exhaustive_search(const IndexForest& forest, const NodeScorer& scorer);

WorkloadReport workload_from_schedule(const CascadeSchedule& schedule, std::uint64_t gallery_size);
WorkloadReport workload_from_trace(const RetrievalTrace& trace, std::uint64_t gallery_size);
WorkloadReport lower_bound_workload(std::uint64_t gallery_size, int n1);

}  // namespace biocascade
