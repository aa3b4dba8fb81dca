// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
#include "biocascade/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace biocascade {

std::uint64_t RetrievalTrace::comparisons_total() const {
  return std::accumulate(compared_per_level.begin(), compared_per_level.end(),
                         std::uint64_t{0});
}

CascadeSchedule default_schedule(std::uint64_t gallery_size, int n1, double k1) {
  if (!(k1 > 0.0) || k1 > 1.0) throw DataError("k1 must lie in (0, 1]");
  if (n1 < 2 || !is_power_of_two(static_cast<std::uint64_t>(n1))) {
    throw DataError("n1 must be a power of two >= 2");
  }
  if (gallery_size == 0 || gallery_size % static_cast<std::uint64_t>(n1) != 0) {
    throw DataError("gallery size must be divisible by n1");
  }
  const std::uint64_t roots = gallery_size / static_cast<std::uint64_t>(n1);
  const int levels = log2_exact(static_cast<std::uint64_t>(n1)) + 1;
  CascadeSchedule schedule;
  schedule.n1 = n1;
  schedule.selections.resize(levels);
  schedule.selections[0] = std::max<std::uint64_t>(
      1, static_cast<std::uint64_t>(std::llround(k1 * static_cast<double>(roots))));
  for (int l = 1; l < levels; ++l) {
    schedule.selections[l] = std::max<std::uint64_t>(1, schedule.selections[l - 1] / 2);
  }
  schedule.validate(gallery_size);
  return schedule;
}

CascadeSchedule keep_all_schedule(std::uint64_t gallery_size, int n1) {
  if (n1 < 2 || !is_power_of_two(static_cast<std::uint64_t>(n1))) {
    throw DataError("n1 must be a power of two >= 2");
  }
  if (gallery_size == 0 || gallery_size % static_cast<std::uint64_t>(n1) != 0) {
    throw DataError("gallery size must be divisible by n1");
  }
  const int levels = log2_exact(static_cast<std::uint64_t>(n1)) + 1;
  CascadeSchedule schedule;
  schedule.n1 = n1;
  schedule.selections.resize(levels);
  schedule.selections[0] = gallery_size / static_cast<std::uint64_t>(n1);
  for (int l = 1; l < levels; ++l) schedule.selections[l] = 2 * schedule.selections[l - 1];
  schedule.validate(gallery_size);
  return schedule;
}

CascadeSchedule all_ones_schedule(int n1) {
  if (n1 < 2 || !is_power_of_two(static_cast<std::uint64_t>(n1))) {
    throw DataError("n1 must be a power of two >= 2");
  }
  CascadeSchedule schedule;
  schedule.n1 = n1;
  schedule.selections.assign(log2_exact(static_cast<std::uint64_t>(n1)) + 1, 1);
  return schedule;
}

NodeScorer plaintext_scorer(const EmbeddingVector& probe) {
  // Squared distance: monotone in the Euclidean distance, and the score the
  // protected comparators reproduce without square roots.
  return [probe](const FusionNode& node) { return squared_distance(probe, node.fused); };
}

namespace {

struct ScoredNode {
  const FusionNode* node;
  double score;
};

void sort_scored(std::vector<ScoredNode>& scored) {
  std::sort(scored.begin(), scored.end(), [](const ScoredNode& a, const ScoredNode& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.node->ordinal < b.node->ordinal;
  });
}

}  // namespace

RetrievalTrace retrieve(const IndexForest& forest, const CascadeSchedule& schedule,
                        const NodeScorer& scorer,
                        std::optional<std::uint64_t> final_selection) {
  const std::uint64_t n = forest.subject_count();
  if (schedule.n1 != forest.n1) throw DataError("schedule n1 does not match the forest");
  schedule.validate(n);

  const int levels = schedule.levels();
  RetrievalTrace trace;
  trace.compared_per_level.reserve(levels);
  trace.selected_per_level.reserve(levels);

  std::vector<ScoredNode> frontier;
  frontier.reserve(forest.trees.size());
  for (const auto& tree : forest.trees) frontier.push_back({tree.get(), scorer(*tree)});

  for (int level = 0; level < levels; ++level) {
    trace.compared_per_level.push_back(frontier.size());
    sort_scored(frontier);
    const bool last = level == levels - 1;
    std::uint64_t keep = last ? (final_selection ? *final_selection : frontier.size())
                              : schedule.selections[level];
    keep = std::min<std::uint64_t>(keep, frontier.size());
    frontier.resize(keep);
    trace.selected_per_level.push_back(keep);
    if (last) break;
    std::vector<ScoredNode> next;
    next.reserve(2 * frontier.size());
    for (const auto& kept : frontier) {
      if (kept.node->is_leaf()) {
        throw InternalError("cascade reached a leaf before the final level");
      }
      next.push_back({kept.node->left.get(), scorer(*kept.node->left)});
      next.push_back({kept.node->right.get(), scorer(*kept.node->right)});
    }
    frontier = std::move(next);
  }

  trace.candidates.entries.reserve(frontier.size());
  for (const auto& s : frontier) {
    if (!s.node->is_leaf()) throw InternalError("final cascade level holds a non-leaf node");
    trace.candidates.entries.push_back({s.node->leaf_subject, s.score});
  }
  std::sort(trace.candidates.entries.begin(), trace.candidates.entries.end(),
            [](const Candidate& a, const Candidate& b) {
              if (a.score != b.score) return a.score < b.score;
              return a.subject_id < b.subject_id;
            });
  return trace;
}

CandidateList exhaustive_search(const EmbeddingVector& probe,
                                const std::vector<SubjectRecord>& references) {
  if (references.empty()) throw DataError("exhaustive search over an empty gallery");
  CandidateList list;
  list.entries.reserve(references.size());
  for (const auto& r : references) {
    list.entries.push_back({r.subject_id, squared_distance(probe, r.embedding)});
  }
  std::sort(list.entries.begin(), list.entries.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.subject_id < b.subject_id;
  });
  return list;
}

namespace {

void collect_leaves(const FusionNode& node, std::vector<const FusionNode*>& out) {
  if (node.is_leaf()) {
    out.push_back(&node);
    return;
  }
  collect_leaves(*node.left, out);
  collect_leaves(*node.right, out);
}

}  // namespace

CandidateList exhaustive_search(const IndexForest& forest, const NodeScorer& scorer) {
  std::vector<const FusionNode*> leaves;
  for (const auto& tree : forest.trees) collect_leaves(*tree, leaves);
  CandidateList list;
  list.entries.reserve(leaves.size());
  for (const FusionNode* leaf : leaves) {
    list.entries.push_back({leaf->leaf_subject, scorer(*leaf)});
  }
  std::sort(list.entries.begin(), list.entries.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.subject_id < b.subject_id;
  });
  return list;
}

WorkloadReport workload_from_schedule(const CascadeSchedule& schedule,
                                      std::uint64_t gallery_size) {
  schedule.validate(gallery_size);
  WorkloadReport report;
  report.gallery_size = gallery_size;
  std::uint64_t compared = gallery_size / static_cast<std::uint64_t>(schedule.n1);
  for (int l = 0; l < schedule.levels(); ++l) {
    report.comparisons_per_level.push_back(compared);
    compared = 2 * schedule.selections[l];
  }
  report.comparisons_total = std::accumulate(report.comparisons_per_level.begin(),
                                             report.comparisons_per_level.end(), std::uint64_t{0});
  report.workload_percent =
      100.0 * static_cast<double>(report.comparisons_total) / static_cast<double>(gallery_size);
  return report;
}

WorkloadReport workload_from_trace(const RetrievalTrace& trace, std::uint64_t gallery_size) {
  if (gallery_size == 0) throw DataError("gallery size must be positive");
  WorkloadReport report;
  report.gallery_size = gallery_size;
  report.comparisons_per_level = trace.compared_per_level;
  report.comparisons_total = trace.comparisons_total();
  report.workload_percent =
      100.0 * static_cast<double>(report.comparisons_total) / static_cast<double>(gallery_size);
  return report;
}

WorkloadReport lower_bound_workload(std::uint64_t gallery_size, int n1) {
  return workload_from_schedule(all_ones_schedule(n1), gallery_size);
}

}  // namespace biocascade
