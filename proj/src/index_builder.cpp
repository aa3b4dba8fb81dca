// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
#include "biocascade/index_builder.hpp"

#include <algorithm>
#include <set>

#include "biocascade/fusion.hpp"

namespace biocascade {

namespace {

void set_levels(FusionNode& node, int level) {
  node.level = level;
  if (!node.is_leaf()) {
    set_levels(*node.left, level + 1);
    set_levels(*node.right, level + 1);
  }
}

}  // namespace

IndexForest build_index(const std::vector<SubjectRecord>& references, const BuildConfig& config,
                        const TrainingStats* stats) {
  if (references.empty()) throw DataError("empty reference gallery");
  if (config.n1 < 2 || !is_power_of_two(static_cast<std::uint64_t>(config.n1))) {
    throw DataError("n1 must be a power of two >= 2");
  }
  if (references.size() % static_cast<std::size_t>(config.n1) != 0) {
    throw DataError("gallery size must be divisible by n1");
  }
  if (fusion_requires_stats(config.fusion) && stats == nullptr) {
    throw DataError("fusion method requires training stats");
  }
  const std::size_t dim = references.front().embedding.size();
  if (dim == 0) throw DataError("embedding dimension must be positive");
  if (stats != nullptr && stats->mu.size() != dim) {
    throw DataError("training stats dimension mismatch");
  }

  // Canonical order: ascending subject id, one template per subject.
  std::vector<const SubjectRecord*> ordered;
  ordered.reserve(references.size());
  for (const auto& r : references) {
    if (r.embedding.size() != dim) throw DataError("dimension mismatch across references");
    ordered.push_back(&r);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const SubjectRecord* a, const SubjectRecord* b) {
              return a->subject_id < b->subject_id;
            });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->subject_id == ordered[i - 1]->subject_id) {
      throw DataError("more than one reference template for a subject");
    }
  }

  std::vector<EmbeddingVector> templates;
  std::vector<std::optional<SoftBiometrics>> soft;
  templates.reserve(ordered.size());
  soft.reserve(ordered.size());
  for (const SubjectRecord* r : ordered) {
    templates.push_back(r->embedding);
    soft.push_back(r->soft);
  }

  const PairingHierarchy hierarchy =
      pair_hierarchy(templates, soft, config.pairing, config.n1, config.fusion, stats,
                     config.seed, config.renormalize_fused);

  // Leaves mirror the reference templates; internal nodes replay the merge
  // log so they hold exactly the representatives used while pairing.
  std::vector<std::unique_ptr<FusionNode>> nodes;
  nodes.reserve(templates.size());
  for (std::size_t i = 0; i < templates.size(); ++i) {
    auto leaf = std::make_unique<FusionNode>();
    leaf->fused = templates[i];
    leaf->leaf_subject = ordered[i]->subject_id;
    leaf->covered_subjects = {ordered[i]->subject_id};
    nodes.push_back(std::move(leaf));
  }
  for (std::size_t t = 0; t < hierarchy.merges.size(); ++t) {
    const auto& reps = hierarchy.reps_per_level[t + 1];
    std::vector<std::unique_ptr<FusionNode>> merged;
    merged.reserve(hierarchy.merges[t].size());
    for (std::size_t g = 0; g < hierarchy.merges[t].size(); ++g) {
      const GroupMerge& m = hierarchy.merges[t][g];
      auto parent = std::make_unique<FusionNode>();
      parent->fused = reps[g];
      parent->left = std::move(nodes[m.first]);
      parent->right = std::move(nodes[m.second]);
      std::merge(parent->left->covered_subjects.begin(), parent->left->covered_subjects.end(),
                 parent->right->covered_subjects.begin(), parent->right->covered_subjects.end(),
                 std::back_inserter(parent->covered_subjects));
      merged.push_back(std::move(parent));
    }
    nodes = std::move(merged);
  }

  IndexForest forest;
  forest.n1 = config.n1;
  forest.dim = static_cast<std::uint32_t>(dim);
  forest.fusion = config.fusion;
  if (stats != nullptr) forest.stats = *stats;
  forest.trees = std::move(nodes);
  for (auto& tree : forest.trees) set_levels(*tree, 1);
  assign_ordinals(forest);
  check_forest(forest);
  return forest;
}

}  // namespace biocascade
