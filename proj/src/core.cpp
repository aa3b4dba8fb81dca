// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
#include "biocascade/core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace biocascade {

const std::vector<std::string> kSexVocabulary = {"F", "M"};
const std::vector<std::string> kRaceVocabulary = {"A", "B", "C", "D", "E"};

const char* to_string(Split split) {
  switch (split) {
    case Split::kReference: return "reference";
    case Split::kProbeEnrolled: return "probe_enrolled";
    case Split::kProbeNonEnrolled: return "probe_nonenrolled";
    case Split::kTrain: return "train";
  }
  throw InternalError("unknown split value");
}

Split split_from_string(const std::string& s) {
  if (s == "reference") return Split::kReference;
  if (s == "probe_enrolled") return Split::kProbeEnrolled;
  if (s == "probe_nonenrolled") return Split::kProbeNonEnrolled;
  if (s == "train") return Split::kTrain;
  throw DataError("unknown split label: " + s);
}

const char* to_string(FusionMethodId m) {
  switch (m) {
    case FusionMethodId::kAverage1: return "avg1";
    case FusionMethodId::kAverage2: return "avg2";
    case FusionMethodId::kDistance1: return "dist1";
    case FusionMethodId::kDistance2: return "dist2";
    case FusionMethodId::kIndex1: return "idx1";
    case FusionMethodId::kIndex2: return "idx2";
  }
  throw InternalError("unknown fusion method value");
}

FusionMethodId fusion_method_from_string(const std::string& s) {
  if (s == "avg1") return FusionMethodId::kAverage1;
  if (s == "avg2") return FusionMethodId::kAverage2;
  if (s == "dist1") return FusionMethodId::kDistance1;
  if (s == "dist2") return FusionMethodId::kDistance2;
  if (s == "idx1") return FusionMethodId::kIndex1;
  if (s == "idx2") return FusionMethodId::kIndex2;
  throw DataError("unknown fusion method: " + s);
}

bool fusion_requires_stats(FusionMethodId m) {
  return m == FusionMethodId::kAverage2 || m == FusionMethodId::kDistance1 ||
         m == FusionMethodId::kDistance2;
}

bool is_power_of_two(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

int log2_exact(std::uint64_t v) {
  if (!is_power_of_two(v)) throw InternalError("log2_exact: value is not a power of two");
  int l = 0;
  while (v > 1) {
    v >>= 1;
    ++l;
  }
  return l;
}

namespace {

bool in_vocabulary(const std::vector<std::string>& vocab, const std::string& v) {
  return std::find(vocab.begin(), vocab.end(), v) != vocab.end();
}

}  // namespace

ValidationReport validate_gallery(const std::vector<SubjectRecord>& records) {
  ValidationReport report;
  if (records.empty()) {
    report.violations.push_back({"empty gallery", 0, 0});
    return report;
  }
  const std::size_t dim = records.front().embedding.size();
  std::set<std::pair<SubjectId, SampleId>> seen;
  std::map<SubjectId, int> reference_counts;
  std::set<SubjectId> nonenrolled_subjects;

  for (const auto& r : records) {
    if (r.embedding.size() != dim) {
      report.violations.push_back({"dimension mismatch", r.subject_id, r.sample_id});
    }
    for (double v : r.embedding) {
      if (!std::isfinite(v)) {
        report.violations.push_back({"non-finite embedding value", r.subject_id, r.sample_id});
        break;
      }
    }
    if (!seen.insert({r.subject_id, r.sample_id}).second) {
      report.violations.push_back({"duplicate (subject_id, sample_id)", r.subject_id, r.sample_id});
    }
    if (r.split == Split::kReference) ++reference_counts[r.subject_id];
    if (r.split == Split::kProbeNonEnrolled) nonenrolled_subjects.insert(r.subject_id);
    if (r.soft) {
      if (r.soft->age < 0 || r.soft->age > kMaxAge) {
        report.violations.push_back({"age out of range", r.subject_id, r.sample_id});
      }
      if (!in_vocabulary(kSexVocabulary, r.soft->sex)) {
        report.violations.push_back({"sex outside vocabulary", r.subject_id, r.sample_id});
      }
      if (!in_vocabulary(kRaceVocabulary, r.soft->race)) {
        report.violations.push_back({"race outside vocabulary", r.subject_id, r.sample_id});
      }
    }
  }
  for (const auto& [subject, count] : reference_counts) {
    if (count > 1) {
      report.violations.push_back({"more than one reference sample for subject", subject, 0});
    }
  }
  // An enrolled probe without a reference cannot be identified; a
  // non-enrolled probe with one contradicts its label.
  std::set<SubjectId> enrolled;
  for (const auto& [subject, count] : reference_counts) enrolled.insert(subject);
  for (const auto& r : records) {
    if (r.split == Split::kProbeEnrolled && enrolled.count(r.subject_id) == 0) {
      report.violations.push_back({"enrolled probe without reference sample", r.subject_id, r.sample_id});
    }
  }
  for (SubjectId s : nonenrolled_subjects) {
    if (enrolled.count(s) != 0) {
      report.violations.push_back({"non-enrolled probe subject has a reference sample", s, 0});
    }
  }
  return report;
}

double squared_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dimension mismatch in distance");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

double euclidean_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  return std::sqrt(squared_distance(a, b));
}

void l2_normalize(EmbeddingVector& v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  if (sum <= 0.0) return;
  const double inv = 1.0 / std::sqrt(sum);
  for (double& x : v) x *= inv;
}

void CascadeSchedule::validate(std::uint64_t gallery_size) const {
  if (n1 < 2 || !is_power_of_two(static_cast<std::uint64_t>(n1))) {
    throw DataError("n1 must be a power of two >= 2");
  }
  if (gallery_size == 0 || gallery_size % static_cast<std::uint64_t>(n1) != 0) {
    throw DataError("gallery size must be divisible by n1");
  }
  const int expected_levels = log2_exact(static_cast<std::uint64_t>(n1)) + 1;
  if (levels() != expected_levels) {
    throw DataError("schedule must have log2(n1)+1 selection counts");
  }
  std::uint64_t compared = gallery_size / static_cast<std::uint64_t>(n1);
  for (int l = 0; l < levels(); ++l) {
    if (selections[l] < 1) throw DataError("selection counts must be >= 1");
    if (selections[l] > compared) {
      throw DataError("selection count exceeds comparisons at its level");
    }
    compared = 2 * selections[l];
  }
}

std::uint64_t IndexForest::subject_count() const {
  return static_cast<std::uint64_t>(trees.size()) * static_cast<std::uint64_t>(n1);
}

namespace {

void assign_ordinals_rec(FusionNode& node, std::uint32_t& next) {
  node.ordinal = next++;
  if (!node.is_leaf()) {
    assign_ordinals_rec(*node.left, next);
    assign_ordinals_rec(*node.right, next);
  }
}

void check_node(const FusionNode& node, int n1, int leaf_level, std::vector<SubjectId>& leaves_out) {
  const std::uint64_t expected_cover =
      static_cast<std::uint64_t>(n1) >> (node.level - 1);
  if (node.covered_subjects.size() != expected_cover) {
    throw InternalError("node covers wrong number of subjects");
  }
  if (!std::is_sorted(node.covered_subjects.begin(), node.covered_subjects.end())) {
    throw InternalError("covered subject list not sorted");
  }
  if (node.is_leaf()) {
    if (node.level != leaf_level) throw InternalError("leaf at wrong level");
    if (node.covered_subjects.size() != 1 || node.covered_subjects[0] != node.leaf_subject) {
      throw InternalError("leaf coverage does not match its subject");
    }
    leaves_out.push_back(node.leaf_subject);
    return;
  }
  if (!node.left || !node.right) throw InternalError("internal node must have two children");
  if (node.left->level != node.level + 1 || node.right->level != node.level + 1) {
    throw InternalError("child level mismatch");
  }
  std::vector<SubjectId> merged;
  std::merge(node.left->covered_subjects.begin(), node.left->covered_subjects.end(),
             node.right->covered_subjects.begin(), node.right->covered_subjects.end(),
             std::back_inserter(merged));
  if (merged != node.covered_subjects) {
    throw InternalError("coverage is not the union of child coverage");
  }
  check_node(*node.left, n1, leaf_level, leaves_out);
  check_node(*node.right, n1, leaf_level, leaves_out);
}

}  // namespace

void assign_ordinals(IndexForest& forest) {
  std::uint32_t next = 0;
  for (auto& tree : forest.trees) assign_ordinals_rec(*tree, next);
}

void check_forest(const IndexForest& forest) {
  if (forest.n1 < 2 || !is_power_of_two(static_cast<std::uint64_t>(forest.n1))) {
    throw InternalError("forest n1 must be a power of two >= 2");
  }
  const int leaf_level = forest.levels();
  std::vector<SubjectId> leaves;
  for (const auto& tree : forest.trees) {
    if (tree->level != 1) throw InternalError("tree root must be level 1");
    check_node(*tree, forest.n1, leaf_level, leaves);
  }
  std::sort(leaves.begin(), leaves.end());
  if (std::adjacent_find(leaves.begin(), leaves.end()) != leaves.end()) {
    throw InternalError("a subject appears in more than one leaf");
  }
  if (leaves.size() != forest.subject_count()) {
    throw InternalError("leaf count does not match n1 * tree count");
  }
}

}  // namespace biocascade
