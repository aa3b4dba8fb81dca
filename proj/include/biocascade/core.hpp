// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types for the fused-template index: embeddings, subject
// records, cascade schedules, fusion trees, and workload accounting.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace biocascade {

using SubjectId = std::uint64_t;
using SampleId = std::uint64_t;

// Dense real-valued feature vector. One gallery shares a single dimension.
using EmbeddingVector = std::vector<double>;

// Malformed or inconsistent input data (files, galleries, configs, keys).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Broken internal invariant; indicates a bug rather than bad input.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Split { kReference, kProbeEnrolled, kProbeNonEnrolled, kTrain };

const char* to_string(Split split);
Split split_from_string(const std::string& s);

inline constexpr int kMaxAge = 150;
extern const std::vector<std::string> kSexVocabulary;
extern const std::vector<std::string> kRaceVocabulary;

struct SoftBiometrics {
  std::string sex;
  std::string race;
  int age = 0;
};

struct SubjectRecord {
  SubjectId subject_id = 0;
  SampleId sample_id = 0;
  EmbeddingVector embedding;
  std::optional<SoftBiometrics> soft;
  Split split = Split::kReference;
};

struct ValidationIssue {
  std::string what;
  SubjectId subject_id = 0;
  SampleId sample_id = 0;
};

struct ValidationReport {
  std::vector<ValidationIssue> violations;
  bool valid() const { return violations.empty(); }
};

// Checks a gallery for dimension mismatches, duplicate (subject, sample)
// ids, non-finite values, split-rule violations (exactly one reference
// sample per enrolled subject, non-enrolled probes without a reference),
// and soft-biometric vocabulary/age-range problems.
ValidationReport validate_gallery(const std::vector<SubjectRecord>& records);

double euclidean_distance(const EmbeddingVector& a, const EmbeddingVector& b);
double squared_distance(const EmbeddingVector& a, const EmbeddingVector& b);

// In-place L2 normalization; zero vectors are left untouched.
void l2_normalize(EmbeddingVector& v);

bool is_power_of_two(std::uint64_t v);
int log2_exact(std::uint64_t v);

// Per-level pre-selection plan for the retrieval cascade. selections[l] is
// the number of nodes kept after level l+1 (0-based storage, levels are
// 1-based in reports). A schedule for fan-out n1 always has
// log2(n1) + 1 levels.
struct CascadeSchedule {
  int n1 = 2;
  std::vector<std::uint64_t> selections;

  int levels() const { return static_cast<int>(selections.size()); }

  // Throws DataError when the schedule cannot drive a gallery of size n.
  void validate(std::uint64_t gallery_size) const;
};

enum class FusionMethodId { kAverage1, kAverage2, kDistance1, kDistance2, kIndex1, kIndex2 };

const char* to_string(FusionMethodId m);
FusionMethodId fusion_method_from_string(const std::string& s);
bool fusion_requires_stats(FusionMethodId m);

// Per-position mean of a training split disjoint from references and probes.
struct TrainingStats {
  EmbeddingVector mu;
  std::uint64_t source_count = 0;
};

// Node of one indexing tree. Internal nodes hold the fusion of their two
// children; leaves hold one subject's reference template.
struct FusionNode {
  int level = 1;  // root = 1, leaves = log2(n1) + 1
  EmbeddingVector fused;
  std::vector<SubjectId> covered_subjects;  // sorted
  std::unique_ptr<FusionNode> left;
  std::unique_ptr<FusionNode> right;
  SubjectId leaf_subject = 0;
  std::uint32_t ordinal = 0;  // preorder position across the forest

  bool is_leaf() const { return left == nullptr; }
};

struct IndexForest {
  std::vector<std::unique_ptr<FusionNode>> trees;
  int n1 = 0;
  std::uint32_t dim = 0;
  FusionMethodId fusion = FusionMethodId::kAverage1;
  std::optional<TrainingStats> stats;
  std::vector<std::uint64_t> default_selections;  // optional, informational

  std::uint64_t subject_count() const;
  int levels() const { return log2_exact(static_cast<std::uint64_t>(n1)) + 1; }
};

// Assigns preorder ordinals across all trees. Builders and readers both call
// this so node identities agree between in-memory and persisted forests.
void assign_ordinals(IndexForest& forest);

// Throws InternalError if the forest breaks its structural invariants
// (coverage sizes, leaf partition, child/parent consistency).
void check_forest(const IndexForest& forest);

struct WorkloadReport {
  std::uint64_t comparisons_total = 0;
  std::vector<std::uint64_t> comparisons_per_level;
  std::uint64_t gallery_size = 0;
  double workload_percent = 0.0;
};

}  // namespace biocascade
