// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
//
// File formats and data sources: the binary embedding container ("BEMB"),
// its JSON-lines metadata sidecar, the binary index container ("BIDX"), and
// the seeded synthetic gallery generator used for desk-scale runs.
#pragma once

#include <span>
#include <string>

#include "biocascade/core.hpp"
#include "biocascade/pairing.hpp"

namespace biocascade {

// Ratio of non-enrolled probe subjects to enrolled subjects in the default
// synthetic partitioning (1935 non-enrolled per 4096 enrolled).
inline constexpr double kDefaultNonEnrolledFraction = 1935.0 / 4096.0;
inline constexpr double kDefaultTrainFraction = 0.05;

// Parameters of the synthetic data source. Subject centroids are drawn
// uniformly on the unit hypersphere; each sample renormalizes the centroid
// plus per-coordinate Gaussian noise. Generation is a pure function of the
// model.
struct SyntheticModel {
  std::uint64_t num_subjects = 0;  // enrolled (reference) subjects
  int samples_per_subject = 3;     // probe samples per subject
  std::uint32_t dim = 512;
  double intra_class_sigma = 0.1;
  std::uint64_t seed = 1;
  double nonenrolled_fraction = kDefaultNonEnrolledFraction;
  double train_fraction = kDefaultTrainFraction;
};

std::vector<SubjectRecord> generate_synthetic(const SyntheticModel& model);

// Embedding container: 16-byte header (magic "BEMB", u16 version = 1,
// u16 reserved, u32 record count, u32 dim), then per record u64 subject id,
// u64 sample id, and dim little-endian IEEE-754 f32 values. Metadata lives
// in a JSON-lines sidecar at path + ".meta".
void write_embeddings(const std::vector<SubjectRecord>& records, const std::string& path);
std::vector<SubjectRecord> read_embeddings(const std::string& path);

inline std::string metadata_path(const std::string& embedding_path) {
  return embedding_path + ".meta";
}

// Index container: magic "BIDX", version, protection scheme byte (0 here),
// n1, dim, fusion method, optional training mean, optional default
// schedule, then trees depth-first with length-prefixed nodes. Fused values
// are stored as f32.
void write_index(const IndexForest& forest, const std::string& path);
IndexForest read_index(const std::string& path);

// Debug dump: row-major, space-separated plain text.
void write_cost_matrix_text(const CostMatrix& matrix, const std::string& path);

namespace io {

// Whole-file helpers; writes go to a temporary and are renamed into place.
std::vector<std::uint8_t> read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::string& path, const std::string& text);

std::uint64_t file_hash(const std::string& path);

// Writes "<fnv1a64 hex>  <name>" lines, one per file, sorted by name.
void write_manifest(const std::string& manifest_path, const std::string& base_dir,
                    std::vector<std::string> file_names);

}  // namespace io

}  // namespace biocascade
