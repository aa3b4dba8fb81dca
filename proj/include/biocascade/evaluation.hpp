// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
//
// Closed-set (CMC / rank-1) and open-set (DET / EER / FNIR at FPIR 0.1%)
// identification metrics, plus the experiment runner that produces the
// workload matrix and per-configuration result files.
#pragma once

#include <functional>
#include <set>

#include "biocascade/core.hpp"
#include "biocascade/data_io.hpp"
#include "biocascade/protection.hpp"
#include "biocascade/retrieval.hpp"

namespace biocascade {

struct ClosedSetResult {
  // (rank, identification rate in percent), rank ascending; rr1 = cmc[0].
  std::vector<std::pair<int, double>> cmc;
  double rr1 = 0.0;
};

struct OpenSetResult {
  struct DetPoint {
    double threshold = 0.0;
    double fpir = 0.0;  // percent
    double fnir = 0.0;  // percent
  };
  std::vector<DetPoint> det;  // threshold ascending, with -inf/+inf sentinels
  double eer = 0.0;
  double fnir_at_fpir_0_1pct = 0.0;
};

// One identification transaction: probe record in, ranked candidates out.
using SystemFn = std::function<CandidateList(const SubjectRecord&)>;

// Rank of the mated subject per probe; probes whose subject was pruned from
// the candidate list count as misses at every rank. Every probe subject must
// be enrolled.
ClosedSetResult closed_set_eval(const std::vector<SubjectRecord>& probes,
                                const std::set<SubjectId>& enrolled, const SystemFn& system);

// Decision score per transaction is the best (lowest) candidate distance.
// An enrolled transaction is a false negative when it is rejected at the
// threshold or its top candidate is the wrong identity. Thresholds sweep all
// distinct observed scores plus the two infinite sentinels.
OpenSetResult open_set_eval(const std::vector<SubjectRecord>& probes_enrolled,
                            const std::vector<SubjectRecord>& probes_nonenrolled,
                            const SystemFn& system);

// ---------------------------------------------------------------------------
// Experiment runner

struct ExperimentConfig {
  int version = 1;
  std::uint64_t seed = 1;

  // Data source: exactly one of synthetic / gallery_path.
  std::optional<SyntheticModel> synthetic;
  std::optional<std::string> gallery_path;
  bool normalize = true;  // L2-normalize embeddings at ingestion

  int n1 = 16;
  std::vector<double> k1_values;  // cascade configurations; 1.0 = keep-all
  bool include_baseline = true;

  // Workload matrix grid (schedule arithmetic only, no data involved).
  std::vector<int> grid_n1;
  std::vector<int> grid_k1_log2;

  FusionMethodId fusion = FusionMethodId::kAverage1;
  PairingMethodId pairing = PairingMethodId::kSimilarityScore;
  bool renormalize_fused = false;
  Scheme backend = Scheme::kPlaintextRef;
  int security_level = 128;
};

ExperimentConfig load_experiment_config(const std::string& path);

struct WorkloadRow {
  int n1 = 0;
  int k1_log2 = 0;
  std::uint64_t comparisons = 0;
  double workload_percent = 0.0;
};

struct TransactionTrace {
  SubjectId probe_subject = 0;
  SampleId probe_sample = 0;
  Split partition = Split::kProbeEnrolled;
  std::uint64_t comparisons = 0;
  SubjectId top1_subject = 0;
  double top1_score = 0.0;
  bool has_candidate = false;
};

struct ConfigurationResult {
  std::string label;
  int n1 = 0;       // 0 for the baseline
  double k1 = 0.0;  // 0 for the baseline
  WorkloadReport workload;
  ClosedSetResult closed;
  OpenSetResult open;
  std::vector<std::uint64_t> comparisons_per_level;  // empty for the baseline
  std::vector<TransactionTrace> transactions;
};

struct ExperimentBundle {
  std::vector<WorkloadRow> workload_matrix;
  std::vector<ConfigurationResult> results;
  std::uint64_t gallery_size = 0;
  std::uint64_t enrolled_probes = 0;
  std::uint64_t nonenrolled_probes = 0;
};

// Fully deterministic under config.seed.
ExperimentBundle run_experiment(const ExperimentConfig& config);

// Writes workload_matrix.csv, per-configuration cmc_*/det_*/trace_* files,
// summary.txt, and manifest.txt under out_dir.
void write_bundle(const ExperimentBundle& bundle, const std::string& out_dir);

}  // namespace biocascade
