// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
#include "biocascade/evaluation.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "json.hpp"

#include "biocascade/detail/rng.hpp"
#include "biocascade/fusion.hpp"
#include "biocascade/index_builder.hpp"

namespace biocascade {

namespace {

ClosedSetResult closed_set_from_lists(const std::vector<SubjectRecord>& probes,
                                      const std::vector<CandidateList>& lists) {
  std::size_t max_rank = 1;
  for (const auto& list : lists) max_rank = std::max(max_rank, list.entries.size());

  const std::size_t miss = max_rank + 1;
  std::vector<std::size_t> ranks;
  ranks.reserve(probes.size());
  for (std::size_t p = 0; p < probes.size(); ++p) {
    std::size_t rank = miss;
    const auto& entries = lists[p].entries;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].subject_id == probes[p].subject_id) {
        rank = i + 1;
        break;
      }
    }
    ranks.push_back(rank);
  }

  // Histogram of ranks, then a cumulative sweep.
  std::vector<std::size_t> hits_at(max_rank + 2, 0);
  for (std::size_t rank : ranks) ++hits_at[rank];

  ClosedSetResult result;
  result.cmc.reserve(max_rank);
  const double denom = static_cast<double>(probes.size());
  std::size_t cumulative = 0;
  for (std::size_t r = 1; r <= max_rank; ++r) {
    cumulative += hits_at[r];
    result.cmc.emplace_back(static_cast<int>(r),
                            100.0 * static_cast<double>(cumulative) / denom);
  }
  result.rr1 = result.cmc.front().second;
  return result;
}

struct EnrolledOutcome {
  double score;
  bool top_correct;
};

OpenSetResult open_set_from_outcomes(const std::vector<EnrolledOutcome>& enrolled,
                                     const std::vector<double>& nonenrolled) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> thresholds;
  thresholds.reserve(enrolled.size() + nonenrolled.size() + 2);
  thresholds.push_back(-inf);
  for (const auto& e : enrolled) thresholds.push_back(e.score);
  for (double s : nonenrolled) thresholds.push_back(s);
  thresholds.push_back(inf);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  // Acceptance counts per threshold via sorted score arrays: FPIR counts
  // accepted impostor transactions, FNIR counts enrolled transactions that
  // are rejected or whose top candidate is the wrong identity.
  std::vector<double> impostor_scores = nonenrolled;
  std::sort(impostor_scores.begin(), impostor_scores.end());
  // Wrong-identity transactions miss at every threshold, so only the
  // correctly-identified scores participate in the acceptance count.
  std::vector<double> correct_scores;
  for (const auto& e : enrolled) {
    if (e.top_correct) correct_scores.push_back(e.score);
  }
  std::sort(correct_scores.begin(), correct_scores.end());

  OpenSetResult result;
  result.det.reserve(thresholds.size());
  const double n_e = static_cast<double>(enrolled.size());
  const double n_n = static_cast<double>(nonenrolled.size());
  for (double t : thresholds) {
    const auto false_positive = static_cast<std::size_t>(
        std::upper_bound(impostor_scores.begin(), impostor_scores.end(), t) -
        impostor_scores.begin());
    const auto accepted_correct = static_cast<std::size_t>(
        std::upper_bound(correct_scores.begin(), correct_scores.end(), t) -
        correct_scores.begin());
    const std::size_t false_negative = enrolled.size() - accepted_correct;
    result.det.push_back({t, 100.0 * static_cast<double>(false_positive) / n_n,
                          100.0 * static_cast<double>(false_negative) / n_e});
  }

  // EER: operating point with the smallest |FPIR - FNIR|.
  double best_gap = inf;
  for (const auto& p : result.det) {
    const double gap = std::abs(p.fpir - p.fnir);
    if (gap < best_gap) {
      best_gap = gap;
      result.eer = 0.5 * (p.fpir + p.fnir);
    }
  }

  // FNIR at the loosest threshold that still keeps FPIR at or below 0.1%.
  // The -inf sentinel (FPIR = 0) guarantees such a point exists.
  for (const auto& p : result.det) {
    if (p.fpir <= 0.1) result.fnir_at_fpir_0_1pct = p.fnir;
  }
  return result;
}

EnrolledOutcome enrolled_outcome(const SubjectRecord& probe, const CandidateList& list) {
  if (list.entries.empty()) return {std::numeric_limits<double>::infinity(), false};
  return {list.entries.front().score, list.entries.front().subject_id == probe.subject_id};
}

double nonenrolled_score(const CandidateList& list) {
  if (list.entries.empty()) return std::numeric_limits<double>::infinity();
  return list.entries.front().score;
}

}  // namespace

ClosedSetResult closed_set_eval(const std::vector<SubjectRecord>& probes,
                                const std::set<SubjectId>& enrolled, const SystemFn& system) {
  if (probes.empty()) throw DataError("closed-set evaluation needs at least one probe");
  for (const auto& p : probes) {
    if (enrolled.count(p.subject_id) == 0) {
      throw DataError("closed-set probe subject is not enrolled");
    }
  }
  std::vector<CandidateList> lists;
  lists.reserve(probes.size());
  for (const auto& p : probes) lists.push_back(system(p));
  return closed_set_from_lists(probes, lists);
}

OpenSetResult open_set_eval(const std::vector<SubjectRecord>& probes_enrolled,
                            const std::vector<SubjectRecord>& probes_nonenrolled,
                            const SystemFn& system) {
  if (probes_enrolled.empty() || probes_nonenrolled.empty()) {
    throw DataError("open-set evaluation needs both probe partitions");
  }
  std::vector<EnrolledOutcome> enrolled;
  enrolled.reserve(probes_enrolled.size());
  for (const auto& p : probes_enrolled) enrolled.push_back(enrolled_outcome(p, system(p)));
  std::vector<double> nonenrolled;
  nonenrolled.reserve(probes_nonenrolled.size());
  for (const auto& p : probes_nonenrolled) nonenrolled.push_back(nonenrolled_score(system(p)));
  return open_set_from_outcomes(enrolled, nonenrolled);
}

// ---------------------------------------------------------------------------
// Experiment runner

namespace {

std::string pretty_k1(double k1) {
  if (k1 == 1.0) return "1 (keep-all)";
  for (int x = 1; x <= 30; ++x) {
    if (std::abs(k1 * std::pow(2.0, x) - 1.0) < 1e-9) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "2^-%d", x);
      return buf;
    }
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", k1);
  return buf;
}

std::string file_label(int n1, double k1) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "cascade_n1%d_k1_%g", n1, k1);
  return buf;
}

struct ProbeTraceRow {
  SubjectId subject_id;
  SampleId sample_id;
  const char* partition;
  SubjectId top1_subject;
  double top1_score;
  bool has_top1;
};

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
  const auto bytes = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad experiment config: ") + e.what());
  }
  ExperimentConfig config;
  try {
    config.version = j.value("version", 1);
    if (config.version != 1) throw DataError("unsupported experiment config version");
    config.seed = j.value("seed", std::uint64_t{1});
    if (!j.contains("data")) throw DataError("experiment config lacks a data section");
    const auto& data = j.at("data");
    if (data.contains("synthetic") == data.contains("gallery")) {
      throw DataError("data section must name exactly one of synthetic/gallery");
    }
    if (data.contains("synthetic")) {
      const auto& s = data.at("synthetic");
      SyntheticModel model;
      model.num_subjects = s.at("subjects").get<std::uint64_t>();
      model.dim = s.value("dim", 512u);
      model.intra_class_sigma = s.value("sigma", 0.1);
      model.samples_per_subject = s.value("samples_per_subject", 3);
      model.nonenrolled_fraction = s.value("nonenrolled_fraction", kDefaultNonEnrolledFraction);
      model.train_fraction = s.value("train_fraction", kDefaultTrainFraction);
      model.seed = config.seed;
      config.synthetic = model;
    } else {
      config.gallery_path = data.at("gallery").get<std::string>();
    }
    config.normalize = j.value("normalize", true);
    config.n1 = j.value("n1", 16);
    for (double k1 : j.value("k1", std::vector<double>{})) config.k1_values.push_back(k1);
    config.include_baseline = j.value("baseline", true);
    config.grid_n1 = j.value("grid_n1", std::vector<int>{});
    config.grid_k1_log2 = j.value("grid_k1_log2", std::vector<int>{});
    config.fusion = fusion_method_from_string(j.value("fusion", std::string("avg1")));
    config.pairing = pairing_method_from_string(j.value("pairing", std::string("score")));
    config.renormalize_fused = j.value("renormalize_fused", false);
    config.backend = scheme_from_string(j.value("backend", std::string("plaintext")));
    config.security_level = j.value("security_level", 128);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad experiment config: ") + e.what());
  }
  std::vector<double> sorted_k1 = config.k1_values;
  std::sort(sorted_k1.begin(), sorted_k1.end());
  if (std::adjacent_find(sorted_k1.begin(), sorted_k1.end()) != sorted_k1.end()) {
    throw DataError("duplicate k1 values in experiment config");
  }
  if (!config.include_baseline && config.k1_values.empty()) {
    throw DataError("experiment config selects neither baseline nor cascade runs");
  }
  return config;
}

ExperimentBundle run_experiment(const ExperimentConfig& config) {
  std::vector<SubjectRecord> records;
  if (config.synthetic && config.gallery_path) {
    throw DataError("experiment config names two data sources");
  }
  if (config.synthetic) {
    records = generate_synthetic(*config.synthetic);
  } else if (config.gallery_path) {
    records = read_embeddings(*config.gallery_path);
  } else {
    throw DataError("experiment config names no data source");
  }
  if (config.normalize) {
    for (auto& r : records) l2_normalize(r.embedding);
  }
  const ValidationReport validation = validate_gallery(records);
  if (!validation.valid()) {
    throw DataError("invalid gallery: " + validation.violations.front().what);
  }

  std::vector<SubjectRecord> references, probes_enrolled, probes_nonenrolled;
  std::vector<EmbeddingVector> train;
  for (auto& r : records) {
    switch (r.split) {
      case Split::kReference: references.push_back(r); break;
      case Split::kProbeEnrolled: probes_enrolled.push_back(r); break;
      case Split::kProbeNonEnrolled: probes_nonenrolled.push_back(r); break;
      case Split::kTrain: train.push_back(r.embedding); break;
    }
  }
  if (references.empty()) throw DataError("gallery has no reference split");
  const std::uint64_t gallery_size = references.size();

  const bool needs_stats =
      fusion_requires_stats(config.fusion) || config.backend == Scheme::kBinary;
  std::optional<TrainingStats> stats;
  if (needs_stats) {
    if (train.empty()) throw DataError("configuration requires a train split");
    stats = compute_training_stats(train);
  }

  BuildConfig build;
  build.fusion = config.fusion;
  build.pairing = config.pairing;
  build.n1 = config.n1;
  build.seed = config.seed;
  build.renormalize_fused = config.renormalize_fused;
  const IndexForest forest = build_index(references, build, stats ? &*stats : nullptr);

  // Optional protected execution: one encrypted index, probes encrypted per
  // transaction, scores decrypted client-side for pre-selection.
  std::unique_ptr<ComparisonBackend> backend;
  std::optional<KeyMaterial> keys;
  std::optional<ProtectedIndex> protected_index;
  std::optional<QuantizationParams> quant;
  NonceSource nonces(detail::mix64(config.seed ^ 0x70726F74ULL));
  if (config.backend != Scheme::kPlaintextRef) {
    backend = make_backend(config.backend);
    keys = generate_keys(config.backend, config.security_level,
                         detail::mix64(config.seed ^ 0x6B657973ULL));
    if (config.backend == Scheme::kExactInt) {
      if (train.empty()) throw DataError("the exact-int scheme requires a train split");
      quant = train_quantization(train);
    }
    protected_index = encrypt_index(forest, *backend, *keys, nonces,
                                    quant ? &*quant : nullptr, stats ? &*stats : nullptr);
  }

  auto cascade_lists = [&](const CascadeSchedule& schedule,
                           const std::vector<SubjectRecord>& probes) {
    std::vector<CandidateList> lists;
    lists.reserve(probes.size());
    for (const auto& p : probes) {
      if (protected_index) {
        const ProtectedTemplate enc_probe =
            encrypt_probe(*protected_index, *backend, p.embedding, *keys, nonces);
        const NodeScorer scorer = protected_scorer(*protected_index, *backend, enc_probe, *keys);
        lists.push_back(retrieve(protected_index->skeleton, schedule, scorer).candidates);
      } else {
        lists.push_back(retrieve(forest, schedule, plaintext_scorer(p.embedding)).candidates);
      }
    }
    return lists;
  };
  auto baseline_lists = [&](const std::vector<SubjectRecord>& probes) {
    std::vector<CandidateList> lists;
    lists.reserve(probes.size());
    for (const auto& p : probes) {
      if (protected_index) {
        const ProtectedTemplate enc_probe =
            encrypt_probe(*protected_index, *backend, p.embedding, *keys, nonces);
        const NodeScorer scorer = protected_scorer(*protected_index, *backend, enc_probe, *keys);
        lists.push_back(exhaustive_search(protected_index->skeleton, scorer));
      } else {
        lists.push_back(exhaustive_search(p.embedding, references));
      }
    }
    return lists;
  };

  auto evaluate_lists = [&](const std::vector<CandidateList>& enrolled_lists,
                            const std::vector<CandidateList>& nonenrolled_lists,
                            ConfigurationResult& result) {
    if (!probes_enrolled.empty()) {
      result.closed = closed_set_from_lists(probes_enrolled, enrolled_lists);
    }
    if (!probes_enrolled.empty() && !probes_nonenrolled.empty()) {
      std::vector<EnrolledOutcome> enrolled;
      enrolled.reserve(enrolled_lists.size());
      for (std::size_t i = 0; i < enrolled_lists.size(); ++i) {
        enrolled.push_back(enrolled_outcome(probes_enrolled[i], enrolled_lists[i]));
      }
      std::vector<double> nonenrolled;
      nonenrolled.reserve(nonenrolled_lists.size());
      for (const auto& list : nonenrolled_lists) nonenrolled.push_back(nonenrolled_score(list));
      result.open = open_set_from_outcomes(enrolled, nonenrolled);
    }
    auto record_traces = [&](const std::vector<SubjectRecord>& probes,
                             const std::vector<CandidateList>& lists) {
      for (std::size_t i = 0; i < probes.size(); ++i) {
        TransactionTrace trace;
        trace.probe_subject = probes[i].subject_id;
        trace.probe_sample = probes[i].sample_id;
        trace.partition = probes[i].split;
        trace.comparisons = result.workload.comparisons_total;
        if (!lists[i].entries.empty()) {
          trace.has_candidate = true;
          trace.top1_subject = lists[i].entries.front().subject_id;
          trace.top1_score = lists[i].entries.front().score;
        }
        result.transactions.push_back(trace);
      }
    };
    record_traces(probes_enrolled, enrolled_lists);
    record_traces(probes_nonenrolled, nonenrolled_lists);
  };

  ExperimentBundle bundle;
  bundle.gallery_size = gallery_size;
  bundle.enrolled_probes = probes_enrolled.size();
  bundle.nonenrolled_probes = probes_nonenrolled.size();

  for (int g_n1 : config.grid_n1) {
    for (int k1_log2 : config.grid_k1_log2) {
      const CascadeSchedule schedule =
          default_schedule(gallery_size, g_n1, std::pow(2.0, -k1_log2));
      const WorkloadReport report = workload_from_schedule(schedule, gallery_size);
      bundle.workload_matrix.push_back(
          {g_n1, k1_log2, report.comparisons_total, report.workload_percent});
    }
  }

  if (config.include_baseline) {
    ConfigurationResult result;
    result.label = "baseline";
    result.k1 = 0.0;
    result.workload.comparisons_total = gallery_size;
    result.workload.comparisons_per_level = {gallery_size};
    result.workload.gallery_size = gallery_size;
    result.workload.workload_percent = 100.0;
    evaluate_lists(baseline_lists(probes_enrolled), baseline_lists(probes_nonenrolled), result);
    bundle.results.push_back(std::move(result));
  }

  for (double k1 : config.k1_values) {
    const CascadeSchedule schedule = k1 == 1.0 ? keep_all_schedule(gallery_size, config.n1)
                                               : default_schedule(gallery_size, config.n1, k1);
    ConfigurationResult result;
    result.label = "n1=" + std::to_string(config.n1) + " k1=" + pretty_k1(k1);
    result.n1 = config.n1;
    result.k1 = k1;
    result.workload = workload_from_schedule(schedule, gallery_size);
    result.comparisons_per_level = result.workload.comparisons_per_level;
    evaluate_lists(cascade_lists(schedule, probes_enrolled),
                   cascade_lists(schedule, probes_nonenrolled), result);
    bundle.results.push_back(std::move(result));
  }
  return bundle;
}

void write_bundle(const ExperimentBundle& bundle, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory: " + out_dir);
  std::vector<std::string> written;
  char buf[256];

  {
    std::string csv = "n1,k1_log2,comparisons,workload_percent\n";
    for (const auto& row : bundle.workload_matrix) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%" PRIu64 ",%.2f\n", row.n1, row.k1_log2,
                    row.comparisons, row.workload_percent);
      csv += buf;
    }
    io::write_file_atomic(out_dir + "/workload_matrix.csv", csv);
    written.push_back("workload_matrix.csv");
  }

  for (const auto& result : bundle.results) {
    const std::string file_tag =
        result.label == "baseline" ? "baseline" : file_label(result.n1, result.k1);
    if (!result.closed.cmc.empty()) {
      std::string csv = "rank,ir_percent\n";
      for (const auto& [rank, ir] : result.closed.cmc) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f\n", rank, ir);
        csv += buf;
      }
      io::write_file_atomic(out_dir + "/cmc_" + file_tag + ".csv", csv);
      written.push_back("cmc_" + file_tag + ".csv");
    }
    if (!result.open.det.empty()) {
      std::string csv = "threshold,fpir_percent,fnir_percent\n";
      for (const auto& p : result.open.det) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.6f,%.6f\n", p.threshold, p.fpir, p.fnir);
        csv += buf;
      }
      io::write_file_atomic(out_dir + "/det_" + file_tag + ".csv", csv);
      written.push_back("det_" + file_tag + ".csv");
    }
    {
      // Comparison counts per level are probe-independent; one header line
      // records them ahead of the per-transaction rows.
      std::string csv = "# compared_per_level=";
      const auto& per_level = result.workload.comparisons_per_level;
      for (std::size_t l = 0; l < per_level.size(); ++l) {
        if (l > 0) csv += '|';
        csv += std::to_string(per_level[l]);
      }
      csv += "\nprobe_subject_id,probe_sample_id,partition,comparisons,top1_subject_id,top1_score\n";
      for (const auto& t : result.transactions) {
        std::snprintf(buf, sizeof(buf), "%" PRIu64 ",%" PRIu64 ",%s,%" PRIu64 ",%" PRIu64 ",%.9g\n",
                      t.probe_subject, t.probe_sample, to_string(t.partition), t.comparisons,
                      t.has_candidate ? t.top1_subject : 0, t.has_candidate ? t.top1_score : -1.0);
        csv += buf;
      }
      io::write_file_atomic(out_dir + "/trace_" + file_tag + ".csv", csv);
      written.push_back("trace_" + file_tag + ".csv");
    }
  }

  {
    std::string summary = "configuration\tworkload_percent\teer_percent\tfnir1000_percent\trr1_percent\n";
    for (const auto& result : bundle.results) {
      std::snprintf(buf, sizeof(buf), "%s\t%.2f\t%.2f\t%.2f\t%.2f\n", result.label.c_str(),
                    result.workload.workload_percent, result.open.eer,
                    result.open.fnir_at_fpir_0_1pct, result.closed.rr1);
      summary += buf;
    }
    io::write_file_atomic(out_dir + "/summary.txt", summary);
    written.push_back("summary.txt");
  }

  io::write_manifest(out_dir + "/manifest.txt", out_dir, written);
}

}  // namespace biocascade
