// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Every tolerance is pinned here, in code.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "biocascade/data_io.hpp"
#include "biocascade/detail/rng.hpp"
#include "biocascade/evaluation.hpp"
#include "biocascade/fusion.hpp"
#include "biocascade/index_builder.hpp"
#include "biocascade/protection.hpp"
#include "biocascade/retrieval.hpp"

using namespace biocascade;

namespace {

int g_failures = 0;
bool g_current_ok = true;
std::string g_current_detail;

void expect(bool condition, const std::string& detail) {
  if (!condition && g_current_ok) {
    g_current_ok = false;
    g_current_detail = detail;
  }
}

void criterion(int number, const std::string& title, const std::function<void()>& body) {
  g_current_ok = true;
  g_current_detail.clear();
  try {
    body();
  } catch (const std::exception& e) {
    g_current_ok = false;
    g_current_detail = std::string("exception: ") + e.what();
  }
  if (g_current_ok) {
    std::printf("[PASS] criterion %d: %s\n", number, title.c_str());
  } else {
    std::printf("[FAIL] criterion %d: %s (%s)\n", number, title.c_str(),
                g_current_detail.c_str());
    ++g_failures;
  }
  std::fflush(stdout);
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::vector<SubjectRecord> split_of(const std::vector<SubjectRecord>& records, Split split) {
  std::vector<SubjectRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

std::string scratch(const std::string& tag) {
  const std::string dir = std::filesystem::temp_directory_path() / ("biocascade_acc_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BIOCASCADE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

std::string slurp(const std::string& path) {
  const auto bytes = io::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

bool contains_bytes(const std::string& path, const std::array<std::uint8_t, 32>& needle) {
  const auto bytes = io::read_file(path);
  return std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end()) != bytes.end();
}

// --------------------------------------------------------------------------

void criterion_1_workload_goldens() {
  struct Golden {
    double k1;
    std::uint64_t total;
    double percent;
  };
  for (const Golden& g : {Golden{0.5, 736, 17.97}, Golden{0.25, 496, 12.11},
                          Golden{0.125, 376, 9.18}}) {
    const WorkloadReport report =
        workload_from_schedule(default_schedule(4096, 16, g.k1), 4096);
    expect(report.comparisons_total == g.total,
           "k1=" + std::to_string(g.k1) + " gave " + std::to_string(report.comparisons_total) +
               " comparisons, expected " + std::to_string(g.total));
    expect(round2(report.workload_percent) == g.percent,
           "k1=" + std::to_string(g.k1) + " gave W=" +
               std::to_string(report.workload_percent) + "%, expected " +
               std::to_string(g.percent));
  }
}

void criterion_2_lower_bound() {
  const WorkloadReport bound = lower_bound_workload(4096, 8);
  expect(bound.comparisons_total == 518,
         "expected 518 comparisons, got " + std::to_string(bound.comparisons_total));
  expect(round2(bound.workload_percent) == 12.65,
         "expected 12.65%, got " + std::to_string(bound.workload_percent));
}

void criterion_3_limit() {
  const WorkloadReport bound = lower_bound_workload(std::uint64_t{1} << 20, 16);
  expect(std::abs(bound.workload_percent - 6.25) <= 0.01,
         "W=" + std::to_string(bound.workload_percent) + "% is not within 0.01pp of 6.25%");
}

void criterion_4_keep_all_exactness() {
  const auto start = std::chrono::steady_clock::now();
  SyntheticModel model;
  model.num_subjects = 4096;
  model.dim = 512;
  model.intra_class_sigma = 0.1;
  model.samples_per_subject = 1;
  model.seed = 42;
  model.nonenrolled_fraction = 0.0;
  model.train_fraction = 0.0;
  const auto records = generate_synthetic(model);
  const auto references = split_of(records, Split::kReference);
  const auto probes = split_of(records, Split::kProbeEnrolled);

  BuildConfig config;
  config.n1 = 16;
  config.pairing = PairingMethodId::kRandom;
  config.seed = 42;
  const IndexForest forest = build_index(references, config);
  const CascadeSchedule keep_all = keep_all_schedule(4096, 16);

  std::size_t agreements = 0;
  const std::size_t transactions = 1000;
  for (std::size_t p = 0; p < transactions; ++p) {
    const auto& probe = probes[p].embedding;
    const auto cascade = retrieve(forest, keep_all, plaintext_scorer(probe)).candidates;
    const auto baseline = exhaustive_search(probe, references);
    if (cascade.entries.front().subject_id == baseline.entries.front().subject_id) {
      ++agreements;
    }
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  expect(agreements == transactions,
         std::to_string(agreements) + "/" + std::to_string(transactions) + " top-1 agreements");
  expect(seconds < 120.0, "took " + std::to_string(seconds) + "s, budget is 120s");
  std::printf("       keep-all exactness: %zu/%zu transactions in %.1fs\n", agreements,
              transactions, seconds);
}

void criterion_5_fusion_suite() {
  TrainingStats mu0, mu2, mu4;
  mu0.mu = {0, 0};
  mu2.mu = {2, 2};
  mu4.mu = {4, 4, 4};
  expect(fuse({1, 3}, {3, 1}, FusionMethodId::kAverage1) == EmbeddingVector{2, 2}, "avg1");
  expect(fuse({1, 3}, {3, 1}, FusionMethodId::kAverage2, &mu0) == EmbeddingVector{5, 5}, "avg2");
  expect(fuse({1, 3}, {4, 2}, FusionMethodId::kDistance1, &mu2) == EmbeddingVector{4, 3},
         "dist1");
  expect(fuse({5, 2, 9}, {3, 8, 4}, FusionMethodId::kDistance2, &mu4) == EmbeddingVector{3, 8, 9},
         "dist2");
  expect(fuse({1, 2, 3, 4}, {5, 6, 7, 8}, FusionMethodId::kIndex1) == EmbeddingVector{1, 2, 7, 8},
         "idx1");
  expect(fuse({1, 2, 3, 4}, {5, 6, 7, 8}, FusionMethodId::kIndex2) == EmbeddingVector{1, 6, 3, 8},
         "idx2");
  expect(fuse_group(std::vector<EmbeddingVector>{{0, 4}, {2, 2}, {4, 0}, {2, 2}},
                    FusionMethodId::kAverage1) == EmbeddingVector{2, 2},
         "group grand mean");

  detail::Rng rng(5);
  double worst_rel = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t count = std::size_t{1} << (1 + rng.uniform_below(4));  // 2..16
    const std::size_t dim = 1 + rng.uniform_below(8);
    std::vector<EmbeddingVector> members;
    for (std::size_t i = 0; i < count; ++i) {
      EmbeddingVector v(dim);
      for (auto& x : v) x = rng.normal();
      members.push_back(std::move(v));
    }
    const auto fused = fuse_group(members, FusionMethodId::kAverage1);
    for (std::size_t d = 0; d < dim; ++d) {
      double sum = 0.0;
      for (const auto& m : members) sum += m[d];
      const double flat = sum / static_cast<double>(count);
      const double rel = std::abs(fused[d] - flat) / std::max(1.0, std::abs(flat));
      worst_rel = std::max(worst_rel, rel);
    }
  }
  expect(worst_rel <= 1e-12,
         "hierarchical/flat mean relative error " + std::to_string(worst_rel));
}

void criterion_6_pairing_oracle() {
  detail::Rng rng(6);
  std::size_t perfect = 0, bounded = 0;
  const int trials = 1000;
  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t n = 2 * (1 + rng.uniform_below(5));  // 2..10
    CostMatrix c(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double v = 0.01 + rng.uniform01();
        c.set(i, j, v);
        c.set(j, i, v);
      }
    }
    const PairingResult pipeline = extract_pairs(solve_assignment(c), c);
    const PairingResult optimal = brute_force_matching(c);
    std::vector<int> seen(n, 0);
    bool ok = pipeline.pairs.size() == n / 2;
    for (const auto& [a, b] : pipeline.pairs) {
      if (a == b) ok = false;
      ++seen[a];
      ++seen[b];
    }
    for (int s : seen) {
      if (s != 1) ok = false;
    }
    if (ok) ++perfect;
    if (pipeline.total_cost >= optimal.total_cost - 1e-9) ++bounded;
  }
  expect(perfect == trials, std::to_string(perfect) + "/1000 perfect matchings");
  expect(bounded == trials,
         std::to_string(bounded) + "/1000 instances respected the brute-force bound");

  // Directional check: optimized pairing is cheaper than chance on average.
  detail::Rng data_rng(7);
  double score_total = 0.0, random_total = 0.0;
  for (int seed = 1; seed <= 100; ++seed) {
    std::vector<EmbeddingVector> refs;
    for (int i = 0; i < 32; ++i) {
      EmbeddingVector v(16);
      for (auto& x : v) x = data_rng.normal();
      l2_normalize(v);
      refs.push_back(std::move(v));
    }
    const CostMatrix c = cost_matrix_scores(refs);
    const auto scored = pair_hierarchy(refs, {}, PairingMethodId::kSimilarityScore, 2,
                                       FusionMethodId::kAverage1, nullptr, seed);
    const auto random = pair_hierarchy(refs, {}, PairingMethodId::kRandom, 2,
                                       FusionMethodId::kAverage1, nullptr, seed);
    for (const auto& group : scored.groups_per_level[1]) score_total += c.sym_at(group[0], group[1]);
    for (const auto& group : random.groups_per_level[1]) random_total += c.sym_at(group[0], group[1]);
  }
  expect(score_total < random_total,
         "score pairing mean cost " + std::to_string(score_total / 100.0) +
             " not below random " + std::to_string(random_total / 100.0));
  std::printf("       pairing cost means over 100 seeds: score %.4f, random %.4f\n",
              score_total / 100.0, random_total / 100.0);
}

void criterion_7_protection_contract() {
  detail::Rng rng(8);
  NonceSource nonces(9);

  const auto approx = make_backend(Scheme::kApproxReal);
  const auto exact = make_backend(Scheme::kExactInt);
  const auto binary = make_backend(Scheme::kBinary);
  const KeyMaterial approx_keys = generate_keys(Scheme::kApproxReal, 128, 81);
  const KeyMaterial exact_keys = generate_keys(Scheme::kExactInt, 128, 82);
  const KeyMaterial binary_keys = generate_keys(Scheme::kBinary, 128, 83);

  double worst_approx = 0.0;
  bool exact_ok = true, binary_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    RealTemplate ra(64), rb(64);
    for (auto& x : ra) x = rng.normal();
    for (auto& x : rb) x = rng.normal();
    const double approx_score = approx->decrypt_score(
        approx->compare(approx->encrypt(ra, approx_keys, nonces),
                        approx->encrypt(rb, approx_keys, nonces), approx_keys, nonces),
        approx_keys);
    worst_approx = std::max(worst_approx, std::abs(approx_score - squared_distance(ra, rb)));

    IntTemplate ia(64), ib(64);
    for (auto& x : ia) x = static_cast<std::int32_t>(rng.uniform_below(256));
    for (auto& x : ib) x = static_cast<std::int32_t>(rng.uniform_below(256));
    std::uint64_t int_truth = 0;
    for (std::size_t i = 0; i < ia.size(); ++i) {
      const std::int64_t d = static_cast<std::int64_t>(ia[i]) - ib[i];
      int_truth += static_cast<std::uint64_t>(d * d);
    }
    const double int_score = exact->decrypt_score(
        exact->compare(exact->encrypt(ia, exact_keys, nonces),
                       exact->encrypt(ib, exact_keys, nonces), exact_keys, nonces),
        exact_keys);
    if (int_score != static_cast<double>(int_truth)) exact_ok = false;

    BitTemplate ba(64), bb(64);
    for (auto& x : ba) x = static_cast<std::uint8_t>(rng.uniform_below(2));
    for (auto& x : bb) x = static_cast<std::uint8_t>(rng.uniform_below(2));
    std::uint64_t bit_truth = 0;
    for (std::size_t i = 0; i < ba.size(); ++i) bit_truth += ba[i] ^ bb[i];
    const double bit_score = binary->decrypt_score(
        binary->compare(binary->encrypt(ba, binary_keys, nonces),
                        binary->encrypt(bb, binary_keys, nonces), binary_keys, nonces),
        binary_keys);
    if (bit_score != static_cast<double>(bit_truth)) binary_ok = false;
  }
  expect(worst_approx <= 1e-3,
         "approx-real worst error " + std::to_string(worst_approx) + " exceeds 1e-3");
  expect(exact_ok, "exact-int comparison mismatch");
  expect(binary_ok, "binary comparison mismatch after client-side summation");

  // Re-encryption never collides across 10^3 trials per scheme.
  for (const auto& [backend, keys] :
       {std::pair<const ComparisonBackend*, const KeyMaterial*>{approx.get(), &approx_keys},
        {exact.get(), &exact_keys},
        {binary.get(), &binary_keys}}) {
    TemplatePayload plain;
    if (backend->scheme() == Scheme::kApproxReal) {
      RealTemplate v(64);
      for (auto& x : v) x = rng.normal();
      plain = std::move(v);
    } else if (backend->scheme() == Scheme::kExactInt) {
      IntTemplate v(64);
      for (auto& x : v) x = static_cast<std::int32_t>(rng.uniform_below(256));
      plain = std::move(v);
    } else {
      BitTemplate v(64);
      for (auto& x : v) x = static_cast<std::uint8_t>(rng.uniform_below(2));
      plain = std::move(v);
    }
    std::set<std::vector<std::uint8_t>> seen;
    std::size_t collisions = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      if (!seen.insert(backend->encrypt(plain, *keys, nonces).payload).second) ++collisions;
    }
    expect(collisions == 0, std::string(to_string(backend->scheme())) + " had " +
                                std::to_string(collisions) + "/1000 ciphertext collisions");
  }

  // End-to-end: candidate lists identical before and after rekeying a
  // 64-subject protected forest.
  SyntheticModel model;
  model.num_subjects = 64;
  model.dim = 32;
  model.intra_class_sigma = 0.05;
  model.samples_per_subject = 1;
  model.seed = 84;
  model.nonenrolled_fraction = 0.0;
  model.train_fraction = 0.0;
  const auto records = generate_synthetic(model);
  const auto references = split_of(records, Split::kReference);
  BuildConfig config;
  config.n1 = 16;
  config.pairing = PairingMethodId::kRandom;
  config.seed = 84;
  const IndexForest forest = build_index(references, config);
  const KeyMaterial old_keys = generate_keys(Scheme::kApproxReal, 128, 85);
  const KeyMaterial new_keys = generate_keys(Scheme::kApproxReal, 128, 86);
  const ProtectedIndex index = encrypt_index(forest, *approx, old_keys, nonces);
  const ProtectedIndex rekeyed = rekey_index(index, *approx, old_keys, new_keys, nonces);
  const CascadeSchedule schedule = default_schedule(64, 16, 0.5);
  const auto probes = split_of(records, Split::kProbeEnrolled);
  bool lists_identical = true;
  for (const auto& probe : probes) {
    const auto before =
        retrieve(index.skeleton, schedule,
                 protected_scorer(index, *approx,
                                  encrypt_probe(index, *approx, probe.embedding, old_keys, nonces),
                                  old_keys))
            .candidates;
    const auto after =
        retrieve(rekeyed.skeleton, schedule,
                 protected_scorer(rekeyed, *approx,
                                  encrypt_probe(rekeyed, *approx, probe.embedding, new_keys,
                                                nonces),
                                  new_keys))
            .candidates;
    if (before.entries.size() != after.entries.size()) lists_identical = false;
    for (std::size_t i = 0; i < before.entries.size() && lists_identical; ++i) {
      if (before.entries[i].subject_id != after.entries[i].subject_id) lists_identical = false;
    }
  }
  expect(lists_identical, "candidate lists changed across rekey");

  // Secret key material never appears in persisted artifacts.
  const std::string dir = scratch("secret_scan");
  write_protected_index(index, dir + "/index.bidx");
  write_protected_index(rekeyed, dir + "/rekeyed.bidx");
  write_key_file(old_keys, dir + "/old_public.bkey", false);
  write_key_file(new_keys, dir + "/new_public.bkey", false);
  for (const std::string name :
       {"index.bidx", "rekeyed.bidx", "old_public.bkey", "new_public.bkey"}) {
    expect(!contains_bytes(dir + "/" + name, old_keys.secret_part),
           "old secret bytes leaked into " + name);
    expect(!contains_bytes(dir + "/" + name, new_keys.secret_part),
           "new secret bytes leaked into " + name);
  }
}

void criterion_8_separable_metrics() {
  SyntheticModel model;
  model.num_subjects = 256;
  model.dim = 256;
  model.intra_class_sigma = 0.02;
  model.samples_per_subject = 3;
  model.seed = 88;
  model.nonenrolled_fraction = 0.25;
  model.train_fraction = 0.0;
  const auto records = generate_synthetic(model);
  const auto references = split_of(records, Split::kReference);
  const auto probes_enrolled = split_of(records, Split::kProbeEnrolled);
  const auto probes_nonenrolled = split_of(records, Split::kProbeNonEnrolled);

  // The chosen sigma must actually separate the classes: every mated
  // probe-reference distance below every non-mated one.
  double max_mated = 0.0, min_nonmated = std::numeric_limits<double>::infinity();
  auto scan = [&](const std::vector<SubjectRecord>& probes) {
    for (const auto& p : probes) {
      for (const auto& r : references) {
        const double d = squared_distance(p.embedding, r.embedding);
        if (p.subject_id == r.subject_id) {
          max_mated = std::max(max_mated, d);
        } else {
          min_nonmated = std::min(min_nonmated, d);
        }
      }
    }
  };
  scan(probes_enrolled);
  scan(probes_nonenrolled);
  expect(max_mated < min_nonmated, "synthetic data is not separable at this sigma");

  std::set<SubjectId> enrolled;
  for (const auto& r : references) enrolled.insert(r.subject_id);

  BuildConfig config;
  config.n1 = 16;
  config.pairing = PairingMethodId::kSimilarityScore;
  config.seed = 88;
  const IndexForest forest = build_index(references, config);

  const SystemFn baseline_system = [&](const SubjectRecord& p) {
    return exhaustive_search(p.embedding, references);
  };
  const CascadeSchedule half = default_schedule(256, 16, 0.5);
  const SystemFn cascade_half = [&](const SubjectRecord& p) {
    return retrieve(forest, half, plaintext_scorer(p.embedding)).candidates;
  };
  const CascadeSchedule keep_all = keep_all_schedule(256, 16);
  const SystemFn cascade_all = [&](const SubjectRecord& p) {
    return retrieve(forest, keep_all, plaintext_scorer(p.embedding)).candidates;
  };

  const ClosedSetResult closed_base = closed_set_eval(probes_enrolled, enrolled, baseline_system);
  expect(closed_base.rr1 == 100.0,
         "baseline RR-1 " + std::to_string(closed_base.rr1) + " != 100");

  const ClosedSetResult closed_half = closed_set_eval(probes_enrolled, enrolled, cascade_half);
  expect(closed_half.rr1 >= 99.5,
         "cascade RR-1 " + std::to_string(closed_half.rr1) + " below 99.5");
  std::printf("       separable data: baseline RR-1 %.2f%%, cascade RR-1 %.2f%%\n",
              closed_base.rr1, closed_half.rr1);

  for (std::size_t i = 1; i < closed_half.cmc.size(); ++i) {
    expect(closed_half.cmc[i].second >= closed_half.cmc[i - 1].second, "CMC not monotone");
  }
  const std::size_t shared = std::min(closed_half.cmc.size(), closed_base.cmc.size());
  for (std::size_t i = 0; i < shared; ++i) {
    expect(closed_half.cmc[i].second <= closed_base.cmc[i].second + 1e-12,
           "cascade IR exceeded baseline IR at rank " + std::to_string(i + 1));
  }

  const ClosedSetResult closed_keep = closed_set_eval(probes_enrolled, enrolled, cascade_all);
  expect(closed_keep.cmc.size() == closed_base.cmc.size(), "keep-all CMC length differs");
  for (std::size_t i = 0; i < closed_keep.cmc.size(); ++i) {
    expect(closed_keep.cmc[i].second == closed_base.cmc[i].second,
           "keep-all CMC differs from baseline");
  }
  const OpenSetResult open_base =
      open_set_eval(probes_enrolled, probes_nonenrolled, baseline_system);
  const OpenSetResult open_keep = open_set_eval(probes_enrolled, probes_nonenrolled, cascade_all);
  expect(open_base.eer == open_keep.eer, "keep-all EER differs from baseline");
  expect(open_base.fnir_at_fpir_0_1pct == open_keep.fnir_at_fpir_0_1pct,
         "keep-all FNIR@FPIR=0.1% differs from baseline");
}

void criterion_9_cli_determinism() {
  const std::string dir = scratch("cli_det");
  const std::string cfg = dir + "/config.json";
  io::write_file_atomic(cfg, std::string(R"({
    "version": 1,
    "seed": 17,
    "data": {"synthetic": {"subjects": 128, "dim": 16, "sigma": 0.05, "samples_per_subject": 2}},
    "n1": 8,
    "k1": [0.5, 0.25],
    "baseline": true,
    "pairing": "score",
    "grid_n1": [2, 4, 8],
    "grid_k1_log2": [1, 2, 3]
  })"));

  struct Step {
    std::string name;
    std::string args_template;  // %O replaced per run
    std::string manifest;      // relative to the %O expansion
  };
  const std::vector<Step> steps = {
      {"generate", "generate --subjects 128 --dim 32 --sigma 0.1 --seed 17 --out %O/g.bemb",
       "%O/g.bemb.manifest"},
      {"keygen", "keygen --scheme approx_real --seed 18 --out %O/k.bkey", "%O/k.bkey"},
      {"build-index",
       "build-index --gallery " + dir + "/run1/g.bemb --n1 8 --pairing score --seed 19 "
       "--out %O/i.bidx",
       "%O/i.bidx.manifest"},
      {"build-index-encrypted",
       "build-index --gallery " + dir + "/run1/g.bemb --n1 8 --pairing score --seed 19 "
       "--encrypt approx_real --keys " + dir + "/run1/k.bkey --out %O/ienc.bidx",
       "%O/ienc.bidx.manifest"},
      {"identify",
       "identify --index " + dir + "/run1/i.bidx --probes " + dir + "/run1/g.bemb "
       "--k1 0.5 --baseline --out %O/ident",
       "%O/ident/manifest.txt"},
      {"identify-encrypted",
       "identify --index " + dir + "/run1/ienc.bidx --probes " + dir + "/run1/g.bemb "
       "--k1 0.5 --keys " + dir + "/run1/k.bkey --seed 20 --out %O/identenc",
       "%O/identenc/manifest.txt"},
      {"evaluate", "evaluate --config " + cfg + " --out-dir %O/eval", "%O/eval/manifest.txt"},
      {"rekey",
       "rekey --index " + dir + "/run1/ienc.bidx --old-keys " + dir + "/run1/k.bkey "
       "--new-keys " + dir + "/run1/k2.bkey --seed 21 --out %O/irk.bidx",
       "%O/irk.bidx.manifest"},
  };

  // Both runs need the second key for the rekey step.
  for (const std::string run : {"run1", "run2"}) {
    std::filesystem::create_directories(dir + "/" + run);
    expect(run_cli("keygen --scheme approx_real --seed 22 --out " + dir + "/" + run +
                   "/k2.bkey") == 0,
           "keygen for " + run + " failed");
  }

  for (const Step& step : steps) {
    std::vector<std::string> manifests;
    for (const std::string run : {"run1", "run2"}) {
      std::string args = step.args_template;
      std::string manifest = step.manifest;
      const std::string out = dir + "/" + run;
      for (std::string* s : {&args, &manifest}) {
        std::size_t pos;
        while ((pos = s->find("%O")) != std::string::npos) s->replace(pos, 2, out);
      }
      expect(run_cli(args) == 0, step.name + " failed in " + run);
      manifests.push_back(slurp(manifest));
    }
    expect(manifests[0] == manifests[1], step.name + " outputs differ across identical runs");
  }
}

}  // namespace

int main() {
  criterion(1, "cascade comparison totals 736/496/376 at N=4096, n1=16",
            criterion_1_workload_goldens);
  criterion(2, "all-ones lower bound 518 comparisons = 12.65% at n1=8", criterion_2_lower_bound);
  criterion(3, "all-ones workload within 0.01pp of 6.25% at N=2^20, n1=16", criterion_3_limit);
  criterion(4, "keep-all cascade equals exhaustive top-1 on 1000 probes",
            criterion_4_keep_all_exactness);
  criterion(5, "fusion operator examples and hierarchical mean identity", criterion_5_fusion_suite);
  criterion(6, "pairing is a bounded perfect matching; score beats random",
            criterion_6_pairing_oracle);
  criterion(7, "protected comparison contract, unlinkability, rekey, secret scan",
            criterion_7_protection_contract);
  criterion(8, "separable-data metrics: baseline 100%, cascade >= 99.5%, keep-all parity",
            criterion_8_separable_metrics);
  criterion(9, "every CLI command is byte-deterministic under its seed",
            criterion_9_cli_determinism);

  if (g_failures == 0) {
    std::printf("all acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d acceptance criteria failed\n", g_failures);
  return 1;
}
