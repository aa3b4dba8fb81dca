// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: synthetic gallery generation, index building,
// identification runs, metric evaluation, and key management.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "biocascade/data_io.hpp"
#include "biocascade/evaluation.hpp"
#include "biocascade/fusion.hpp"
#include "biocascade/index_builder.hpp"
#include "biocascade/protection.hpp"
#include "biocascade/retrieval.hpp"

namespace bc = biocascade;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerateArgs {
  std::uint64_t subjects = 0;
  std::uint32_t dim = 512;
  double sigma = 0.1;
  std::uint64_t seed = 1;
  int samples_per_subject = 3;
  double nonenrolled_fraction = bc::kDefaultNonEnrolledFraction;
  double train_fraction = bc::kDefaultTrainFraction;
  std::string out;
};

void run_generate(const GenerateArgs& args) {
  bc::SyntheticModel model;
  model.num_subjects = args.subjects;
  model.dim = args.dim;
  model.intra_class_sigma = args.sigma;
  model.seed = args.seed;
  model.samples_per_subject = args.samples_per_subject;
  model.nonenrolled_fraction = args.nonenrolled_fraction;
  model.train_fraction = args.train_fraction;
  const auto records = bc::generate_synthetic(model);
  bc::write_embeddings(records, args.out);

  const fs::path out_path(args.out);
  const std::string dir = out_path.parent_path().string();
  const std::string name = out_path.filename().string();
  bc::io::write_manifest(args.out + ".manifest", dir, {name, name + ".meta"});
  std::printf("wrote %zu records to %s\n", records.size(), args.out.c_str());
}

std::vector<bc::SubjectRecord> load_gallery(const std::string& path, bool normalize) {
  auto records = bc::read_embeddings(path);
  if (normalize) {
    for (auto& r : records) bc::l2_normalize(r.embedding);
  }
  const bc::ValidationReport report = bc::validate_gallery(records);
  if (!report.valid()) {
    throw bc::DataError("invalid gallery " + path + ": " + report.violations.front().what);
  }
  return records;
}

std::vector<bc::EmbeddingVector> training_vectors(const std::string& stats_path, bool normalize) {
  const auto records = bc::read_embeddings(stats_path);
  std::vector<bc::EmbeddingVector> train;
  for (const auto& r : records) {
    if (r.split == bc::Split::kTrain) train.push_back(r.embedding);
  }
  if (train.empty()) {
    // No train split present: treat the whole file as training material.
    for (const auto& r : records) train.push_back(r.embedding);
  }
  if (normalize) {
    for (auto& v : train) bc::l2_normalize(v);
  }
  return train;
}

struct BuildArgs {
  std::string gallery;
  int n1 = 16;
  std::string fusion = "avg1";
  std::string pairing = "score";
  std::string stats_path;
  std::string out;
  std::uint64_t seed = 1;
  bool no_normalize = false;
  bool renormalize_fused = false;
  std::string encrypt_scheme;
  std::string keys_path;
  int quant_bits = 8;
};

void run_build_index(const BuildArgs& args) {
  const bc::FusionMethodId fusion = bc::fusion_method_from_string(args.fusion);
  const bc::PairingMethodId pairing = bc::pairing_method_from_string(args.pairing);
  if (bc::fusion_requires_stats(fusion) && args.stats_path.empty()) {
    throw UsageError("--fusion " + args.fusion + " requires --stats");
  }
  std::optional<bc::Scheme> scheme;
  if (!args.encrypt_scheme.empty()) {
    scheme = bc::scheme_from_string(args.encrypt_scheme);
    if (args.keys_path.empty()) throw UsageError("--encrypt requires --keys");
    if ((*scheme == bc::Scheme::kExactInt || *scheme == bc::Scheme::kBinary) &&
        args.stats_path.empty()) {
      throw UsageError("--encrypt " + args.encrypt_scheme + " requires --stats");
    }
  }

  const auto records = load_gallery(args.gallery, !args.no_normalize);
  std::vector<bc::SubjectRecord> references;
  for (const auto& r : records) {
    if (r.split == bc::Split::kReference) references.push_back(r);
  }
  if (references.empty()) throw bc::DataError("gallery has no reference split");

  std::optional<bc::TrainingStats> stats;
  std::vector<bc::EmbeddingVector> train;
  if (!args.stats_path.empty()) {
    train = training_vectors(args.stats_path, !args.no_normalize);
    stats = bc::compute_training_stats(train);
  }

  bc::BuildConfig config;
  config.fusion = fusion;
  config.pairing = pairing;
  config.n1 = args.n1;
  config.seed = args.seed;
  config.renormalize_fused = args.renormalize_fused;
  const bc::IndexForest forest = bc::build_index(references, config, stats ? &*stats : nullptr);

  if (!scheme) {
    bc::write_index(forest, args.out);
  } else {
    const bc::KeyMaterial keys = bc::read_key_file(args.keys_path);
    const auto backend = bc::make_backend(*scheme);
    bc::NonceSource nonces(args.seed ^ 0x656E6372ULL);
    std::optional<bc::QuantizationParams> quant;
    if (*scheme == bc::Scheme::kExactInt) {
      quant = bc::train_quantization(train, args.quant_bits);
    }
    const bc::ProtectedIndex index = bc::encrypt_index(
        forest, *backend, keys, nonces, quant ? &*quant : nullptr, stats ? &*stats : nullptr);
    bc::write_protected_index(index, args.out);
  }

  const fs::path out_path(args.out);
  bc::io::write_manifest(args.out + ".manifest", out_path.parent_path().string(),
                         {out_path.filename().string()});
  std::printf("built index over %zu subjects (%zu trees) into %s\n", references.size(),
              forest.trees.size(), args.out.c_str());
}

bool index_file_is_protected(const std::string& path) {
  const auto bytes = bc::io::read_file(path);
  if (bytes.size() < 9 || std::memcmp(bytes.data(), "BIDX", 4) != 0) {
    throw bc::DataError("bad magic in " + path);
  }
  return bytes[8] != 0;
}

struct IdentifyArgs {
  std::string index;
  std::string probes;
  double k1 = 0.0;
  bool k1_set = false;
  std::string schedule_csv;
  std::string backend;
  std::string keys_path;
  bool baseline = false;
  std::string out_dir;
  std::uint64_t top = 0;
  bool no_normalize = false;
  std::uint64_t seed = 1;
};

void append_candidates(std::string& csv, const bc::SubjectRecord& probe,
                       const bc::CandidateList& list, std::uint64_t top) {
  char buf[192];
  const std::size_t limit =
      top == 0 ? list.entries.size() : std::min<std::size_t>(top, list.entries.size());
  for (std::size_t i = 0; i < limit; ++i) {
    std::snprintf(buf, sizeof(buf), "%" PRIu64 ",%" PRIu64 ",%s,%zu,%" PRIu64 ",%.9g\n",
                  probe.subject_id, probe.sample_id, bc::to_string(probe.split), i + 1,
                  list.entries[i].subject_id, list.entries[i].score);
    csv += buf;
  }
}

void run_identify(const IdentifyArgs& args) {
  if (args.k1_set == !args.schedule_csv.empty()) {
    throw UsageError("exactly one of --k1 and --schedule is required");
  }

  const bool is_protected = index_file_is_protected(args.index);
  bc::IndexForest plain_forest;
  std::optional<bc::ProtectedIndex> prot;
  std::optional<bc::KeyMaterial> keys;
  std::unique_ptr<bc::ComparisonBackend> backend;
  if (is_protected) {
    prot = bc::read_protected_index(args.index);
    if (!args.backend.empty() && bc::scheme_from_string(args.backend) != prot->scheme) {
      throw bc::DataError("--backend does not match the index scheme (" +
                          std::string(bc::to_string(prot->scheme)) + ")");
    }
    if (args.keys_path.empty()) {
      throw bc::DataError("index is encrypted; --keys is required");
    }
    keys = bc::read_key_file(args.keys_path);
    if (keys->key_id != prot->key_id) {
      throw bc::DataError("key file does not match the index key id");
    }
    backend = bc::make_backend(prot->scheme);
  } else {
    if (!args.backend.empty() &&
        bc::scheme_from_string(args.backend) != bc::Scheme::kPlaintextRef) {
      throw bc::DataError("index is unprotected; only --backend plaintext applies");
    }
    plain_forest = bc::read_index(args.index);
  }
  const bc::IndexForest& forest = is_protected ? prot->skeleton : plain_forest;
  const std::uint64_t gallery_size = forest.subject_count();

  bc::CascadeSchedule schedule;
  if (args.k1_set) {
    schedule = args.k1 == 1.0 ? bc::keep_all_schedule(gallery_size, forest.n1)
                              : bc::default_schedule(gallery_size, forest.n1, args.k1);
  } else {
    schedule.n1 = forest.n1;
    std::stringstream ss(args.schedule_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      schedule.selections.push_back(std::stoull(item));
    }
    schedule.validate(gallery_size);
  }

  auto all_records = bc::read_embeddings(args.probes);
  if (!args.no_normalize) {
    for (auto& r : all_records) bc::l2_normalize(r.embedding);
  }
  std::vector<bc::SubjectRecord> probes;
  for (const auto& r : all_records) {
    if (r.split == bc::Split::kProbeEnrolled || r.split == bc::Split::kProbeNonEnrolled) {
      probes.push_back(r);
    }
  }
  if (probes.empty()) probes = std::move(all_records);

  std::error_code ec;
  fs::create_directories(args.out_dir, ec);
  if (ec) throw bc::DataError("cannot create output directory: " + args.out_dir);

  bc::NonceSource nonces(args.seed ^ 0x7072626573ULL);
  struct ProbeContext {
    std::shared_ptr<bc::ProtectedTemplate> ciphertext;
    bc::NodeScorer scorer;
  };
  auto scorer_for = [&](const bc::SubjectRecord& probe) -> ProbeContext {
    if (!is_protected) return {nullptr, bc::plaintext_scorer(probe.embedding)};
    auto enc = std::make_shared<bc::ProtectedTemplate>(
        bc::encrypt_probe(*prot, *backend, probe.embedding, *keys, nonces));
    auto inner =
        std::make_shared<bc::NodeScorer>(bc::protected_scorer(*prot, *backend, *enc, *keys));
    return {enc, [enc, inner](const bc::FusionNode& node) { return (*inner)(node); }};
  };

  std::string candidates_csv =
      "probe_subject_id,probe_sample_id,split,rank,candidate_subject_id,score\n";
  std::string traces_csv =
      "probe_subject_id,probe_sample_id,comparisons_total,compared_per_level,selected_per_level\n";
  std::string baseline_csv = candidates_csv;
  char buf[256];
  for (const auto& probe : probes) {
    if (probe.embedding.size() != forest.dim) {
      throw bc::DataError("probe dimension does not match the index");
    }
    const ProbeContext context = scorer_for(probe);
    const bc::RetrievalTrace trace = bc::retrieve(forest, schedule, context.scorer);
    append_candidates(candidates_csv, probe, trace.candidates, args.top);
    std::string compared, selected;
    for (std::size_t l = 0; l < trace.compared_per_level.size(); ++l) {
      if (l > 0) {
        compared += '|';
        selected += '|';
      }
      compared += std::to_string(trace.compared_per_level[l]);
      selected += std::to_string(trace.selected_per_level[l]);
    }
    std::snprintf(buf, sizeof(buf), "%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%s,%s\n",
                  probe.subject_id, probe.sample_id, trace.comparisons_total(), compared.c_str(),
                  selected.c_str());
    traces_csv += buf;
    if (args.baseline) {
      const bc::CandidateList base = bc::exhaustive_search(forest, context.scorer);
      append_candidates(baseline_csv, probe, base, args.top);
    }
  }

  std::vector<std::string> written = {"candidates.csv", "traces.csv"};
  bc::io::write_file_atomic(args.out_dir + "/candidates.csv", candidates_csv);
  bc::io::write_file_atomic(args.out_dir + "/traces.csv", traces_csv);
  if (args.baseline) {
    bc::io::write_file_atomic(args.out_dir + "/baseline_candidates.csv", baseline_csv);
    written.push_back("baseline_candidates.csv");
  }
  bc::io::write_manifest(args.out_dir + "/manifest.txt", args.out_dir, written);
  std::printf("identified %zu probes against %" PRIu64 " subjects\n", probes.size(), gallery_size);
}

void run_evaluate(const std::string& config_path, const std::string& out_dir) {
  const bc::ExperimentConfig config = bc::load_experiment_config(config_path);
  const bc::ExperimentBundle bundle = bc::run_experiment(config);
  bc::write_bundle(bundle, out_dir);
  std::printf("evaluated %zu configurations over %" PRIu64 " subjects into %s\n",
              bundle.results.size(), bundle.gallery_size, out_dir.c_str());
}

struct KeygenArgs {
  std::string scheme = "approx_real";
  int security = 128;
  std::uint64_t seed = 1;
  std::string out;
  bool public_only = false;
};

void run_keygen(const KeygenArgs& args) {
  const bc::KeyMaterial keys =
      bc::generate_keys(bc::scheme_from_string(args.scheme), args.security, args.seed);
  bc::write_key_file(keys, args.out, !args.public_only);
  std::printf("generated %s key %s\n", args.scheme.c_str(), keys.key_id.c_str());
}

struct RekeyArgs {
  std::string index;
  std::string old_keys;
  std::string new_keys;
  std::string out;
  std::uint64_t seed = 1;
};

void run_rekey(const RekeyArgs& args) {
  const bc::ProtectedIndex index = bc::read_protected_index(args.index);
  const bc::KeyMaterial old_keys = bc::read_key_file(args.old_keys);
  const bc::KeyMaterial new_keys = bc::read_key_file(args.new_keys);
  const auto backend = bc::make_backend(index.scheme);
  bc::NonceSource nonces(args.seed ^ 0x72656B6579ULL);
  const bc::ProtectedIndex rekeyed = bc::rekey_index(index, *backend, old_keys, new_keys, nonces);
  bc::write_protected_index(rekeyed, args.out);
  const fs::path out_path(args.out);
  bc::io::write_manifest(args.out + ".manifest", out_path.parent_path().string(),
                         {out_path.filename().string()});
  std::printf("re-encrypted index under key %s\n", rekeyed.key_id.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fused-template indexing and protected retrieval for biometric identification"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "synthesize a gallery");
  generate->add_option("--subjects", gen.subjects, "enrolled subjects")->required();
  generate->add_option("--dim", gen.dim, "embedding dimension");
  generate->add_option("--sigma", gen.sigma, "intra-class noise scale");
  generate->add_option("--seed", gen.seed, "generator seed");
  generate->add_option("--samples-per-subject", gen.samples_per_subject,
                       "probe samples per subject");
  generate->add_option("--nonenrolled-fraction", gen.nonenrolled_fraction,
                       "non-enrolled subjects per enrolled subject");
  generate->add_option("--train-fraction", gen.train_fraction,
                       "training subjects per enrolled subject");
  generate->add_option("--out", gen.out, "output embedding file")->required();

  BuildArgs build;
  auto* build_cmd = app.add_subcommand("build-index", "pair, fuse, and persist an index");
  build_cmd->add_option("--gallery", build.gallery, "input embedding file")->required();
  build_cmd->add_option("--n1", build.n1, "subjects fused per tree root")->required();
  build_cmd->add_option("--fusion", build.fusion, "avg1|avg2|dist1|dist2|idx1|idx2");
  build_cmd->add_option("--pairing", build.pairing, "random|soft|score");
  build_cmd->add_option("--stats", build.stats_path, "embedding file providing training stats");
  build_cmd->add_option("--out", build.out, "output index file")->required();
  build_cmd->add_option("--seed", build.seed, "pairing/encryption seed");
  build_cmd->add_flag("--no-normalize", build.no_normalize, "skip L2 normalization at ingestion");
  build_cmd->add_flag("--renormalize-fused", build.renormalize_fused,
                      "L2-normalize internal fused templates");
  build_cmd->add_option("--encrypt", build.encrypt_scheme,
                        "protect the index: plaintext|approx_real|exact_int|binary");
  build_cmd->add_option("--keys", build.keys_path, "key file for --encrypt");
  build_cmd->add_option("--quant-bits", build.quant_bits, "quantization bits for exact_int");

  IdentifyArgs id;
  auto* identify = app.add_subcommand("identify", "run probes through the cascade");
  identify->add_option("--index", id.index, "index file")->required();
  identify->add_option("--probes", id.probes, "probe embedding file")->required();
  auto* k1_opt = identify->add_option("--k1", id.k1, "root pre-selection fraction; 1 = keep-all");
  identify->add_option("--schedule", id.schedule_csv, "explicit selection counts, comma-separated");
  identify->add_option("--backend", id.backend, "expected comparison scheme");
  identify->add_option("--keys", id.keys_path, "key file for encrypted indexes");
  identify->add_flag("--baseline", id.baseline, "also run the exhaustive baseline");
  identify->add_option("--out", id.out_dir, "output directory")->required();
  identify->add_option("--top", id.top, "write only the best K candidates (0 = all)");
  identify->add_flag("--no-normalize", id.no_normalize, "skip L2 normalization of probes");
  identify->add_option("--seed", id.seed, "probe encryption seed");

  std::string eval_config, eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "metrics, workload matrix, and summary");
  evaluate->add_option("--config", eval_config, "experiment config (JSON)")->required();
  evaluate->add_option("--out-dir", eval_out, "output directory")->required();

  KeygenArgs keygen;
  auto* keygen_cmd = app.add_subcommand("keygen", "generate a key file");
  keygen_cmd->add_option("--scheme", keygen.scheme, "plaintext|approx_real|exact_int|binary");
  keygen_cmd->add_option("--security", keygen.security, "128|192|256");
  keygen_cmd->add_option("--seed", keygen.seed, "key generation seed")->required();
  keygen_cmd->add_option("--out", keygen.out, "output key file")->required();
  keygen_cmd->add_flag("--public-only", keygen.public_only, "omit the secret section");

  RekeyArgs rekey;
  auto* rekey_cmd = app.add_subcommand("rekey", "re-encrypt a protected index");
  rekey_cmd->add_option("--index", rekey.index, "protected index file")->required();
  rekey_cmd->add_option("--old-keys", rekey.old_keys, "current key file (with secret)")->required();
  rekey_cmd->add_option("--new-keys", rekey.new_keys, "replacement key file")->required();
  rekey_cmd->add_option("--out", rekey.out, "output index file")->required();
  rekey_cmd->add_option("--seed", rekey.seed, "re-encryption seed");

  try {
    app.parse(argc, argv);
    id.k1_set = k1_opt->count() > 0;
    if (generate->parsed()) run_generate(gen);
    if (build_cmd->parsed()) run_build_index(build);
    if (identify->parsed()) run_identify(id);
    if (evaluate->parsed()) run_evaluate(eval_config, eval_out);
    if (keygen_cmd->parsed()) run_keygen(keygen);
    if (rekey_cmd->parsed()) run_rekey(rekey);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const bc::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
