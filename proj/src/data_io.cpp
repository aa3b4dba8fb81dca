// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
#include "biocascade/data_io.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "biocascade/detail/bytes.hpp"
#include "biocascade/detail/rng.hpp"

namespace biocascade {

namespace io {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("rename failed for " + path + ": " + ec.message());
}

void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t file_hash(const std::string& path) {
  const auto bytes = read_file(path);
  return detail::fnv1a64(bytes);
}

void write_manifest(const std::string& manifest_path, const std::string& base_dir,
                    std::vector<std::string> file_names) {
  std::sort(file_names.begin(), file_names.end());
  std::string out;
  char line[1024];
  for (const auto& name : file_names) {
    const std::string full = base_dir.empty() ? name : base_dir + "/" + name;
    std::snprintf(line, sizeof(line), "%016" PRIx64 "  %s\n", file_hash(full), name.c_str());
    out += line;
  }
  write_file_atomic(manifest_path, out);
}

}  // namespace io

// ---------------------------------------------------------------------------
// Embedding container

namespace {

constexpr char kEmbeddingMagic[4] = {'B', 'E', 'M', 'B'};
constexpr std::uint16_t kEmbeddingVersion = 1;

std::string soft_json_fields(const SoftBiometrics& s) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), ",\"sex\":\"%s\",\"race\":\"%s\",\"age\":%d", s.sex.c_str(),
                s.race.c_str(), s.age);
  return buf;
}

}  // namespace

void write_embeddings(const std::vector<SubjectRecord>& records, const std::string& path) {
  if (records.empty()) throw DataError("refusing to write an empty gallery");
  const std::size_t dim = records.front().embedding.size();
  if (dim == 0) throw DataError("embedding dimension must be positive");
  for (const auto& r : records) {
    if (r.embedding.size() != dim) throw DataError("dimension mismatch across records");
  }

  std::vector<std::uint8_t> bytes;
  bytes.reserve(16 + records.size() * (16 + dim * 4));
  bytes.insert(bytes.end(), kEmbeddingMagic, kEmbeddingMagic + 4);
  detail::put_u16(bytes, kEmbeddingVersion);
  detail::put_u16(bytes, 0);  // reserved
  detail::put_u32(bytes, static_cast<std::uint32_t>(records.size()));
  detail::put_u32(bytes, static_cast<std::uint32_t>(dim));
  for (const auto& r : records) {
    detail::put_u64(bytes, r.subject_id);
    detail::put_u64(bytes, r.sample_id);
    for (double v : r.embedding) detail::put_f32(bytes, static_cast<float>(v));
  }
  io::write_file_atomic(path, bytes);

  std::string meta;
  char head[128];
  for (const auto& r : records) {
    std::snprintf(head, sizeof(head), "{\"subject_id\":%" PRIu64 ",\"sample_id\":%" PRIu64,
                  r.subject_id, r.sample_id);
    meta += head;
    if (r.soft) meta += soft_json_fields(*r.soft);
    meta += ",\"split\":\"";
    meta += to_string(r.split);
    meta += "\"}\n";
  }
  io::write_file_atomic(metadata_path(path), meta);
}

std::vector<SubjectRecord> read_embeddings(const std::string& path) {
  const auto bytes = io::read_file(path);
  detail::ByteReader reader(bytes, path);
  std::vector<SubjectRecord> records;
  try {
    char magic[4];
    for (char& m : magic) m = static_cast<char>(reader.get_u8());
    if (std::memcmp(magic, kEmbeddingMagic, 4) != 0) throw DataError("bad magic in " + path);
    const std::uint16_t version = reader.get_u16();
    if (version != kEmbeddingVersion) {
      throw DataError("unsupported embedding file version in " + path);
    }
    reader.get_u16();  // reserved
    const std::uint32_t count = reader.get_u32();
    const std::uint32_t dim = reader.get_u32();
    if (count == 0 || dim == 0) throw DataError("empty embedding file: " + path);
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      SubjectRecord r;
      r.subject_id = reader.get_u64();
      r.sample_id = reader.get_u64();
      r.embedding.resize(dim);
      for (std::uint32_t d = 0; d < dim; ++d) r.embedding[d] = reader.get_f32();
      records.push_back(std::move(r));
    }
    if (!reader.done()) throw DataError("trailing bytes in " + path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }

  // Join the sidecar by (subject_id, sample_id).
  const std::string meta_path = metadata_path(path);
  std::ifstream meta(meta_path);
  if (!meta) throw DataError("missing metadata sidecar: " + meta_path);
  struct Meta {
    std::optional<SoftBiometrics> soft;
    Split split;
  };
  std::map<std::pair<SubjectId, SampleId>, Meta> by_key;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bad metadata line in " + meta_path + ": " + e.what());
    }
    if (!j.contains("subject_id") || !j.contains("sample_id") || !j.contains("split")) {
      throw DataError("metadata line missing required fields in " + meta_path);
    }
    Meta m;
    m.split = split_from_string(j["split"].get<std::string>());
    if (j.contains("sex")) {
      SoftBiometrics s;
      s.sex = j["sex"].get<std::string>();
      s.race = j.value("race", std::string{});
      s.age = j.value("age", 0);
      m.soft = std::move(s);
    }
    by_key[{j["subject_id"].get<SubjectId>(), j["sample_id"].get<SampleId>()}] = std::move(m);
  }
  for (auto& r : records) {
    auto it = by_key.find({r.subject_id, r.sample_id});
    if (it == by_key.end()) {
      throw DataError("metadata join miss for record in " + path);
    }
    r.soft = it->second.soft;
    r.split = it->second.split;
  }
  return records;
}

// ---------------------------------------------------------------------------
// Index container

namespace {

constexpr char kIndexMagic[4] = {'B', 'I', 'D', 'X'};
constexpr std::uint16_t kIndexVersion = 1;

void write_node(std::vector<std::uint8_t>& out, const FusionNode& node) {
  std::vector<std::uint8_t> payload;
  payload.push_back(node.is_leaf() ? 1 : 0);
  if (node.is_leaf()) detail::put_u64(payload, node.leaf_subject);
  for (double v : node.fused) detail::put_f32(payload, static_cast<float>(v));
  detail::put_u32(out, static_cast<std::uint32_t>(payload.size()));
  detail::put_bytes(out, payload);
  if (!node.is_leaf()) {
    write_node(out, *node.left);
    write_node(out, *node.right);
  }
}

std::unique_ptr<FusionNode> read_node(detail::ByteReader& reader, std::uint32_t dim, int level,
                                      int leaf_level) {
  const std::uint32_t payload_len = reader.get_u32();
  const auto payload_bytes = reader.get_bytes(payload_len);
  detail::ByteReader payload(payload_bytes, "index node");
  auto node = std::make_unique<FusionNode>();
  node->level = level;
  const bool leaf = payload.get_u8() != 0;
  if (leaf) node->leaf_subject = payload.get_u64();
  node->fused.resize(dim);
  for (std::uint32_t d = 0; d < dim; ++d) node->fused[d] = payload.get_f32();
  if (!payload.done()) throw DataError("index node payload has trailing bytes");
  if (leaf) {
    if (level != leaf_level) throw DataError("leaf node at wrong tree depth");
    node->covered_subjects = {node->leaf_subject};
    return node;
  }
  if (level >= leaf_level) throw DataError("internal node below leaf depth");
  node->left = read_node(reader, dim, level + 1, leaf_level);
  node->right = read_node(reader, dim, level + 1, leaf_level);
  std::merge(node->left->covered_subjects.begin(), node->left->covered_subjects.end(),
             node->right->covered_subjects.begin(), node->right->covered_subjects.end(),
             std::back_inserter(node->covered_subjects));
  return node;
}

}  // namespace

void write_index(const IndexForest& forest, const std::string& path) {
  check_forest(forest);
  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), kIndexMagic, kIndexMagic + 4);
  detail::put_u16(bytes, kIndexVersion);
  detail::put_u16(bytes, 0);  // reserved
  bytes.push_back(0);         // protection scheme: plaintext container
  detail::put_u32(bytes, static_cast<std::uint32_t>(forest.n1));
  detail::put_u32(bytes, forest.dim);
  bytes.push_back(static_cast<std::uint8_t>(forest.fusion));
  bytes.push_back(forest.stats ? 1 : 0);
  if (forest.stats) {
    detail::put_u64(bytes, forest.stats->source_count);
    for (double v : forest.stats->mu) detail::put_f32(bytes, static_cast<float>(v));
  }
  detail::put_u32(bytes, static_cast<std::uint32_t>(forest.default_selections.size()));
  for (std::uint64_t s : forest.default_selections) detail::put_u64(bytes, s);
  detail::put_u32(bytes, static_cast<std::uint32_t>(forest.trees.size()));
  for (const auto& tree : forest.trees) write_node(bytes, *tree);
  io::write_file_atomic(path, bytes);
}

IndexForest read_index(const std::string& path) {
  const auto bytes = io::read_file(path);
  detail::ByteReader reader(bytes, path);
  IndexForest forest;
  try {
    char magic[4];
    for (char& m : magic) m = static_cast<char>(reader.get_u8());
    if (std::memcmp(magic, kIndexMagic, 4) != 0) throw DataError("bad magic in " + path);
    if (reader.get_u16() != kIndexVersion) {
      throw DataError("unsupported index file version in " + path);
    }
    reader.get_u16();  // reserved
    const std::uint8_t scheme = reader.get_u8();
    if (scheme != 0) {
      throw DataError("index file is protected; load it through the protection module");
    }
    forest.n1 = static_cast<int>(reader.get_u32());
    forest.dim = reader.get_u32();
    if (forest.n1 < 2 || !is_power_of_two(static_cast<std::uint64_t>(forest.n1))) {
      throw DataError("corrupt index header: bad n1");
    }
    forest.fusion = static_cast<FusionMethodId>(reader.get_u8());
    if (reader.get_u8() != 0) {
      TrainingStats stats;
      stats.source_count = reader.get_u64();
      stats.mu.resize(forest.dim);
      for (std::uint32_t d = 0; d < forest.dim; ++d) stats.mu[d] = reader.get_f32();
      forest.stats = std::move(stats);
    }
    const std::uint32_t sched_len = reader.get_u32();
    forest.default_selections.resize(sched_len);
    for (std::uint32_t i = 0; i < sched_len; ++i) forest.default_selections[i] = reader.get_u64();
    const std::uint32_t tree_count = reader.get_u32();
    const int leaf_level = forest.levels();
    forest.trees.reserve(tree_count);
    for (std::uint32_t t = 0; t < tree_count; ++t) {
      forest.trees.push_back(read_node(reader, forest.dim, 1, leaf_level));
    }
    if (!reader.done()) throw DataError("trailing bytes in " + path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  assign_ordinals(forest);
  check_forest(forest);
  return forest;
}

void write_cost_matrix_text(const CostMatrix& matrix, const std::string& path) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < matrix.size; ++i) {
    for (std::size_t j = 0; j < matrix.size; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", matrix.at(i, j));
      if (j > 0) out += ' ';
      out += buf;
    }
    out += '\n';
  }
  io::write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Synthetic gallery

namespace {

EmbeddingVector random_unit_vector(detail::Rng& rng, std::uint32_t dim) {
  EmbeddingVector v(dim);
  double norm = 0.0;
  do {
    for (auto& x : v) x = rng.normal();
    norm = 0.0;
    for (double x : v) norm += x * x;
  } while (norm == 0.0);
  l2_normalize(v);
  return v;
}

EmbeddingVector noisy_sample(detail::Rng& rng, const EmbeddingVector& centroid, double sigma) {
  if (sigma == 0.0) return centroid;  // exact copy; centroids are already unit length
  EmbeddingVector v(centroid.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = centroid[i] + sigma * rng.normal();
  l2_normalize(v);
  return v;
}

std::uint64_t derived_count(std::uint64_t base, double fraction) {
  if (fraction <= 0.0) return 0;
  const auto n = static_cast<std::uint64_t>(std::llround(static_cast<double>(base) * fraction));
  return std::max<std::uint64_t>(1, n);
}

}  // namespace

std::vector<SubjectRecord> generate_synthetic(const SyntheticModel& model) {
  if (model.num_subjects == 0) throw DataError("synthetic model needs at least one subject");
  if (model.dim == 0) throw DataError("synthetic model dimension must be positive");
  if (model.intra_class_sigma < 0.0) throw DataError("intra-class sigma must be non-negative");
  if (model.samples_per_subject < 1) throw DataError("samples_per_subject must be >= 1");

  const std::uint64_t enrolled = model.num_subjects;
  const std::uint64_t nonenrolled = derived_count(enrolled, model.nonenrolled_fraction);
  const std::uint64_t train = derived_count(enrolled, model.train_fraction);

  detail::Rng rng(model.seed);
  std::vector<SubjectRecord> records;
  records.reserve(enrolled * (1 + model.samples_per_subject) +
                  (nonenrolled + train) * model.samples_per_subject);

  SubjectId next_id = 1;
  auto emit_subject = [&](Split sample_split, bool with_reference) {
    const SubjectId subject = next_id++;
    const EmbeddingVector centroid = random_unit_vector(rng, model.dim);
    SoftBiometrics soft;
    soft.sex = kSexVocabulary[rng.uniform_below(kSexVocabulary.size())];
    soft.race = kRaceVocabulary[rng.uniform_below(kRaceVocabulary.size())];
    soft.age = 18 + static_cast<int>(rng.uniform_below(52));
    SampleId next_sample = 1;
    if (with_reference) {
      records.push_back({subject, next_sample++, noisy_sample(rng, centroid, model.intra_class_sigma),
                         soft, Split::kReference});
    }
    for (int s = 0; s < model.samples_per_subject; ++s) {
      records.push_back({subject, next_sample++, noisy_sample(rng, centroid, model.intra_class_sigma),
                         soft, sample_split});
    }
  };

  for (std::uint64_t i = 0; i < enrolled; ++i) emit_subject(Split::kProbeEnrolled, true);
  for (std::uint64_t i = 0; i < nonenrolled; ++i) emit_subject(Split::kProbeNonEnrolled, false);
  for (std::uint64_t i = 0; i < train; ++i) emit_subject(Split::kTrain, false);
  return records;
}

}  // namespace biocascade
