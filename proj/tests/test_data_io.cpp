// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
#include "biocascade/data_io.hpp"

#include <cmath>
#include <filesystem>

#include "doctest.h"

#include "biocascade/index_builder.hpp"
#include "biocascade/retrieval.hpp"
#include "test_util.hpp"

using namespace biocascade;

namespace {

std::vector<SubjectRecord> reference_split(const std::vector<SubjectRecord>& records) {
  std::vector<SubjectRecord> refs;
  for (const auto& r : records) {
    if (r.split == Split::kReference) refs.push_back(r);
  }
  return refs;
}

void corrupt_byte(const std::string& path, std::size_t offset, std::uint8_t value) {
  auto bytes = io::read_file(path);
  bytes[offset] = value;
  io::write_file_atomic(path, bytes);
}

}  // namespace

TEST_SUITE("data_io") {

TEST_CASE("single-record file reads back") {
  const std::string dir = bctest::scratch_dir("io_single");
  std::vector<SubjectRecord> records;
  records.push_back({7, 3, {0.25, -1.5, 3.0, 0.125}, std::nullopt, Split::kReference});
  write_embeddings(records, dir + "/one.bemb");
  const auto loaded = read_embeddings(dir + "/one.bemb");
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].subject_id == 7);
  CHECK(loaded[0].sample_id == 3);
  CHECK(loaded[0].embedding == EmbeddingVector{0.25, -1.5, 3.0, 0.125});
  CHECK(loaded[0].split == Split::kReference);
  CHECK_FALSE(loaded[0].soft.has_value());
}

TEST_CASE("embedding round-trip is bit-identical at stored precision") {
  const std::string dir = bctest::scratch_dir("io_roundtrip");
  detail::Rng rng(101);
  std::vector<SubjectRecord> records;
  for (std::uint64_t i = 1; i <= 100; ++i) {
    SubjectRecord r;
    r.subject_id = i;
    r.sample_id = 1 + rng.uniform_below(3);
    r.embedding = bctest::random_vector(rng, 12, 3.0);
    if (i % 2 == 0) {
      r.soft = SoftBiometrics{"F", "C", static_cast<int>(20 + rng.uniform_below(40))};
    }
    r.split = i % 3 == 0 ? Split::kProbeEnrolled : Split::kReference;
    records.push_back(std::move(r));
  }
  write_embeddings(records, dir + "/g.bemb");
  const auto loaded = read_embeddings(dir + "/g.bemb");
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].subject_id == records[i].subject_id);
    CHECK(loaded[i].sample_id == records[i].sample_id);
    CHECK(loaded[i].split == records[i].split);
    CHECK(loaded[i].soft.has_value() == records[i].soft.has_value());
    if (records[i].soft) {
      CHECK(loaded[i].soft->sex == records[i].soft->sex);
      CHECK(loaded[i].soft->race == records[i].soft->race);
      CHECK(loaded[i].soft->age == records[i].soft->age);
    }
    REQUIRE(loaded[i].embedding.size() == records[i].embedding.size());
    for (std::size_t d = 0; d < records[i].embedding.size(); ++d) {
      // Stored precision is f32; the reader must reproduce it exactly.
      CHECK(loaded[i].embedding[d] ==
            static_cast<double>(static_cast<float>(records[i].embedding[d])));
    }
  }
}

TEST_CASE("writes are byte-deterministic") {
  const std::string dir = bctest::scratch_dir("io_det");
  const auto records = generate_synthetic({16, 2, 8, 0.1, 5, 0.5, 0.25});
  write_embeddings(records, dir + "/a.bemb");
  write_embeddings(records, dir + "/b.bemb");
  CHECK(io::read_file(dir + "/a.bemb") == io::read_file(dir + "/b.bemb"));
  CHECK(io::read_file(dir + "/a.bemb.meta") == io::read_file(dir + "/b.bemb.meta"));
}

TEST_CASE("embedding reader rejects malformed files") {
  const std::string dir = bctest::scratch_dir("io_bad");
  std::vector<SubjectRecord> records;
  records.push_back({1, 1, {1.0, 2.0}, std::nullopt, Split::kReference});
  records.push_back({2, 1, {3.0, 4.0}, std::nullopt, Split::kReference});
  const std::string path = dir + "/g.bemb";
  write_embeddings(records, path);

  SUBCASE("bad magic") {
    corrupt_byte(path, 0, 'X');
    CHECK_THROWS_WITH_AS(read_embeddings(path), doctest::Contains("bad magic"), DataError);
  }
  SUBCASE("version mismatch") {
    corrupt_byte(path, 4, 9);
    CHECK_THROWS_WITH_AS(read_embeddings(path), doctest::Contains("version"), DataError);
  }
  SUBCASE("truncated payload") {
    auto bytes = io::read_file(path);
    bytes.resize(bytes.size() - 3);
    io::write_file_atomic(path, bytes);
    CHECK_THROWS_WITH_AS(read_embeddings(path), doctest::Contains("truncated"), DataError);
  }
  SUBCASE("metadata join miss") {
    // Sidecar keyed to a different sample id no longer joins.
    std::string meta = "{\"subject_id\":1,\"sample_id\":9,\"split\":\"reference\"}\n";
    meta += "{\"subject_id\":2,\"sample_id\":1,\"split\":\"reference\"}\n";
    io::write_file_atomic(metadata_path(path), meta);
    CHECK_THROWS_WITH_AS(read_embeddings(path), doctest::Contains("join miss"), DataError);
  }
  SUBCASE("missing sidecar") {
    std::filesystem::remove(metadata_path(path));
    CHECK_THROWS_WITH_AS(read_embeddings(path), doctest::Contains("sidecar"), DataError);
  }
}

TEST_CASE("index round-trip preserves structure and retrieval behavior") {
  const std::string dir = bctest::scratch_dir("io_index");
  SyntheticModel model;
  model.num_subjects = 64;
  model.dim = 16;
  model.intra_class_sigma = 0.1;
  model.seed = 9;
  model.samples_per_subject = 1;
  model.train_fraction = 0.0;
  const auto records = generate_synthetic(model);
  const auto refs = reference_split(records);

  BuildConfig config;
  config.n1 = 16;
  config.pairing = PairingMethodId::kSimilarityScore;
  config.seed = 4;
  IndexForest forest = build_index(refs, config);
  forest.default_selections = default_schedule(64, 16, 0.5).selections;
  const std::string path = dir + "/f.bidx";
  write_index(forest, path);
  const IndexForest loaded = read_index(path);

  CHECK(loaded.n1 == forest.n1);
  CHECK(loaded.dim == forest.dim);
  CHECK(loaded.fusion == forest.fusion);
  CHECK(loaded.default_selections == forest.default_selections);
  CHECK(loaded.trees.size() == forest.trees.size());

  // Stored values are f32; compare against the rounded originals.
  std::function<void(const FusionNode&, const FusionNode&)> compare_nodes =
      [&](const FusionNode& a, const FusionNode& b) {
        CHECK(a.level == b.level);
        CHECK(a.covered_subjects == b.covered_subjects);
        CHECK(a.is_leaf() == b.is_leaf());
        REQUIRE(a.fused.size() == b.fused.size());
        for (std::size_t d = 0; d < a.fused.size(); ++d) {
          CHECK(static_cast<double>(static_cast<float>(a.fused[d])) == b.fused[d]);
        }
        if (!a.is_leaf()) {
          compare_nodes(*a.left, *b.left);
          compare_nodes(*a.right, *b.right);
        } else {
          CHECK(a.leaf_subject == b.leaf_subject);
        }
      };
  for (std::size_t t = 0; t < forest.trees.size(); ++t) {
    compare_nodes(*forest.trees[t], *loaded.trees[t]);
  }

  // Candidate lists agree before and after persistence.
  detail::Rng rng(77);
  const auto schedule = default_schedule(64, 16, 0.5);
  const auto keep_all = keep_all_schedule(64, 16);
  for (int p = 0; p < 10; ++p) {
    const auto probe = bctest::random_unit(rng, 16);
    for (const auto& s : {schedule, keep_all}) {
      const auto before = retrieve(forest, s, plaintext_scorer(probe)).candidates;
      const auto after = retrieve(loaded, s, plaintext_scorer(probe)).candidates;
      REQUIRE(before.entries.size() == after.entries.size());
      for (std::size_t i = 0; i < before.entries.size(); ++i) {
        CHECK(before.entries[i].subject_id == after.entries[i].subject_id);
      }
    }
  }

  SUBCASE("corrupted magic is rejected") {
    corrupt_byte(path, 1, 'Z');
    CHECK_THROWS_WITH_AS(read_index(path), doctest::Contains("bad magic"), DataError);
  }
  SUBCASE("index write is deterministic") {
    write_index(forest, dir + "/f2.bidx");
    CHECK(io::read_file(path) == io::read_file(dir + "/f2.bidx"));
  }
}

TEST_CASE("synthetic generation is a pure function of the model") {
  const SyntheticModel model{12, 3, 8, 0.2, 31, 0.5, 0.25};
  const auto a = generate_synthetic(model);
  const auto b = generate_synthetic(model);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].subject_id == b[i].subject_id);
    CHECK(a[i].embedding == b[i].embedding);
    CHECK(a[i].soft->age == b[i].soft->age);
  }
  SyntheticModel other = model;
  other.seed = 32;
  CHECK(generate_synthetic(other)[0].embedding != a[0].embedding);
}

TEST_CASE("zero noise collapses samples onto the subject centroid") {
  SyntheticModel model;
  model.num_subjects = 5;
  model.dim = 6;
  model.intra_class_sigma = 0.0;
  model.samples_per_subject = 3;
  model.seed = 2;
  const auto records = generate_synthetic(model);
  for (const auto& r : records) {
    const auto& first = *std::find_if(records.begin(), records.end(), [&](const SubjectRecord& x) {
      return x.subject_id == r.subject_id;
    });
    CHECK(r.embedding == first.embedding);
  }
}

TEST_CASE("synthetic mated distances sit clearly below non-mated distances") {
  SyntheticModel model;
  model.num_subjects = 256;
  model.dim = 512;
  model.intra_class_sigma = 0.1;
  model.samples_per_subject = 2;
  model.seed = 13;
  model.nonenrolled_fraction = 0.0;
  model.train_fraction = 0.0;
  const auto records = generate_synthetic(model);

  std::vector<const SubjectRecord*> by_subject_first, by_subject_second;
  for (const auto& r : records) {
    if (r.sample_id == 2) by_subject_first.push_back(&r);
    if (r.sample_id == 3) by_subject_second.push_back(&r);
  }
  REQUIRE(by_subject_first.size() == 256);

  auto accumulate = [](const std::vector<double>& xs, double& mean, double& var) {
    mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size() - 1);
  };

  std::vector<double> mated, nonmated;
  for (std::size_t i = 0; i < by_subject_first.size(); ++i) {
    mated.push_back(
        euclidean_distance(by_subject_first[i]->embedding, by_subject_second[i]->embedding));
    nonmated.push_back(euclidean_distance(
        by_subject_first[i]->embedding,
        by_subject_second[(i + 1) % by_subject_second.size()]->embedding));
  }
  double mean_m, var_m, mean_n, var_n;
  accumulate(mated, mean_m, var_m);
  accumulate(nonmated, mean_n, var_n);
  const double standard_error =
      std::sqrt(var_m / static_cast<double>(mated.size()) +
                var_n / static_cast<double>(nonmated.size()));
  CHECK(mean_m < mean_n);
  CHECK(mean_n - mean_m > 5.0 * standard_error);
}

TEST_CASE("cost matrix dump is plain text") {
  const std::string dir = bctest::scratch_dir("io_dump");
  CostMatrix c(2);
  c.set(0, 1, 1.5);
  c.set(1, 0, 1.5);
  write_cost_matrix_text(c, dir + "/c.txt");
  const auto bytes = io::read_file(dir + "/c.txt");
  const std::string text(bytes.begin(), bytes.end());
  CHECK(text.find("1.5") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
}

TEST_CASE("manifest lists hashes sorted by name") {
  const std::string dir = bctest::scratch_dir("io_manifest");
  io::write_file_atomic(dir + "/b.txt", std::string("bee"));
  io::write_file_atomic(dir + "/a.txt", std::string("ay"));
  io::write_manifest(dir + "/manifest.txt", dir, {"b.txt", "a.txt"});
  const auto bytes = io::read_file(dir + "/manifest.txt");
  const std::string text(bytes.begin(), bytes.end());
  CHECK(text.find("a.txt") < text.find("b.txt"));
  CHECK(text.find("  a.txt") != std::string::npos);
}

}  // TEST_SUITE
