// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
//
// Drives the installed command-line binary end to end.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "biocascade/data_io.hpp"
#include "test_util.hpp"

using namespace biocascade;

namespace {

const std::string kCli = BIOCASCADE_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  const auto bytes = io::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

// Top-1 candidate ids per probe, keyed "subject:sample".
std::vector<std::string> top1_rows(const std::string& csv_path) {
  std::ifstream in(csv_path);
  std::vector<std::string> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string subject, sample, split, rank, candidate;
    std::getline(ss, subject, ',');
    std::getline(ss, sample, ',');
    std::getline(ss, split, ',');
    std::getline(ss, rank, ',');
    std::getline(ss, candidate, ',');
    if (rank == "1") rows.push_back(subject + ":" + sample + "=" + candidate);
  }
  return rows;
}

}  // namespace

TEST_CASE("generate produces a readable, deterministic gallery") {
  const std::string dir = bctest::scratch_dir("cli_gen");
  REQUIRE(run("generate --subjects 4 --dim 8 --sigma 0.1 --seed 1 --out " + dir + "/a.bemb") == 0);
  const auto records = read_embeddings(dir + "/a.bemb");
  CHECK(records.size() >= 4);
  CHECK(records.front().embedding.size() == 8);

  REQUIRE(run("generate --subjects 4 --dim 8 --sigma 0.1 --seed 1 --out " + dir + "/b.bemb") == 0);
  CHECK(slurp(dir + "/a.bemb") == slurp(dir + "/b.bemb"));
  CHECK(slurp(dir + "/a.bemb.meta") == slurp(dir + "/b.bemb.meta"));
}

TEST_CASE("build-index validates usage and data") {
  const std::string dir = bctest::scratch_dir("cli_build");
  REQUIRE(run("generate --subjects 16 --dim 8 --seed 2 --out " + dir + "/g.bemb") == 0);

  // Stats-dependent fusion without --stats is a usage error.
  CHECK(run("build-index --gallery " + dir + "/g.bemb --n1 4 --fusion avg2 --out " + dir +
            "/i.bidx") == 1);
  // Missing input file is a data error.
  CHECK(run("build-index --gallery " + dir + "/missing.bemb --n1 4 --out " + dir + "/i.bidx") ==
        2);
  // Gallery size not divisible by n1 is a data error.
  CHECK(run("build-index --gallery " + dir + "/g.bemb --n1 32 --out " + dir + "/i.bidx") == 2);

  REQUIRE(run("build-index --gallery " + dir + "/g.bemb --n1 4 --fusion avg2 --stats " + dir +
              "/g.bemb --out " + dir + "/i.bidx") == 0);
  CHECK(read_index(dir + "/i.bidx").n1 == 4);
}

TEST_CASE("build-index is deterministic under a fixed seed") {
  const std::string dir = bctest::scratch_dir("cli_build_det");
  REQUIRE(run("generate --subjects 128 --dim 16 --seed 5 --out " + dir + "/g.bemb") == 0);
  REQUIRE(run("build-index --gallery " + dir + "/g.bemb --n1 8 --pairing score --seed 9 --out " +
              dir + "/a.bidx") == 0);
  REQUIRE(run("build-index --gallery " + dir + "/g.bemb --n1 8 --pairing score --seed 9 --out " +
              dir + "/b.bidx") == 0);
  CHECK(slurp(dir + "/a.bidx") == slurp(dir + "/b.bidx"));
}

TEST_CASE("identify keep-all agrees with the baseline on top-1") {
  const std::string dir = bctest::scratch_dir("cli_identify");
  REQUIRE(run("generate --subjects 64 --dim 16 --sigma 0.05 --seed 3 --out " + dir + "/g.bemb") ==
          0);
  REQUIRE(run("build-index --gallery " + dir + "/g.bemb --n1 16 --pairing score --out " + dir +
              "/i.bidx") == 0);
  REQUIRE(run("identify --index " + dir + "/i.bidx --probes " + dir + "/g.bemb --k1 1 "
              "--baseline --top 1 --out " + dir + "/run") == 0);
  const auto cascade = top1_rows(dir + "/run/candidates.csv");
  const auto baseline = top1_rows(dir + "/run/baseline_candidates.csv");
  REQUIRE_FALSE(cascade.empty());
  CHECK(cascade == baseline);
}

TEST_CASE("identify flag validation") {
  const std::string dir = bctest::scratch_dir("cli_identify_flags");
  REQUIRE(run("generate --subjects 16 --dim 8 --seed 4 --out " + dir + "/g.bemb") == 0);
  REQUIRE(run("build-index --gallery " + dir + "/g.bemb --n1 4 --out " + dir + "/i.bidx") == 0);
  // Exactly one of --k1 / --schedule.
  CHECK(run("identify --index " + dir + "/i.bidx --probes " + dir + "/g.bemb --out " + dir +
            "/r1") == 1);
  CHECK(run("identify --index " + dir + "/i.bidx --probes " + dir + "/g.bemb --k1 0.5 "
            "--schedule 4,2,1 --out " + dir + "/r2") == 1);
  // Explicit schedules work.
  CHECK(run("identify --index " + dir + "/i.bidx --probes " + dir + "/g.bemb "
            "--schedule 2,1,1 --out " + dir + "/r3") == 0);
  // Malformed schedule shapes are data errors.
  CHECK(run("identify --index " + dir + "/i.bidx --probes " + dir + "/g.bemb "
            "--schedule 2,1 --out " + dir + "/r4") == 2);
}

TEST_CASE("identify trace totals reproduce the 736-comparison configuration") {
  const std::string dir = bctest::scratch_dir("cli_736");
  REQUIRE(run("generate --subjects 4096 --dim 8 --sigma 0.1 --seed 6 --samples-per-subject 1 "
              "--nonenrolled-fraction 0 --train-fraction 0 --out " + dir + "/g.bemb") == 0);
  REQUIRE(run("build-index --gallery " + dir + "/g.bemb --n1 16 --pairing random --out " + dir +
              "/i.bidx") == 0);
  REQUIRE(run("identify --index " + dir + "/i.bidx --probes " + dir + "/g.bemb --k1 0.5 "
              "--top 1 --out " + dir + "/run") == 0);
  std::ifstream traces(dir + "/run/traces.csv");
  std::string line;
  std::getline(traces, line);  // header
  REQUIRE(std::getline(traces, line));
  std::stringstream ss(line);
  std::string subject, sample, total, compared;
  std::getline(ss, subject, ',');
  std::getline(ss, sample, ',');
  std::getline(ss, total, ',');
  std::getline(ss, compared, ',');
  CHECK(total == "736");
  CHECK(compared == "256|256|128|64|32");
}

TEST_CASE("encrypted indexes require matching keys") {
  const std::string dir = bctest::scratch_dir("cli_encrypted");
  REQUIRE(run("generate --subjects 32 --dim 8 --seed 7 --out " + dir + "/g.bemb") == 0);
  REQUIRE(run("keygen --scheme approx_real --seed 11 --out " + dir + "/k.bkey") == 0);
  REQUIRE(run("build-index --gallery " + dir + "/g.bemb --n1 8 --encrypt approx_real --keys " +
              dir + "/k.bkey --out " + dir + "/i.bidx") == 0);

  // Missing --keys on an encrypted index is a data error.
  CHECK(run("identify --index " + dir + "/i.bidx --probes " + dir + "/g.bemb --k1 0.5 --out " +
            dir + "/r1") == 2);
  // A different key is rejected.
  REQUIRE(run("keygen --scheme approx_real --seed 12 --out " + dir + "/other.bkey") == 0);
  CHECK(run("identify --index " + dir + "/i.bidx --probes " + dir + "/g.bemb --k1 0.5 --keys " +
            dir + "/other.bkey --out " + dir + "/r2") == 2);
  // A mismatched --backend label is rejected.
  CHECK(run("identify --index " + dir + "/i.bidx --probes " + dir + "/g.bemb --k1 0.5 --keys " +
            dir + "/k.bkey --backend binary --out " + dir + "/r3") == 2);

  REQUIRE(run("identify --index " + dir + "/i.bidx --probes " + dir + "/g.bemb --k1 0.5 --keys " +
              dir + "/k.bkey --out " + dir + "/r4") == 0);

  // Rekey, then identify again: same candidate ids in the same order.
  REQUIRE(run("keygen --scheme approx_real --seed 13 --out " + dir + "/next.bkey") == 0);
  REQUIRE(run("rekey --index " + dir + "/i.bidx --old-keys " + dir + "/k.bkey --new-keys " + dir +
              "/next.bkey --out " + dir + "/i2.bidx") == 0);
  REQUIRE(run("identify --index " + dir + "/i2.bidx --probes " + dir + "/g.bemb --k1 0.5 "
              "--keys " + dir + "/next.bkey --out " + dir + "/r5") == 0);
  CHECK(top1_rows(dir + "/r4/candidates.csv") == top1_rows(dir + "/r5/candidates.csv"));
}

TEST_CASE("evaluate writes a summary with the baseline row and reruns identically") {
  const std::string dir = bctest::scratch_dir("cli_eval");
  io::write_file_atomic(dir + "/config.json", std::string(R"({
    "version": 1,
    "seed": 8,
    "data": {"synthetic": {"subjects": 64, "dim": 16, "sigma": 0.05, "samples_per_subject": 1}},
    "n1": 8,
    "k1": [],
    "baseline": true,
    "pairing": "random"
  })"));
  REQUIRE(run("evaluate --config " + dir + "/config.json --out-dir " + dir + "/out1") == 0);
  const std::string summary = slurp(dir + "/out1/summary.txt");
  CHECK(summary.find("baseline\t100.00") != std::string::npos);

  REQUIRE(run("evaluate --config " + dir + "/config.json --out-dir " + dir + "/out2") == 0);
  CHECK(slurp(dir + "/out1/manifest.txt") == slurp(dir + "/out2/manifest.txt"));

  CHECK(run("evaluate --config " + dir + "/missing.json --out-dir " + dir + "/out3") == 2);
}

TEST_CASE("evaluate reports the full-scale workload column") {
  const std::string dir = bctest::scratch_dir("cli_eval_workload");
  io::write_file_atomic(dir + "/config.json", std::string(R"({
    "version": 1,
    "seed": 9,
    "data": {"synthetic": {"subjects": 4096, "dim": 8, "sigma": 0.1,
                            "samples_per_subject": 1,
                            "nonenrolled_fraction": 0.02, "train_fraction": 0}},
    "n1": 16,
    "k1": [0.5, 0.25, 0.125],
    "baseline": true,
    "pairing": "random"
  })"));
  REQUIRE(run("evaluate --config " + dir + "/config.json --out-dir " + dir + "/out") == 0);
  const std::string summary = slurp(dir + "/out/summary.txt");
  CHECK(summary.find("n1=16 k1=2^-1\t17.97") != std::string::npos);
  CHECK(summary.find("n1=16 k1=2^-2\t12.11") != std::string::npos);
  CHECK(summary.find("n1=16 k1=2^-3\t9.18") != std::string::npos);
}

TEST_CASE("full-scale generation stays inside its time budget") {
  const std::string dir = bctest::scratch_dir("cli_gen_budget");
  const auto start = std::chrono::steady_clock::now();
  REQUIRE(run("generate --subjects 4096 --dim 512 --seed 10 --out " + dir + "/g.bemb") == 0);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(seconds < 60.0);
  CHECK(std::filesystem::file_size(dir + "/g.bemb") > 4096u * 512u * 4u);
}

TEST_CASE("unknown flags and subcommands are usage errors") {
  CHECK(run("frobnicate") == 1);
  CHECK(run("generate --subjects") == 1);
  CHECK(run("") == 1);
}
