// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
//
// Assembles the index forest: pairing hierarchy first, then one fusion pass
// whose vectors are shared with the pairing step.
#pragma once

#include "biocascade/core.hpp"
#include "biocascade/pairing.hpp"

namespace biocascade {

struct BuildConfig {
  FusionMethodId fusion = FusionMethodId::kAverage1;
  PairingMethodId pairing = PairingMethodId::kSimilarityScore;
  int n1 = 16;
  std::uint64_t seed = 1;
  bool renormalize_fused = false;  // internal nodes only; leaves keep their templates
};

// Builds N/n1 trees of log2(n1)+1 levels over one reference template per
// subject. references must carry unique subject ids and a uniform dimension;
// ordering is canonicalized by subject id, so rebuilding with the same
// config is bit-identical.
IndexForest build_index(const std::vector<SubjectRecord>& references, const BuildConfig& config,
                        const TrainingStats* stats = nullptr);

}  // namespace biocascade
