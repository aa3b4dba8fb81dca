// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
//
// Pluggable protected-comparison backends. Every backend satisfies the same
// contract: encryption is randomized, decryption inverts it, and the
// decrypted comparison result equals the plaintext squared Euclidean
// distance (exactly for the integer and binary schemes, within a declared
// epsilon for the approximate-real scheme).
//
// The shipped non-plaintext backends are mocks: randomized keystream
// encodings with exact or noisy arithmetic emulation. They honor the
// contract and its key-handling shape but provide no cryptographic
// security; binding a real lattice-based implementation replaces them
// behind this interface.
#pragma once

#include <array>
#include <memory>
#include <variant>

#include "biocascade/core.hpp"
#include "biocascade/retrieval.hpp"

namespace biocascade {

enum class Scheme : std::uint8_t {
  kPlaintextRef = 0,  // insecure reference comparator
  kApproxReal = 1,    // approximate arithmetic over reals (CKKS-style contract)
  kExactInt = 2,      // exact arithmetic over integers (BFV-style contract)
  kBinary = 3,        // per-bit XOR with client-side Hamming summation (NTRU-style contract)
};

const char* to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

// Declared error bounds for the approximate-real scheme.
inline constexpr double kApproxRealEncryptEpsilon = 1e-3;
inline constexpr double kApproxRealCompareEpsilon = 1e-3;

struct KeyMaterial {
  std::string key_id;  // fingerprint of the public part, hex
  Scheme scheme = Scheme::kPlaintextRef;
  int security_level = 128;  // 128 | 192 | 256
  std::array<std::uint8_t, 32> public_part{};
  std::array<std::uint8_t, 32> secret_part{};
  bool has_secret = false;
};

KeyMaterial generate_keys(Scheme scheme, int security_level, std::uint64_t seed);

// Key container: magic "BKEY", version, scheme, security level, public
// section, optional secret section.
void write_key_file(const KeyMaterial& keys, const std::string& path, bool include_secret);
KeyMaterial read_key_file(const std::string& path);

// Deterministic per-run nonce stream (SplitMix64): reproducible under a
// fixed seed, distinct within a run.
class NonceSource {
 public:
  explicit NonceSource(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t state_;
};

using RealTemplate = EmbeddingVector;
using IntTemplate = std::vector<std::int32_t>;
using BitTemplate = std::vector<std::uint8_t>;  // one entry per bit, values 0/1
using TemplatePayload = std::variant<RealTemplate, IntTemplate, BitTemplate>;

struct ProtectedTemplate {
  Scheme scheme = Scheme::kPlaintextRef;
  std::string key_id;
  std::uint64_t nonce = 0;  // randomizer evidence
  std::uint32_t element_count = 0;
  std::vector<std::uint8_t> payload;
};

// Result of a protected comparison: a masked scalar for the arithmetic
// schemes, the per-position protected differences for the binary scheme.
struct ProtectedComparison {
  Scheme scheme = Scheme::kPlaintextRef;
  std::string key_id;
  std::vector<std::uint64_t> nonces;
  std::uint32_t element_count = 0;
  std::vector<std::uint8_t> payload;
};

class ComparisonBackend {
 public:
  virtual ~ComparisonBackend() = default;

  virtual Scheme scheme() const = 0;

  // Requires the template representation to match the scheme.
  virtual ProtectedTemplate encrypt(const TemplatePayload& plain, const KeyMaterial& keys,
                                    NonceSource& nonces) const = 0;
  virtual TemplatePayload decrypt(const ProtectedTemplate& ct, const KeyMaterial& keys) const = 0;

  // Same scheme and key id on both sides. For the binary scheme this is a
  // pure ciphertext XOR; the arithmetic mocks consume the evaluation key.
  virtual ProtectedComparison compare(const ProtectedTemplate& a, const ProtectedTemplate& b,
                                      const KeyMaterial& eval_keys,
                                      NonceSource& nonces) const = 0;

  // Squared Euclidean distance of the plaintexts; for the binary scheme the
  // Hamming weight of the decrypted difference vector (summed client-side).
  virtual double decrypt_score(const ProtectedComparison& cmp, const KeyMaterial& keys) const = 0;

  // Binary scheme only: the decrypted per-position XOR vector.
  virtual BitTemplate decrypt_differences(const ProtectedComparison& cmp,
                                          const KeyMaterial& keys) const;
};

std::unique_ptr<ComparisonBackend> make_backend(Scheme scheme);

// ---------------------------------------------------------------------------
// Quantization / binarization front-ends for the integer and binary schemes.

struct QuantizationParams {
  int bits = 8;  // in [1, 16]
  EmbeddingVector min_per_dim;
  EmbeddingVector max_per_dim;
  std::vector<std::uint8_t> degenerate;  // 1 where min == max; such dims emit 0
};

QuantizationParams train_quantization(const std::vector<EmbeddingVector>& train, int bits = 8);

// q_i = clamp(round((v_i - min_i) / (max_i - min_i) * (2^b - 1)), 0, 2^b - 1),
// rounding half away from zero. Degenerate dimensions emit 0.
IntTemplate quantize(const EmbeddingVector& v, const QuantizationParams& params);
EmbeddingVector dequantize(const IntTemplate& q, const QuantizationParams& params);

// bit_i = 1 if v_i >= mu_i else 0.
BitTemplate binarize(const EmbeddingVector& v, const TrainingStats& stats);

// ---------------------------------------------------------------------------
// Protected index: the forest's topology stays in the clear, node templates
// become ciphertexts addressed by node ordinal.

struct ProtectedIndex {
  Scheme scheme = Scheme::kApproxReal;
  std::string key_id;
  IndexForest skeleton;  // structure, levels, subjects; fused vectors empty
  std::vector<ProtectedTemplate> node_templates;
  std::optional<QuantizationParams> quant;   // exact-int scheme
  std::optional<EmbeddingVector> binary_mu;  // binary scheme threshold
};

// quant is required for the exact-int scheme, stats for the binary scheme.
ProtectedIndex encrypt_index(const IndexForest& forest, const ComparisonBackend& backend,
                             const KeyMaterial& keys, NonceSource& nonces,
                             const QuantizationParams* quant = nullptr,
                             const TrainingStats* stats = nullptr);

// Converts a real-valued probe into the index's scheme representation and
// encrypts it.
ProtectedTemplate encrypt_probe(const ProtectedIndex& index, const ComparisonBackend& backend,
                                const EmbeddingVector& probe, const KeyMaterial& keys,
                                NonceSource& nonces);

// Comparison handle for the cascade: protected compare per node, score
// decrypted client-side for pre-selection.
NodeScorer protected_scorer(const ProtectedIndex& index, const ComparisonBackend& backend,
                            const ProtectedTemplate& encrypted_probe, const KeyMaterial& keys);

// Re-encrypts everything under new keys; plaintext-equivalent comparisons
// are preserved and old ciphertexts become invalid (the key id changes).
std::vector<ProtectedTemplate> rekey_templates(const std::vector<ProtectedTemplate>& templates,
                                               const ComparisonBackend& backend,
                                               const KeyMaterial& old_keys,
                                               const KeyMaterial& new_keys, NonceSource& nonces);
ProtectedIndex rekey_index(const ProtectedIndex& index, const ComparisonBackend& backend,
                           const KeyMaterial& old_keys, const KeyMaterial& new_keys,
                           NonceSource& nonces);

// Protected index container: the "BIDX" layout with a non-zero scheme byte,
// the key id in the header, and ciphertext node payloads.
void write_protected_index(const ProtectedIndex& index, const std::string& path);
ProtectedIndex read_protected_index(const std::string& path);

}  // namespace biocascade
