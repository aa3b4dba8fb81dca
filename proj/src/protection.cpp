// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
#include "biocascade/protection.hpp"

#include <algorithm>
#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "biocascade/data_io.hpp"
#include "biocascade/detail/bytes.hpp"
#include "biocascade/detail/rng.hpp"

namespace biocascade {

const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::kPlaintextRef: return "plaintext";
    case Scheme::kApproxReal: return "approx_real";
    case Scheme::kExactInt: return "exact_int";
    case Scheme::kBinary: return "binary";
  }
  throw InternalError("unknown scheme value");
}

Scheme scheme_from_string(const std::string& s) {
  if (s == "plaintext") return Scheme::kPlaintextRef;
  if (s == "approx_real") return Scheme::kApproxReal;
  if (s == "exact_int") return Scheme::kExactInt;
  if (s == "binary") return Scheme::kBinary;
  throw DataError("unknown protection scheme: " + s);
}

// ---------------------------------------------------------------------------
// Keys

KeyMaterial generate_keys(Scheme scheme, int security_level, std::uint64_t seed) {
  if (security_level != 128 && security_level != 192 && security_level != 256) {
    throw DataError("security level must be 128, 192, or 256 bits");
  }
  detail::Rng rng(detail::mix64(seed) ^ (static_cast<std::uint64_t>(scheme) << 56) ^
                  static_cast<std::uint64_t>(security_level));
  KeyMaterial keys;
  keys.scheme = scheme;
  keys.security_level = security_level;
  keys.has_secret = true;
  for (int block = 0; block < 4; ++block) {
    const std::uint64_t s = rng.next_u64();
    std::memcpy(keys.secret_part.data() + 8 * block, &s, 8);
    // Public part: one-way fingerprint of the secret block.
    const std::uint64_t p = detail::mix64(s ^ 0x5055424C4B455950ULL);
    std::memcpy(keys.public_part.data() + 8 * block, &p, 8);
  }
  char id[17];
  std::snprintf(id, sizeof(id), "%016" PRIx64, detail::fnv1a64(keys.public_part));
  keys.key_id = id;
  return keys;
}

namespace {

constexpr char kKeyMagic[4] = {'B', 'K', 'E', 'Y'};
constexpr std::uint16_t kKeyVersion = 1;

}  // namespace

void write_key_file(const KeyMaterial& keys, const std::string& path, bool include_secret) {
  if (include_secret && !keys.has_secret) {
    throw DataError("key material has no secret part to export");
  }
  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), kKeyMagic, kKeyMagic + 4);
  detail::put_u16(bytes, kKeyVersion);
  detail::put_u16(bytes, 0);  // reserved
  bytes.push_back(static_cast<std::uint8_t>(keys.scheme));
  bytes.push_back(include_secret ? 1 : 0);
  detail::put_u16(bytes, static_cast<std::uint16_t>(keys.security_level));
  detail::put_string(bytes, keys.key_id);
  detail::put_u32(bytes, static_cast<std::uint32_t>(keys.public_part.size()));
  detail::put_bytes(bytes, keys.public_part);
  if (include_secret) {
    detail::put_u32(bytes, static_cast<std::uint32_t>(keys.secret_part.size()));
    detail::put_bytes(bytes, keys.secret_part);
  }
  io::write_file_atomic(path, bytes);
}

KeyMaterial read_key_file(const std::string& path) {
  const auto bytes = io::read_file(path);
  detail::ByteReader reader(bytes, path);
  KeyMaterial keys;
  try {
    char magic[4];
    for (char& m : magic) m = static_cast<char>(reader.get_u8());
    if (std::memcmp(magic, kKeyMagic, 4) != 0) throw DataError("bad magic in " + path);
    if (reader.get_u16() != kKeyVersion) throw DataError("unsupported key file version in " + path);
    reader.get_u16();  // reserved
    keys.scheme = static_cast<Scheme>(reader.get_u8());
    const bool has_secret = reader.get_u8() != 0;
    keys.security_level = reader.get_u16();
    keys.key_id = reader.get_string();
    const auto pub = reader.get_bytes(reader.get_u32());
    if (pub.size() != keys.public_part.size()) throw DataError("bad public section in " + path);
    std::copy(pub.begin(), pub.end(), keys.public_part.begin());
    if (has_secret) {
      const auto sec = reader.get_bytes(reader.get_u32());
      if (sec.size() != keys.secret_part.size()) throw DataError("bad secret section in " + path);
      std::copy(sec.begin(), sec.end(), keys.secret_part.begin());
      keys.has_secret = true;
    }
    if (!reader.done()) throw DataError("trailing bytes in " + path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  return keys;
}

// ---------------------------------------------------------------------------
// Mock keystream

namespace {

constexpr std::uint64_t kDomainTemplate = 0x54;
constexpr std::uint64_t kDomainScore = 0x53;

// Fixed-point scale of the approximate-real encoding: 2^20 gives ~1e-6
// element error, well inside the declared 1e-3 bounds.
constexpr double kRealScale = 1048576.0;
constexpr double kRealRange = 1024.0;  // largest encodable magnitude

std::uint64_t pad64(const KeyMaterial& keys, std::uint64_t domain, std::uint64_t nonce,
                    std::uint64_t index) {
  if (!keys.has_secret) throw DataError("operation requires secret key material");
  std::uint64_t lo = 0, hi = 0;
  std::memcpy(&lo, keys.secret_part.data(), 8);
  std::memcpy(&hi, keys.secret_part.data() + 8, 8);
  std::uint64_t h = detail::mix64(lo ^ detail::mix64(hi));
  h = detail::mix64(h ^ (static_cast<std::uint64_t>(keys.scheme) << 32) ^ domain);
  h = detail::mix64(h ^ nonce);
  return detail::mix64(h ^ index);
}

void check_keys(const KeyMaterial& keys, Scheme scheme) {
  if (keys.scheme != scheme) throw DataError("key/scheme mismatch");
}

void check_template(const ProtectedTemplate& ct, Scheme scheme, const KeyMaterial& keys) {
  if (ct.scheme != scheme || keys.scheme != scheme) throw DataError("key/scheme mismatch");
  if (ct.key_id != keys.key_id) throw DataError("ciphertext was produced under a different key");
}

void check_comparable(const ProtectedTemplate& a, const ProtectedTemplate& b, Scheme scheme,
                      const KeyMaterial& keys) {
  check_template(a, scheme, keys);
  check_template(b, scheme, keys);
  if (a.element_count != b.element_count) {
    throw DataError("protected templates have different dimensions");
  }
}

// Shared core of the two arithmetic mocks: values encoded as int64, masked
// with an additive keystream mod 2^64.

ProtectedTemplate arithmetic_encrypt(std::span<const std::int64_t> values, Scheme scheme,
                                     const KeyMaterial& keys, NonceSource& nonces) {
  check_keys(keys, scheme);
  ProtectedTemplate ct;
  ct.scheme = scheme;
  ct.key_id = keys.key_id;
  ct.nonce = nonces.next();
  ct.element_count = static_cast<std::uint32_t>(values.size());
  ct.payload.reserve(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t c =
        static_cast<std::uint64_t>(values[i]) + pad64(keys, kDomainTemplate, ct.nonce, i);
    detail::put_u64(ct.payload, c);
  }
  return ct;
}

std::vector<std::int64_t> arithmetic_decrypt(const ProtectedTemplate& ct, Scheme scheme,
                                             const KeyMaterial& keys) {
  check_template(ct, scheme, keys);
  if (ct.payload.size() != std::size_t{ct.element_count} * 8) {
    throw DataError("corrupt ciphertext payload");
  }
  detail::ByteReader reader(ct.payload, "ciphertext");
  std::vector<std::int64_t> values(ct.element_count);
  for (std::uint32_t i = 0; i < ct.element_count; ++i) {
    values[i] = static_cast<std::int64_t>(reader.get_u64() -
                                          pad64(keys, kDomainTemplate, ct.nonce, i));
  }
  return values;
}

ProtectedComparison arithmetic_compare(const ProtectedTemplate& a, const ProtectedTemplate& b,
                                       Scheme scheme, const KeyMaterial& eval_keys,
                                       NonceSource& nonces) {
  check_comparable(a, b, scheme, eval_keys);
  const auto ma = arithmetic_decrypt(a, scheme, eval_keys);
  const auto mb = arithmetic_decrypt(b, scheme, eval_keys);
  unsigned __int128 acc = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const std::int64_t d = ma[i] - mb[i];
    acc += static_cast<unsigned __int128>(static_cast<__int128>(d) * d);
  }
  if (acc > (static_cast<unsigned __int128>(1) << 62)) {
    throw DataError("comparison magnitude exceeds the encodable range");
  }
  ProtectedComparison cmp;
  cmp.scheme = scheme;
  cmp.key_id = eval_keys.key_id;
  cmp.element_count = a.element_count;
  cmp.nonces = {nonces.next()};
  const std::uint64_t masked =
      static_cast<std::uint64_t>(acc) + pad64(eval_keys, kDomainScore, cmp.nonces[0], 0);
  detail::put_u64(cmp.payload, masked);
  return cmp;
}

std::uint64_t arithmetic_decrypt_sum(const ProtectedComparison& cmp, Scheme scheme,
                                     const KeyMaterial& keys) {
  if (cmp.scheme != scheme || keys.scheme != scheme) throw DataError("key/scheme mismatch");
  if (cmp.key_id != keys.key_id) throw DataError("comparison was produced under a different key");
  if (cmp.payload.size() != 8 || cmp.nonces.size() != 1) {
    throw DataError("corrupt comparison payload");
  }
  detail::ByteReader reader(cmp.payload, "comparison");
  return reader.get_u64() - pad64(keys, kDomainScore, cmp.nonces[0], 0);
}

// Bit packing for the binary scheme (LSB-first within each byte).

std::vector<std::uint8_t> pack_bits(const BitTemplate& bits) {
  std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] > 1) throw DataError("binary template values must be 0 or 1");
    if (bits[i]) packed[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
  }
  return packed;
}

BitTemplate unpack_bits(std::span<const std::uint8_t> packed, std::uint32_t count) {
  BitTemplate bits(count, 0);
  for (std::uint32_t i = 0; i < count; ++i) {
    bits[i] = (packed[i >> 3] >> (i & 7)) & 1;
  }
  return bits;
}

void xor_keystream(std::vector<std::uint8_t>& bytes, const KeyMaterial& keys,
                   std::uint64_t nonce) {
  for (std::size_t block = 0; block * 8 < bytes.size(); ++block) {
    const std::uint64_t pad = pad64(keys, kDomainTemplate, nonce, block);
    for (std::size_t k = 0; k < 8 && block * 8 + k < bytes.size(); ++k) {
      bytes[block * 8 + k] ^= static_cast<std::uint8_t>((pad >> (8 * k)) & 0xFF);
    }
  }
}

// ---------------------------------------------------------------------------
// Backends

class PlaintextRefBackend final : public ComparisonBackend {
 public:
  Scheme scheme() const override { return Scheme::kPlaintextRef; }

  ProtectedTemplate encrypt(const TemplatePayload& plain, const KeyMaterial& keys,
                            NonceSource& nonces) const override {
    check_keys(keys, scheme());
    const auto* values = std::get_if<RealTemplate>(&plain);
    if (values == nullptr) throw DataError("plaintext backend expects a real-valued template");
    ProtectedTemplate ct;
    ct.scheme = scheme();
    ct.key_id = keys.key_id;
    ct.nonce = nonces.next();
    ct.element_count = static_cast<std::uint32_t>(values->size());
    for (double v : *values) detail::put_f64(ct.payload, v);
    return ct;
  }

  TemplatePayload decrypt(const ProtectedTemplate& ct, const KeyMaterial& keys) const override {
    check_template(ct, scheme(), keys);
    detail::ByteReader reader(ct.payload, "plaintext template");
    RealTemplate values(ct.element_count);
    for (auto& v : values) v = reader.get_f64();
    return values;
  }

  ProtectedComparison compare(const ProtectedTemplate& a, const ProtectedTemplate& b,
                              const KeyMaterial& eval_keys, NonceSource& nonces) const override {
    check_comparable(a, b, scheme(), eval_keys);
    const auto va = std::get<RealTemplate>(decrypt(a, eval_keys));
    const auto vb = std::get<RealTemplate>(decrypt(b, eval_keys));
    ProtectedComparison cmp;
    cmp.scheme = scheme();
    cmp.key_id = eval_keys.key_id;
    cmp.element_count = a.element_count;
    cmp.nonces = {nonces.next()};
    detail::put_f64(cmp.payload, squared_distance(va, vb));
    return cmp;
  }

  double decrypt_score(const ProtectedComparison& cmp, const KeyMaterial& keys) const override {
    if (cmp.scheme != scheme() || cmp.key_id != keys.key_id) {
      throw DataError("key/scheme mismatch");
    }
    detail::ByteReader reader(cmp.payload, "plaintext comparison");
    return reader.get_f64();
  }
};

class ApproxRealBackend final : public ComparisonBackend {
 public:
  Scheme scheme() const override { return Scheme::kApproxReal; }

  ProtectedTemplate encrypt(const TemplatePayload& plain, const KeyMaterial& keys,
                            NonceSource& nonces) const override {
    const auto* values = std::get_if<RealTemplate>(&plain);
    if (values == nullptr) {
      throw DataError("approximate-real backend expects a real-valued template");
    }
    std::vector<std::int64_t> encoded(values->size());
    for (std::size_t i = 0; i < values->size(); ++i) {
      const double v = (*values)[i];
      if (!std::isfinite(v) || std::abs(v) > kRealRange) {
        throw DataError("template value outside the encodable range");
      }
      encoded[i] = std::llround(v * kRealScale);
    }
    return arithmetic_encrypt(encoded, scheme(), keys, nonces);
  }

  TemplatePayload decrypt(const ProtectedTemplate& ct, const KeyMaterial& keys) const override {
    const auto encoded = arithmetic_decrypt(ct, scheme(), keys);
    RealTemplate values(encoded.size());
    for (std::size_t i = 0; i < encoded.size(); ++i) {
      values[i] = static_cast<double>(encoded[i]) / kRealScale;
    }
    return values;
  }

  ProtectedComparison compare(const ProtectedTemplate& a, const ProtectedTemplate& b,
                              const KeyMaterial& eval_keys, NonceSource& nonces) const override {
    return arithmetic_compare(a, b, scheme(), eval_keys, nonces);
  }

  double decrypt_score(const ProtectedComparison& cmp, const KeyMaterial& keys) const override {
    const std::uint64_t sum = arithmetic_decrypt_sum(cmp, scheme(), keys);
    return static_cast<double>(sum) / (kRealScale * kRealScale);
  }
};

class ExactIntBackend final : public ComparisonBackend {
 public:
  Scheme scheme() const override { return Scheme::kExactInt; }

  ProtectedTemplate encrypt(const TemplatePayload& plain, const KeyMaterial& keys,
                            NonceSource& nonces) const override {
    const auto* values = std::get_if<IntTemplate>(&plain);
    if (values == nullptr) throw DataError("exact-int backend expects an integer template");
    std::vector<std::int64_t> encoded(values->begin(), values->end());
    return arithmetic_encrypt(encoded, scheme(), keys, nonces);
  }

  TemplatePayload decrypt(const ProtectedTemplate& ct, const KeyMaterial& keys) const override {
    const auto encoded = arithmetic_decrypt(ct, scheme(), keys);
    IntTemplate values(encoded.size());
    for (std::size_t i = 0; i < encoded.size(); ++i) {
      values[i] = static_cast<std::int32_t>(encoded[i]);
    }
    return values;
  }

  ProtectedComparison compare(const ProtectedTemplate& a, const ProtectedTemplate& b,
                              const KeyMaterial& eval_keys, NonceSource& nonces) const override {
    return arithmetic_compare(a, b, scheme(), eval_keys, nonces);
  }

  double decrypt_score(const ProtectedComparison& cmp, const KeyMaterial& keys) const override {
    return static_cast<double>(arithmetic_decrypt_sum(cmp, scheme(), keys));
  }
};

class BinaryBackend final : public ComparisonBackend {
 public:
  Scheme scheme() const override { return Scheme::kBinary; }

  ProtectedTemplate encrypt(const TemplatePayload& plain, const KeyMaterial& keys,
                            NonceSource& nonces) const override {
    check_keys(keys, scheme());
    const auto* bits = std::get_if<BitTemplate>(&plain);
    if (bits == nullptr) throw DataError("binary backend expects a bit template");
    ProtectedTemplate ct;
    ct.scheme = scheme();
    ct.key_id = keys.key_id;
    ct.nonce = nonces.next();
    ct.element_count = static_cast<std::uint32_t>(bits->size());
    ct.payload = pack_bits(*bits);
    xor_keystream(ct.payload, keys, ct.nonce);
    return ct;
  }

  TemplatePayload decrypt(const ProtectedTemplate& ct, const KeyMaterial& keys) const override {
    check_template(ct, scheme(), keys);
    if (ct.payload.size() != (std::size_t{ct.element_count} + 7) / 8) {
      throw DataError("corrupt ciphertext payload");
    }
    std::vector<std::uint8_t> packed = ct.payload;
    xor_keystream(packed, keys, ct.nonce);
    return unpack_bits(packed, ct.element_count);
  }

  // XOR of ciphertexts is the ciphertext of the XOR under both pads; no key
  // material is touched here.
  ProtectedComparison compare(const ProtectedTemplate& a, const ProtectedTemplate& b,
                              const KeyMaterial& eval_keys, NonceSource& nonces) const override {
    (void)nonces;
    check_comparable(a, b, scheme(), eval_keys);
    if (a.payload.size() != b.payload.size()) throw DataError("corrupt ciphertext payload");
    ProtectedComparison cmp;
    cmp.scheme = scheme();
    cmp.key_id = a.key_id;
    cmp.element_count = a.element_count;
    cmp.nonces = {a.nonce, b.nonce};
    cmp.payload.resize(a.payload.size());
    for (std::size_t i = 0; i < a.payload.size(); ++i) {
      cmp.payload[i] = a.payload[i] ^ b.payload[i];
    }
    return cmp;
  }

  BitTemplate decrypt_differences(const ProtectedComparison& cmp,
                                  const KeyMaterial& keys) const override {
    if (cmp.scheme != scheme() || keys.scheme != scheme()) throw DataError("key/scheme mismatch");
    if (cmp.key_id != keys.key_id) throw DataError("comparison was produced under a different key");
    if (cmp.nonces.size() != 2 ||
        cmp.payload.size() != (std::size_t{cmp.element_count} + 7) / 8) {
      throw DataError("corrupt comparison payload");
    }
    std::vector<std::uint8_t> packed = cmp.payload;
    xor_keystream(packed, keys, cmp.nonces[0]);
    xor_keystream(packed, keys, cmp.nonces[1]);
    return unpack_bits(packed, cmp.element_count);
  }

  double decrypt_score(const ProtectedComparison& cmp, const KeyMaterial& keys) const override {
    const BitTemplate diff = decrypt_differences(cmp, keys);
    std::uint64_t weight = 0;
    for (std::uint8_t bit : diff) weight += bit;
    return static_cast<double>(weight);
  }
};

}  // namespace

BitTemplate ComparisonBackend::decrypt_differences(const ProtectedComparison&,
                                                   const KeyMaterial&) const {
  throw DataError("per-position differences are only available for the binary scheme");
}

std::unique_ptr<ComparisonBackend> make_backend(Scheme scheme) {
  switch (scheme) {
    case Scheme::kPlaintextRef: return std::make_unique<PlaintextRefBackend>();
    case Scheme::kApproxReal: return std::make_unique<ApproxRealBackend>();
    case Scheme::kExactInt: return std::make_unique<ExactIntBackend>();
    case Scheme::kBinary: return std::make_unique<BinaryBackend>();
  }
  throw InternalError("unknown scheme value");
}

// ---------------------------------------------------------------------------
// Quantization / binarization

QuantizationParams train_quantization(const std::vector<EmbeddingVector>& train, int bits) {
  if (train.empty()) throw DataError("quantization training set is empty");
  if (bits < 1 || bits > 16) throw DataError("quantization bits must lie in [1, 16]");
  const std::size_t dim = train.front().size();
  QuantizationParams params;
  params.bits = bits;
  params.min_per_dim = train.front();
  params.max_per_dim = train.front();
  for (const auto& v : train) {
    if (v.size() != dim) throw DataError("dimension mismatch in quantization training set");
    for (std::size_t i = 0; i < dim; ++i) {
      params.min_per_dim[i] = std::min(params.min_per_dim[i], v[i]);
      params.max_per_dim[i] = std::max(params.max_per_dim[i], v[i]);
    }
  }
  params.degenerate.assign(dim, 0);
  for (std::size_t i = 0; i < dim; ++i) {
    if (!(params.min_per_dim[i] < params.max_per_dim[i])) params.degenerate[i] = 1;
  }
  return params;
}

IntTemplate quantize(const EmbeddingVector& v, const QuantizationParams& params) {
  if (v.size() != params.min_per_dim.size()) {
    throw std::invalid_argument("dimension mismatch in quantize");
  }
  const std::int32_t levels = (std::int32_t{1} << params.bits) - 1;
  IntTemplate q(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (params.degenerate[i]) {
      q[i] = 0;
      continue;
    }
    const double t =
        (v[i] - params.min_per_dim[i]) / (params.max_per_dim[i] - params.min_per_dim[i]);
    const auto r = static_cast<std::int64_t>(std::llround(t * levels));
    q[i] = static_cast<std::int32_t>(std::clamp<std::int64_t>(r, 0, levels));
  }
  return q;
}

EmbeddingVector dequantize(const IntTemplate& q, const QuantizationParams& params) {
  if (q.size() != params.min_per_dim.size()) {
    throw std::invalid_argument("dimension mismatch in dequantize");
  }
  const double levels = static_cast<double>((std::int32_t{1} << params.bits) - 1);
  EmbeddingVector v(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (params.degenerate[i]) {
      v[i] = params.min_per_dim[i];
      continue;
    }
    v[i] = params.min_per_dim[i] +
           static_cast<double>(q[i]) / levels * (params.max_per_dim[i] - params.min_per_dim[i]);
  }
  return v;
}

BitTemplate binarize(const EmbeddingVector& v, const TrainingStats& stats) {
  if (v.size() != stats.mu.size()) throw std::invalid_argument("dimension mismatch in binarize");
  BitTemplate bits(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) bits[i] = v[i] >= stats.mu[i] ? 1 : 0;
  return bits;
}

// ---------------------------------------------------------------------------
// Protected index

namespace {

std::unique_ptr<FusionNode> clone_structure(const FusionNode& node) {
  auto copy = std::make_unique<FusionNode>();
  copy->level = node.level;
  copy->covered_subjects = node.covered_subjects;
  copy->leaf_subject = node.leaf_subject;
  copy->ordinal = node.ordinal;
  if (!node.is_leaf()) {
    copy->left = clone_structure(*node.left);
    copy->right = clone_structure(*node.right);
  }
  return copy;
}

IndexForest clone_skeleton(const IndexForest& forest) {
  IndexForest skeleton;
  skeleton.n1 = forest.n1;
  skeleton.dim = forest.dim;
  skeleton.fusion = forest.fusion;
  skeleton.stats = forest.stats;
  skeleton.default_selections = forest.default_selections;
  skeleton.trees.reserve(forest.trees.size());
  for (const auto& tree : forest.trees) skeleton.trees.push_back(clone_structure(*tree));
  return skeleton;
}

TemplatePayload encode_for_index(const EmbeddingVector& v, const ProtectedIndex& index) {
  switch (index.scheme) {
    case Scheme::kPlaintextRef:
    case Scheme::kApproxReal:
      return RealTemplate(v);
    case Scheme::kExactInt:
      return quantize(v, *index.quant);
    case Scheme::kBinary: {
      TrainingStats stats;
      stats.mu = *index.binary_mu;
      return binarize(v, stats);
    }
  }
  throw InternalError("unknown scheme value");
}

void encrypt_nodes(const FusionNode& node, const ProtectedIndex& index,
                   const ComparisonBackend& backend, const KeyMaterial& keys, NonceSource& nonces,
                   std::vector<ProtectedTemplate>& out) {
  out.push_back(backend.encrypt(encode_for_index(node.fused, index), keys, nonces));
  if (!node.is_leaf()) {
    encrypt_nodes(*node.left, index, backend, keys, nonces, out);
    encrypt_nodes(*node.right, index, backend, keys, nonces, out);
  }
}

}  // namespace

ProtectedIndex encrypt_index(const IndexForest& forest, const ComparisonBackend& backend,
                             const KeyMaterial& keys, NonceSource& nonces,
                             const QuantizationParams* quant, const TrainingStats* stats) {
  check_forest(forest);
  check_keys(keys, backend.scheme());
  ProtectedIndex index;
  index.scheme = backend.scheme();
  index.key_id = keys.key_id;
  if (index.scheme == Scheme::kExactInt) {
    if (quant == nullptr) throw DataError("the exact-int scheme requires quantization params");
    if (quant->min_per_dim.size() != forest.dim) {
      throw DataError("quantization params dimension mismatch");
    }
    index.quant = *quant;
  }
  if (index.scheme == Scheme::kBinary) {
    if (stats == nullptr) throw DataError("the binary scheme requires training stats");
    if (stats->mu.size() != forest.dim) throw DataError("training stats dimension mismatch");
    index.binary_mu = stats->mu;
  }
  index.skeleton = clone_skeleton(forest);
  assign_ordinals(index.skeleton);
  for (const auto& tree : forest.trees) {
    encrypt_nodes(*tree, index, backend, keys, nonces, index.node_templates);
  }
  return index;
}

ProtectedTemplate encrypt_probe(const ProtectedIndex& index, const ComparisonBackend& backend,
                                const EmbeddingVector& probe, const KeyMaterial& keys,
                                NonceSource& nonces) {
  if (probe.size() != index.skeleton.dim) throw DataError("probe dimension mismatch");
  if (backend.scheme() != index.scheme) throw DataError("key/scheme mismatch");
  return backend.encrypt(encode_for_index(probe, index), keys, nonces);
}

NodeScorer protected_scorer(const ProtectedIndex& index, const ComparisonBackend& backend,
                            const ProtectedTemplate& encrypted_probe, const KeyMaterial& keys) {
  if (backend.scheme() != index.scheme || keys.scheme != index.scheme) {
    throw DataError("key/scheme mismatch");
  }
  if (keys.key_id != index.key_id || encrypted_probe.key_id != index.key_id) {
    throw DataError("probe and index are protected under different keys");
  }
  // Score nonces never reach persisted artifacts; any deterministic stream
  // keeps full-run reproducibility.
  auto score_nonces = std::make_shared<NonceSource>(encrypted_probe.nonce ^ kDomainScore);
  return [&index, &backend, &encrypted_probe, &keys, score_nonces](const FusionNode& node) {
    const ProtectedTemplate& ct = index.node_templates.at(node.ordinal);
    const ProtectedComparison cmp = backend.compare(encrypted_probe, ct, keys, *score_nonces);
    return backend.decrypt_score(cmp, keys);
  };
}

std::vector<ProtectedTemplate> rekey_templates(const std::vector<ProtectedTemplate>& templates,
                                               const ComparisonBackend& backend,
                                               const KeyMaterial& old_keys,
                                               const KeyMaterial& new_keys, NonceSource& nonces) {
  check_keys(old_keys, backend.scheme());
  check_keys(new_keys, backend.scheme());
  if (!old_keys.has_secret) throw DataError("rekey requires the old secret key");
  std::vector<ProtectedTemplate> out;
  out.reserve(templates.size());
  for (const auto& ct : templates) {
    out.push_back(backend.encrypt(backend.decrypt(ct, old_keys), new_keys, nonces));
  }
  return out;
}

ProtectedIndex rekey_index(const ProtectedIndex& index, const ComparisonBackend& backend,
                           const KeyMaterial& old_keys, const KeyMaterial& new_keys,
                           NonceSource& nonces) {
  if (index.scheme != backend.scheme()) throw DataError("key/scheme mismatch");
  if (old_keys.key_id != index.key_id) throw DataError("wrong old key for this index");
  ProtectedIndex out;
  out.scheme = index.scheme;
  out.key_id = new_keys.key_id;
  out.skeleton = clone_skeleton(index.skeleton);
  out.quant = index.quant;
  out.binary_mu = index.binary_mu;
  out.node_templates = rekey_templates(index.node_templates, backend, old_keys, new_keys, nonces);
  return out;
}

// ---------------------------------------------------------------------------
// Protected index container

namespace {

constexpr char kIndexMagic[4] = {'B', 'I', 'D', 'X'};
constexpr std::uint16_t kIndexVersion = 1;

void write_protected_node(std::vector<std::uint8_t>& out, const FusionNode& node,
                          const std::vector<ProtectedTemplate>& templates) {
  const ProtectedTemplate& ct = templates.at(node.ordinal);
  std::vector<std::uint8_t> payload;
  payload.push_back(node.is_leaf() ? 1 : 0);
  if (node.is_leaf()) detail::put_u64(payload, node.leaf_subject);
  detail::put_u64(payload, ct.nonce);
  detail::put_u32(payload, ct.element_count);
  detail::put_u32(payload, static_cast<std::uint32_t>(ct.payload.size()));
  detail::put_bytes(payload, ct.payload);
  detail::put_u32(out, static_cast<std::uint32_t>(payload.size()));
  detail::put_bytes(out, payload);
  if (!node.is_leaf()) {
    write_protected_node(out, *node.left, templates);
    write_protected_node(out, *node.right, templates);
  }
}

std::unique_ptr<FusionNode> read_protected_node(detail::ByteReader& reader, int level,
                                                int leaf_level, Scheme scheme,
                                                const std::string& key_id,
                                                std::vector<ProtectedTemplate>& templates) {
  const std::uint32_t payload_len = reader.get_u32();
  const auto payload_bytes = reader.get_bytes(payload_len);
  detail::ByteReader payload(payload_bytes, "protected index node");
  auto node = std::make_unique<FusionNode>();
  node->level = level;
  const bool leaf = payload.get_u8() != 0;
  if (leaf) node->leaf_subject = payload.get_u64();
  ProtectedTemplate ct;
  ct.scheme = scheme;
  ct.key_id = key_id;
  ct.nonce = payload.get_u64();
  ct.element_count = payload.get_u32();
  ct.payload = payload.get_bytes(payload.get_u32());
  if (!payload.done()) throw DataError("protected node payload has trailing bytes");
  templates.push_back(std::move(ct));
  if (leaf) {
    if (level != leaf_level) throw DataError("leaf node at wrong tree depth");
    node->covered_subjects = {node->leaf_subject};
    return node;
  }
  if (level >= leaf_level) throw DataError("internal node below leaf depth");
  node->left = read_protected_node(reader, level + 1, leaf_level, scheme, key_id, templates);
  node->right = read_protected_node(reader, level + 1, leaf_level, scheme, key_id, templates);
  std::merge(node->left->covered_subjects.begin(), node->left->covered_subjects.end(),
             node->right->covered_subjects.begin(), node->right->covered_subjects.end(),
             std::back_inserter(node->covered_subjects));
  return node;
}

}  // namespace

void write_protected_index(const ProtectedIndex& index, const std::string& path) {
  check_forest(index.skeleton);
  if (index.node_templates.empty()) throw DataError("protected index has no ciphertexts");
  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), kIndexMagic, kIndexMagic + 4);
  detail::put_u16(bytes, kIndexVersion);
  detail::put_u16(bytes, 0);  // reserved
  bytes.push_back(static_cast<std::uint8_t>(index.scheme));
  detail::put_u32(bytes, static_cast<std::uint32_t>(index.skeleton.n1));
  detail::put_u32(bytes, index.skeleton.dim);
  bytes.push_back(static_cast<std::uint8_t>(index.skeleton.fusion));
  bytes.push_back(index.skeleton.stats ? 1 : 0);
  if (index.skeleton.stats) {
    detail::put_u64(bytes, index.skeleton.stats->source_count);
    for (double v : index.skeleton.stats->mu) detail::put_f32(bytes, static_cast<float>(v));
  }
  detail::put_u32(bytes, static_cast<std::uint32_t>(index.skeleton.default_selections.size()));
  for (std::uint64_t s : index.skeleton.default_selections) detail::put_u64(bytes, s);
  detail::put_string(bytes, index.key_id);
  bytes.push_back(index.quant ? 1 : 0);
  if (index.quant) {
    bytes.push_back(static_cast<std::uint8_t>(index.quant->bits));
    // Auxiliary params keep full precision so probe-side quantization
    // matches the one used at build time bit for bit.
    for (double v : index.quant->min_per_dim) detail::put_f64(bytes, v);
    for (double v : index.quant->max_per_dim) detail::put_f64(bytes, v);
    detail::put_bytes(bytes, index.quant->degenerate);
  }
  bytes.push_back(index.binary_mu ? 1 : 0);
  if (index.binary_mu) {
    for (double v : *index.binary_mu) detail::put_f64(bytes, v);
  }
  detail::put_u32(bytes, static_cast<std::uint32_t>(index.skeleton.trees.size()));
  for (const auto& tree : index.skeleton.trees) {
    write_protected_node(bytes, *tree, index.node_templates);
  }
  io::write_file_atomic(path, bytes);
}

ProtectedIndex read_protected_index(const std::string& path) {
  const auto bytes = io::read_file(path);
  detail::ByteReader reader(bytes, path);
  ProtectedIndex index;
  try {
    char magic[4];
    for (char& m : magic) m = static_cast<char>(reader.get_u8());
    if (std::memcmp(magic, kIndexMagic, 4) != 0) throw DataError("bad magic in " + path);
    if (reader.get_u16() != kIndexVersion) {
      throw DataError("unsupported index file version in " + path);
    }
    reader.get_u16();  // reserved
    const std::uint8_t scheme_byte = reader.get_u8();
    if (scheme_byte == 0) {
      throw DataError("index file is not protected; load it through the data module");
    }
    if (scheme_byte > 3) throw DataError("unknown protection scheme in " + path);
    index.scheme = static_cast<Scheme>(scheme_byte);
    index.skeleton.n1 = static_cast<int>(reader.get_u32());
    index.skeleton.dim = reader.get_u32();
    if (index.skeleton.n1 < 2 || !is_power_of_two(static_cast<std::uint64_t>(index.skeleton.n1))) {
      throw DataError("corrupt index header: bad n1");
    }
    index.skeleton.fusion = static_cast<FusionMethodId>(reader.get_u8());
    if (reader.get_u8() != 0) {
      TrainingStats stats;
      stats.source_count = reader.get_u64();
      stats.mu.resize(index.skeleton.dim);
      for (std::uint32_t d = 0; d < index.skeleton.dim; ++d) stats.mu[d] = reader.get_f32();
      index.skeleton.stats = std::move(stats);
    }
    const std::uint32_t sched_len = reader.get_u32();
    index.skeleton.default_selections.resize(sched_len);
    for (std::uint32_t i = 0; i < sched_len; ++i) {
      index.skeleton.default_selections[i] = reader.get_u64();
    }
    index.key_id = reader.get_string();
    if (reader.get_u8() != 0) {
      QuantizationParams params;
      params.bits = reader.get_u8();
      params.min_per_dim.resize(index.skeleton.dim);
      params.max_per_dim.resize(index.skeleton.dim);
      for (auto& v : params.min_per_dim) v = reader.get_f64();
      for (auto& v : params.max_per_dim) v = reader.get_f64();
      params.degenerate = reader.get_bytes(index.skeleton.dim);
      index.quant = std::move(params);
    }
    if (reader.get_u8() != 0) {
      EmbeddingVector mu(index.skeleton.dim);
      for (auto& v : mu) v = reader.get_f64();
      index.binary_mu = std::move(mu);
    }
    const std::uint32_t tree_count = reader.get_u32();
    const int leaf_level = index.skeleton.levels();
    for (std::uint32_t t = 0; t < tree_count; ++t) {
      index.skeleton.trees.push_back(read_protected_node(reader, 1, leaf_level, index.scheme,
                                                         index.key_id, index.node_templates));
    }
    if (!reader.done()) throw DataError("trailing bytes in " + path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  assign_ordinals(index.skeleton);
  check_forest(index.skeleton);
  if (index.scheme == Scheme::kExactInt && !index.quant) {
    throw DataError("exact-int index file lacks quantization params");
  }
  if (index.scheme == Scheme::kBinary && !index.binary_mu) {
    throw DataError("binary index file lacks its binarization threshold");
  }
  return index;
}

}  // namespace biocascade
