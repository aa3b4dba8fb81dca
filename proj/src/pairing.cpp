// Copyright 2026 the biocascade authors
// SPDX-License-Identifier: Apache-2.0
#include "biocascade/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "biocascade/detail/rng.hpp"
#include "biocascade/fusion.hpp"

namespace biocascade {

const char* to_string(PairingMethodId m) {
  switch (m) {
    case PairingMethodId::kRandom: return "random";
    case PairingMethodId::kSoftBiometric: return "soft";
    case PairingMethodId::kSimilarityScore: return "score";
  }
  throw InternalError("unknown pairing method value");
}

PairingMethodId pairing_method_from_string(const std::string& s) {
  if (s == "random") return PairingMethodId::kRandom;
  if (s == "soft") return PairingMethodId::kSoftBiometric;
  if (s == "score") return PairingMethodId::kSimilarityScore;
  throw DataError("unknown pairing method: " + s);
}

CostMatrix cost_matrix_scores(const std::vector<EmbeddingVector>& references) {
  const std::size_t n = references.size();
  CostMatrix c(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = euclidean_distance(references[i], references[j]);
      c.set(i, j, d);
      c.set(j, i, d);
    }
  }
  return c;
}

CostMatrix cost_matrix_soft(const std::vector<SoftProfile>& attributes,
                            const SoftWeights& weights) {
  const std::size_t n = attributes.size();
  double age_min = 0.0, age_max = 0.0;
  if (n > 0) {
    age_min = age_max = attributes[0].age;
    for (const auto& a : attributes) {
      age_min = std::min(age_min, a.age);
      age_max = std::max(age_max, a.age);
    }
  }
  const double age_range = age_max > age_min ? age_max - age_min : 1.0;
  CostMatrix c(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double cost = 0.0;
      if (attributes[i].sex != attributes[j].sex) cost += weights.sex;
      if (attributes[i].race != attributes[j].race) cost += weights.race;
      cost += weights.age * std::abs(attributes[i].age - attributes[j].age) / age_range;
      c.set(i, j, cost);
      c.set(j, i, cost);
    }
  }
  return c;
}

CostMatrix cost_matrix_soft(const std::vector<SoftBiometrics>& attributes,
                            const SoftWeights& weights) {
  std::vector<SoftProfile> profiles;
  profiles.reserve(attributes.size());
  for (const auto& a : attributes) {
    profiles.push_back({a.sex, a.race, static_cast<double>(a.age)});
  }
  return cost_matrix_soft(profiles, weights);
}

std::vector<std::size_t> solve_assignment(const CostMatrix& c) {
  const int n = static_cast<int>(c.size);
  if (n < 2) throw std::invalid_argument("assignment requires at least 2 subjects");

  // The sentinel diagonal is clamped to a finite penalty that exceeds the
  // cost of any derangement, which keeps the dual potentials finite while
  // preserving the optimum over fixed-point-free permutations.
  double max_off = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double v = c.sym_at(i, j);
      if (!std::isfinite(v) || v < 0.0) {
        throw std::invalid_argument("off-diagonal costs must be finite and non-negative");
      }
      max_off = std::max(max_off, v);
    }
  }
  const double penalty = (max_off + 1.0) * static_cast<double>(n);
  auto cost = [&](int i, int j) { return i == j ? penalty : c.sym_at(i, j); };

  // Shortest augmenting path assignment with 1-based potentials.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> f(n);
  for (int j = 1; j <= n; ++j) f[p[j] - 1] = static_cast<std::size_t>(j - 1);
  for (int i = 0; i < n; ++i) {
    if (f[i] == static_cast<std::size_t>(i)) {
      throw InternalError("assignment produced a fixed point");
    }
  }
  return f;
}

PairingResult extract_pairs(const std::vector<std::size_t>& f, const CostMatrix& c) {
  const std::size_t n = f.size();
  if (n == 0 || n % 2 != 0) throw std::invalid_argument("pair extraction requires an even set");
  if (n != c.size) throw std::invalid_argument("permutation and matrix size mismatch");
  std::vector<char> image_seen(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (f[i] >= n || image_seen[f[i]]) throw std::invalid_argument("not a permutation");
    if (f[i] == i) throw std::invalid_argument("permutation has a fixed point");
    image_seen[f[i]] = 1;
  }

  PairingResult result;
  std::vector<char> visited(n, 0);
  std::vector<std::size_t> leftovers;
  for (std::size_t start = 0; start < n; ++start) {
    if (visited[start]) continue;
    std::vector<std::size_t> cycle;
    for (std::size_t cur = start; !visited[cur]; cur = f[cur]) {
      visited[cur] = 1;
      cycle.push_back(cur);
    }
    for (std::size_t k = 0; k + 1 < cycle.size(); k += 2) {
      result.pairs.emplace_back(cycle[k], cycle[k + 1]);
    }
    if (cycle.size() % 2 == 1) leftovers.push_back(cycle.back());
  }

  // Odd-cycle leftovers: repeatedly match the cheapest remaining pair,
  // breaking cost ties toward the lowest indices.
  std::sort(leftovers.begin(), leftovers.end());
  std::vector<char> taken(leftovers.size(), 0);
  std::size_t open = leftovers.size();
  while (open > 0) {
    std::size_t best_a = 0, best_b = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    bool found = false;
    for (std::size_t a = 0; a < leftovers.size(); ++a) {
      if (taken[a]) continue;
      for (std::size_t b = a + 1; b < leftovers.size(); ++b) {
        if (taken[b]) continue;
        const double cost = c.sym_at(leftovers[a], leftovers[b]);
        if (!found || cost < best_cost) {
          best_cost = cost;
          best_a = a;
          best_b = b;
          found = true;
        }
      }
    }
    if (!found) throw InternalError("odd leftover pool during pair extraction");
    result.pairs.emplace_back(leftovers[best_a], leftovers[best_b]);
    taken[best_a] = taken[best_b] = 1;
    open -= 2;
  }

  for (auto& [a, b] : result.pairs) {
    if (a > b) std::swap(a, b);
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  result.total_cost = matching_cost(result.pairs, c);
  return result;
}

double matching_cost(const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                     const CostMatrix& c) {
  double total = 0.0;
  for (const auto& [a, b] : pairs) total += c.sym_at(a, b);
  return total;
}

namespace {

void enumerate_matchings(const CostMatrix& c, std::vector<char>& used,
                         std::vector<std::pair<std::size_t, std::size_t>>& current,
                         double current_cost, double& best_cost,
                         std::vector<std::pair<std::size_t, std::size_t>>& best) {
  const std::size_t n = c.size;
  std::size_t i = 0;
  while (i < n && used[i]) ++i;
  if (i == n) {
    if (current_cost < best_cost) {
      best_cost = current_cost;
      best = current;
    }
    return;
  }
  used[i] = 1;
  for (std::size_t j = i + 1; j < n; ++j) {
    if (used[j]) continue;
    used[j] = 1;
    current.emplace_back(i, j);
    enumerate_matchings(c, used, current, current_cost + c.sym_at(i, j), best_cost, best);
    current.pop_back();
    used[j] = 0;
  }
  used[i] = 0;
}

}  // namespace

PairingResult brute_force_matching(const CostMatrix& c) {
  const std::size_t n = c.size;
  if (n == 0 || n % 2 != 0) throw std::invalid_argument("brute force requires an even set");
  if (n > 12) throw std::invalid_argument("brute force limited to N <= 12");
  std::vector<char> used(n, 0);
  std::vector<std::pair<std::size_t, std::size_t>> current, best;
  double best_cost = std::numeric_limits<double>::infinity();
  enumerate_matchings(c, used, current, 0.0, best_cost, best);
  PairingResult result;
  result.pairs = std::move(best);
  std::sort(result.pairs.begin(), result.pairs.end());
  result.total_cost = best_cost;
  return result;
}

namespace {

SoftProfile aggregate_soft(const std::vector<std::size_t>& members,
                           const std::vector<std::optional<SoftBiometrics>>& soft) {
  auto majority = [&](auto field_of) -> std::string {
    std::vector<std::pair<std::string, int>> counts;
    for (std::size_t m : members) {
      const std::string& v = field_of(*soft[m]);
      auto it = std::find_if(counts.begin(), counts.end(),
                             [&](const auto& p) { return p.first == v; });
      if (it == counts.end()) {
        counts.emplace_back(v, 1);
      } else {
        ++it->second;
      }
    }
    int best = 0;
    for (const auto& [value, count] : counts) best = std::max(best, count);
    int winners = 0;
    std::string winner;
    for (const auto& [value, count] : counts) {
      if (count == best) {
        ++winners;
        winner = value;
      }
    }
    if (winners > 1) {
      // Vote tie: adopt the attribute of the lowest-index member.
      const std::size_t lowest = *std::min_element(members.begin(), members.end());
      return field_of(*soft[lowest]);
    }
    return winner;
  };

  SoftProfile profile;
  profile.sex = majority([](const SoftBiometrics& s) -> const std::string& { return s.sex; });
  profile.race = majority([](const SoftBiometrics& s) -> const std::string& { return s.race; });
  double age_sum = 0.0;
  for (std::size_t m : members) age_sum += soft[m]->age;
  profile.age = age_sum / static_cast<double>(members.size());
  return profile;
}

}  // namespace

PairingHierarchy pair_hierarchy(const std::vector<EmbeddingVector>& references,
                                const std::vector<std::optional<SoftBiometrics>>& soft,
                                PairingMethodId method, int n1, FusionMethodId fusion,
                                const TrainingStats* stats, std::uint64_t seed,
                                bool renormalize_fused) {
  const std::size_t n = references.size();
  if (n1 < 2 || !is_power_of_two(static_cast<std::uint64_t>(n1))) {
    throw DataError("n1 must be a power of two >= 2");
  }
  if (n == 0 || n % static_cast<std::size_t>(n1) != 0) {
    throw DataError("gallery size must be divisible by n1");
  }
  if (method == PairingMethodId::kSoftBiometric) {
    if (soft.size() != n) throw DataError("soft attributes missing for soft-biometric pairing");
    for (const auto& s : soft) {
      if (!s) throw DataError("soft attributes missing for soft-biometric pairing");
    }
  }
  if (fusion_requires_stats(fusion) && stats == nullptr) {
    throw DataError("fusion method requires training stats");
  }

  PairingHierarchy h;
  std::vector<std::vector<std::size_t>> groups(n);
  std::vector<EmbeddingVector> reps = references;
  std::vector<SoftProfile> profiles;
  for (std::size_t i = 0; i < n; ++i) groups[i] = {i};
  if (method == PairingMethodId::kSoftBiometric) {
    profiles.reserve(n);
    for (const auto& s : soft) profiles.push_back({s->sex, s->race, static_cast<double>(s->age)});
  }
  h.groups_per_level.push_back(groups);
  h.reps_per_level.push_back(reps);

  detail::Rng rng(seed);
  const int iterations = log2_exact(static_cast<std::uint64_t>(n1));
  for (int t = 0; t < iterations; ++t) {
    const std::size_t group_count = groups.size();
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (method == PairingMethodId::kRandom) {
      std::vector<std::size_t> order(group_count);
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order);
      for (std::size_t i = 0; i + 1 < group_count; i += 2) {
        pairs.emplace_back(order[i], order[i + 1]);
      }
    } else {
      CostMatrix cm = method == PairingMethodId::kSimilarityScore
                          ? cost_matrix_scores(reps)
                          : cost_matrix_soft(profiles);
      auto f = solve_assignment(cm);
      PairingResult pr = extract_pairs(f, cm);
      pr.method = method;
      pairs = pr.pairs;
      h.pairings.push_back(std::move(pr));
    }

    // Merge order: within a pair the group holding the lower original index
    // comes first; new groups sort by their lowest original index.
    struct PlannedMerge {
      std::size_t first, second, key;
    };
    std::vector<PlannedMerge> plan;
    plan.reserve(pairs.size());
    for (const auto& [a, b] : pairs) {
      const std::size_t min_a = *std::min_element(groups[a].begin(), groups[a].end());
      const std::size_t min_b = *std::min_element(groups[b].begin(), groups[b].end());
      if (min_a <= min_b) {
        plan.push_back({a, b, min_a});
      } else {
        plan.push_back({b, a, min_b});
      }
    }
    std::sort(plan.begin(), plan.end(),
              [](const PlannedMerge& x, const PlannedMerge& y) { return x.key < y.key; });

    std::vector<std::vector<std::size_t>> new_groups;
    std::vector<EmbeddingVector> new_reps;
    std::vector<SoftProfile> new_profiles;
    std::vector<GroupMerge> merges;
    new_groups.reserve(plan.size());
    new_reps.reserve(plan.size());
    merges.reserve(plan.size());
    for (const auto& pm : plan) {
      std::vector<std::size_t> members = groups[pm.first];
      members.insert(members.end(), groups[pm.second].begin(), groups[pm.second].end());
      EmbeddingVector rep = fuse(reps[pm.first], reps[pm.second], fusion, stats);
      if (renormalize_fused) l2_normalize(rep);
      if (method == PairingMethodId::kSoftBiometric) {
        new_profiles.push_back(aggregate_soft(members, soft));
      }
      new_groups.push_back(std::move(members));
      new_reps.push_back(std::move(rep));
      merges.push_back({pm.first, pm.second});
    }

    groups = std::move(new_groups);
    reps = std::move(new_reps);
    profiles = std::move(new_profiles);
    h.groups_per_level.push_back(groups);
    h.reps_per_level.push_back(reps);
    h.merges.push_back(std::move(merges));
  }
  return h;
}

}  // namespace biocascade
