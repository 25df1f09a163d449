#pragma once

// Exhaustive ranking-metric references for small pools.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "oracles.hpp"

namespace oracle {

// Pairs with distinct truth, counting predicted ties as one half, by direct enumeration.
inline std::optional<double> brute_pairwise(const std::vector<double>& p, const std::vector<double>& t) {
  std::uint64_t twice = 0, comparable = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j) {
      if (t[i] == t[j]) continue;
      ++comparable;
      if (p[i] == p[j]) twice += 1;
      else if ((p[i] < p[j]) == (t[i] < t[j])) twice += 2;
    }
  if (comparable == 0) return std::nullopt;
  return static_cast<double>(twice) / static_cast<double>(2 * comparable);
}

// Mid-rank by counting smaller and equal entries.
inline std::vector<long double> count_ranks(const std::vector<double>& v) {
  std::vector<long double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    long double less = 0, equal = 0;
    for (double x : v) {
      if (x < v[i]) ++less;
      if (x == v[i]) ++equal;
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

inline std::optional<double> brute_spearman(const std::vector<double>& p, const std::vector<double>& t) {
  const auto a = count_ranks(p), b = count_ranks(t);
  const long double n = static_cast<long double>(a.size());
  const long double ma = std::accumulate(a.begin(), a.end(), 0.0L) / n;
  const long double mb = std::accumulate(b.begin(), b.end(), 0.0L) / n;
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

inline std::vector<double> relevance(const std::vector<double>& t) {
  const double lo = *std::min_element(t.begin(), t.end()), hi = *std::max_element(t.begin(), t.end());
  std::vector<double> rel(t.size(), 0.0);
  if (hi > lo)
    for (std::size_t i = 0; i < t.size(); ++i) rel[i] = (t[i] - lo) / (hi - lo);
  return rel;
}

// Ideal DCG as the best DCG over every ordering of the pool.
inline double brute_ideal_dcg(const std::vector<double>& t, std::size_t k) {
  const auto rel = relevance(t);
  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = 0.0;
  do {
    std::vector<double> seq;
    for (auto i : perm) seq.push_back(rel[i]);
    best = std::max(best, oracle::dcg(seq, k));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline double brute_ndcg(const std::vector<double>& p, const std::vector<double>& t, std::size_t k, double ideal) {
  if (ideal == 0.0) return 1.0;
  const auto rel = relevance(t);
  // Predicted order: higher score first, equal scores in input order.
  std::vector<double> ordered(t.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::size_t pos = 0;
    for (std::size_t j = 0; j < p.size(); ++j)
      if (p[j] > p[i] || (p[j] == p[i] && j < i)) ++pos;
    ordered[pos] = rel[i];
  }
  return oracle::dcg(ordered, k) / ideal;
}

inline std::vector<std::vector<double>> truth_pools() {
  return {{0.3},
          {0.1, 0.9},
          {0.5, 0.5},
          {0.2, 0.7, 0.4},
          {0.6, 0.1, 0.6, 0.3},
          {0.9, 0.8, 0.2, 0.25, 0.5},
          {0.0, 1.0, 0.5, 0.5, 0.75, 0.1},
          {0.33, 0.12, 0.91, 0.47, 0.05, 0.68, 0.77},
          {0.4, 0.4, 0.1, 0.9, 0.9, 0.2, 0.4}};
}

}  // namespace oracle
