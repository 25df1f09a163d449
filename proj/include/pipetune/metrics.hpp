#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pipetune/config_space.hpp"

namespace pipetune {

inline double regret(double y_opt, double y_chosen) { return y_opt - y_chosen; }

// 1 when c_opt is among the first k of `ranked`; NotFound if it is absent.
int recall_at_k(std::span<const Configuration> ranked, const Configuration& c_opt, std::size_t k);

// Relevance is the min-max normalized truth; ranks follow predicted scores
// (ties keep input order); gain is linear with 1/log2(rank + 1) discount.
// Constant truth gives 1.0.
double ndcg_at_k(std::span<const double> predicted, std::span<const double> truth, std::size_t k);

// Fraction of pairs with distinct truth ordered the same way by the
// prediction, predicted ties counting one half. Empty when all truth is tied.
std::optional<double> pairwise_accuracy(std::span<const double> predicted, std::span<const double> truth);

// Pearson correlation of mid-ranks. Empty when either side has no rank spread.
std::optional<double> spearman(std::span<const double> predicted, std::span<const double> truth);

// 1-based average ranks (ties share the mean of their positions).
std::vector<double> mid_ranks(std::span<const double> values);

struct SignTestResult {
  std::size_t wins = 0;
  std::size_t losses = 0;
  std::size_t ties = 0;
  // One-sided P(at least `wins` successes) under Binomial(wins + losses, 1/2).
  double p_value = 1.0;
};

// Paired one-sided sign test of a[i] < b[i]; ties are dropped.
SignTestResult sign_test_less(std::span<const double> a, std::span<const double> b);

// Least-squares slope of y against x.
double trend_slope(std::span<const double> x, std::span<const double> y);

}  // namespace pipetune
