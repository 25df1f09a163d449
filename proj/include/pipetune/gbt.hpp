#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "pipetune/matrix.hpp"

namespace pipetune {

struct BoostParams {
  int rounds = 200;
  int max_depth = 4;
  double learning_rate = 0.1;
  int min_leaf = 5;
  std::uint64_t seed = 0;
  // L2 penalty on leaf values for the ranking objective. Regression uses a
  // plain variance-reduction gain and mean-residual leaves.
  double l2 = 1.0;
  // Ranking groups larger than kAllPairsLimit draw this many partners per row.
  int pairs_per_row = 64;
  // Features with more distinct values are bucketed by quantiles (2..256).
  int max_bins = 64;
  // Ensemble members each fit a seeded row subset of this size (1 = all rows).
  double bagging_fraction = 1.0;

  static constexpr std::size_t kAllPairsLimit = 64;

  nlohmann::json to_json() const;
  static BoostParams from_json(const nlohmann::json& doc);
};

struct TreeNode {
  // -1 marks a leaf.
  int feature = -1;
  // Rows with x[feature] <= threshold go left.
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double leaf_value(const double* row) const {
    int i = 0;
    while (nodes[i].feature >= 0) i = row[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
  }
};

// prediction = base_score + learning_rate * sum of leaf values.
class TreeModel {
 public:
  double base_score = 0.0;
  double learning_rate = 0.1;
  std::size_t feature_count = 0;
  std::vector<Tree> trees;
  // Regression only: training MSE after each boosting round (not serialized).
  std::vector<double> training_loss;

  double predict_row(std::span<const double> row) const;
  std::vector<double> predict(const RowMatrix& X) const;

  nlohmann::json to_json() const;
  static TreeModel from_json(const nlohmann::json& doc);
};

struct EnsemblePrediction {
  std::vector<double> mean;
  // Population variance across members.
  std::vector<double> variance;
};

class Ensemble {
 public:
  std::vector<TreeModel> members;

  std::size_t feature_count() const;
  EnsemblePrediction predict(const RowMatrix& X) const;

  nlohmann::json to_json() const;
  static Ensemble from_json(const nlohmann::json& doc);
};

// Squared-error boosting.
TreeModel fit_regressor(const RowMatrix& X, std::span<const double> y, const BoostParams& params);

// Pairwise logistic boosting; only pairs inside the same group contribute.
TreeModel fit_pairwise_ranker(const RowMatrix& X, std::span<const double> y, std::span<const int> group_ids,
                              const BoostParams& params);

// `members` models whose seeds are derived from params.seed. Regression
// members differ only through bagging; with bagging_fraction = 1 they coincide.
Ensemble fit_regressor_ensemble(const RowMatrix& X, std::span<const double> y, const BoostParams& params,
                                int members);
Ensemble fit_ranker_ensemble(const RowMatrix& X, std::span<const double> y, std::span<const int> group_ids,
                             const BoostParams& params, int members);

}  // namespace pipetune
