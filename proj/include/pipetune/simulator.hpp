#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pipetune/config_space.hpp"
#include "pipetune/corpus.hpp"
#include "pipetune/evaluator.hpp"
#include "pipetune/featurize.hpp"
#include "pipetune/matrix.hpp"

namespace pipetune {

struct SimSpec {
  ConfigSpace space = ConfigSpace::default_space();
  int n_datasets = 10;
  int descriptor_dim = 16;
  double shared_weight = 1.0;
  double residual_weight = 0.5;
  double noise = 0.02;
  // Weight of the true score in the trajectory quality signal.
  double informativeness = 0.7;
  std::uint64_t seed = 0;
  int records_per_dataset = 600;
  int horizon = 40;
  // Relative size of descriptor-dependent changes to the shared response.
  double descriptor_modulation = 0.15;
  // Slope of the logistic link from the combined response to the score.
  double logit_scale = 0.5;
  // Mean logit of a dataset's scores before its random offset.
  double base_logit = -1.0;
  int interactions = 6;
  // Per-step noise of the trajectory channels.
  double trajectory_noise = 0.02;

  // Throws InvalidArgument on an unusable spec.
  void validate() const;
  nlohmann::json to_json() const;
  static SimSpec from_json(const nlohmann::json& doc);
};

inline constexpr const char* kSimChannels[] = {"entropy", "grad_norm", "train_loss", "val_loss"};

class SimModel;

// One synthetic target dataset: y = clamp(sigmoid(k_d + a * (l_s g_s + l_r g_d)) + eps).
class SimDataset {
 public:
  SimDataset(std::shared_ptr<const SimModel> model, int index);

  const std::string& id() const { return id_; }
  int index() const { return index_; }
  const std::vector<double>& descriptor() const { return descriptor_; }
  FeatureVector meta() const;

  // Noiseless score.
  double true_score(const Configuration& config) const;
  // Noiseless scores of enumerate(space), in that order.
  const std::vector<double>& score_table() const { return table_; }
  std::uint64_t optimum_index() const { return optimum_; }
  double optimum_score() const { return table_[optimum_]; }

  // Score with observation noise drawn from a stream keyed by (dataset, config, call_index).
  double evaluate_full(const Configuration& config, std::uint64_t call_index) const;
  // First round(truncation * horizon) steps of the run's dynamics.
  EarlyStopTrajectory emit_trajectory(const Configuration& config, double truncation) const;

  // Standardized combined response (before the link); drives trajectories.
  double quality(std::uint64_t flat_index) const { return quality_[flat_index]; }

 private:
  std::shared_ptr<const SimModel> model_;
  int index_;
  std::string id_;
  std::vector<double> descriptor_;
  std::vector<double> table_;
  std::vector<double> quality_;
  std::uint64_t optimum_ = 0;
};

struct SimWorld {
  SimSpec spec;
  std::vector<SimDataset> datasets;
  SimDataset heldout;
  std::vector<DatasetGroup> corpus;

  const SimDataset& dataset(const std::string& id) const;
};

SimWorld generate(const SimSpec& spec);

// Evaluator backed by one simulated dataset. Full runs draw fresh observation
// noise per call; early runs are deterministic per configuration.
class SimEvaluator : public Evaluator {
 public:
  explicit SimEvaluator(const SimDataset& dataset) : dataset_(dataset) {}

  EarlyStopTrajectory run_early(const Configuration& config, double truncation) override;
  double run_full(const Configuration& config) override;

  std::size_t early_calls() const { return early_calls_; }
  std::size_t full_calls() const { return full_calls_; }

 private:
  const SimDataset& dataset_;
  std::map<Configuration, std::uint64_t> full_counts_;
  std::size_t early_calls_ = 0;
  std::size_t full_calls_ = 0;
};

// Per-dataset optimum and, when the space has at most 50,000 points, the full
// noiseless score table.
nlohmann::json ground_truth_json(const SimWorld& world);

}  // namespace pipetune
