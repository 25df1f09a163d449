#pragma once

#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pipetune/audit.hpp"
#include "pipetune/optimizer.hpp"
#include "pipetune/predictor.hpp"
#include "pipetune/ranker.hpp"
#include "pipetune/simulator.hpp"

namespace pipetune {

enum class Method { two_phase, offline_only, global, random_single, random_search, no_residual, no_bo, no_offline };

std::string to_string(Method method);
Method method_from_string(const std::string& text);
// The online strategy behind a method, or empty for static baselines.
std::optional<Strategy> online_strategy(Method method);

// Seed of one method run on one held-out dataset at one budget.
std::uint64_t method_seed(std::uint64_t seed, const std::string& heldout_id, Method method, int budget);

struct LodoSplit {
  std::string heldout_id;
  std::vector<std::string> training_ids;
};

// One split per dataset, in corpus order.
std::vector<LodoSplit> lodo_splits(const std::vector<DatasetGroup>& corpus);

// Ground truth and pipeline access for held-out targets.
class TargetOracle {
 public:
  virtual ~TargetOracle() = default;
  virtual std::unique_ptr<Evaluator> evaluator(const std::string& dataset_id) const = 0;
  // Noiseless score and the best noiseless score over the whole space.
  virtual double true_score(const std::string& dataset_id, const Configuration& config) const = 0;
  virtual double optimum_score(const std::string& dataset_id) const = 0;
};

class SimOracle : public TargetOracle {
 public:
  explicit SimOracle(const SimWorld& world) : world_(world) {}
  std::unique_ptr<Evaluator> evaluator(const std::string& dataset_id) const override;
  double true_score(const std::string& dataset_id, const Configuration& config) const override;
  double optimum_score(const std::string& dataset_id) const override;

 private:
  const SimWorld& world_;
};

struct MetricReport {
  std::string dataset_id;
  std::string method;
  int budget = 0;
  double truncation = 0.0;
  Configuration chosen;
  // Noiseless score of the chosen configuration and its regret against the
  // space optimum and against the held-out dataset's corpus pool.
  double final_score = 0.0;
  double regret = 0.0;
  double pool_regret = 0.0;
  // Noisy full-fidelity verification run.
  double verified_score = 0.0;
  // Ranking diagnostics over the held-out corpus pool; absent for methods
  // that do not score the pool.
  std::map<int, int> recall_at;
  std::map<int, double> ndcg_at;
  std::optional<double> pairwise_accuracy;
  std::optional<double> spearman;
  std::size_t evaluations_used = 0;
  std::size_t full_evaluations = 0;
  bool negative_regret = false;
  std::string error;

  nlohmann::json to_json(const ConfigSpace& space) const;
};

struct EvalSettings {
  std::vector<Method> methods = {Method::two_phase, Method::offline_only, Method::global, Method::random_single};
  RankerParams ranker;
  PredictorParams predictor;
  // Budget, truncation, schedules and GP search for online methods; the
  // strategy field is ignored.
  OptimizerSettings optimizer;
  // Budgets for online methods; empty means optimizer.budget alone.
  std::vector<int> budgets;
  std::vector<int> ks = {1, 3, 5, 10};
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static EvalSettings from_json(const nlohmann::json& doc);
};

// Offline models fitted on a split's training datasets only.
struct SplitModels {
  LodoSplit split;
  RankingSurrogate ranker;
  std::optional<ResidualPredictor> residual;
  std::optional<ResidualPredictor> absolute;
  FitAudit audit;
};

SplitModels train_split(const std::vector<DatasetGroup>& corpus, const LodoSplit& split, const ConfigSpace& space,
                        const EvalSettings& settings);

// Every requested method (and budget) on the held-out dataset of `models`.
// Throws LeakageError if any held-out record entered a fit.
std::vector<MetricReport> evaluate_split(const std::vector<DatasetGroup>& corpus, const SplitModels& models,
                                         const ConfigSpace& space, const TargetOracle& oracle,
                                         const EvalSettings& settings);

std::vector<MetricReport> run_lodo(const std::vector<DatasetGroup>& corpus, const ConfigSpace& space,
                                   const TargetOracle& oracle, const EvalSettings& settings);

// Config chosen by the Global baseline: best mean score among configurations
// seen in at least two training datasets, else the best single record.
Configuration global_choice(const std::vector<DatasetGroup>& training);

// One row per split x method x budget x metric, in report order.
void write_report_csv(std::ostream& out, const std::vector<MetricReport>& reports);
// Per method and budget: mean of every scalar metric.
nlohmann::json summarize(const std::vector<MetricReport>& reports);

}  // namespace pipetune
