#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pipetune/config_space.hpp"
#include "pipetune/evaluator.hpp"
#include "pipetune/featurize.hpp"
#include "pipetune/gp.hpp"
#include "pipetune/predictor.hpp"
#include "pipetune/ranker.hpp"

namespace pipetune {

// Tempering weight w and exploration coefficient beta over the acquisition
// steps t = 0 .. steps - 1: w falls linearly, beta decays geometrically.
struct Schedules {
  double w_start = 1.0;
  double w_end = 0.7;
  double beta_start = 2.0;
  double beta_end = 0.5;

  double w(int t, int steps) const;
  double beta(int t, int steps) const;
  void validate() const;

  nlohmann::json to_json() const;
  static Schedules from_json(const nlohmann::json& doc);
};

// two_phase is the full method; the others are ablations and the sequential
// random-search baseline, all driven by the same loop.
enum class Strategy { two_phase, no_residual, no_offline, no_bo, random_search };

std::string to_string(Strategy strategy);
Strategy strategy_from_string(const std::string& text);
// Whether the strategy's predictor is trained on absolute targets.
inline bool absolute_targets(Strategy s) { return s == Strategy::no_offline; }

struct OptimizerSettings {
  Strategy strategy = Strategy::two_phase;
  // Early-stopped evaluations in total, warm start included.
  int budget = 15;
  int warm_start = 5;
  double truncation = 0.5;
  Schedules schedules;
  HyperparameterSearch hyperparameters;
  // Kernel hyperparameters are re-estimated every this many acquisitions.
  int refit_every = 5;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static OptimizerSettings from_json(const nlohmann::json& doc);
};

// GP inputs: one-hot blocks unchanged, numeric columns z-scored over the pool.
RowMatrix gp_inputs(const std::vector<Configuration>& pool, const ConfigSpace& space);

// Greedy max-min diverse picks inside the top decile (at least k rows) by raw
// score. The first pick is the raw argmax; later picks maximize the smallest
// distance to those already chosen, with seeded random tie-breaks. Returns
// pool indices.
std::vector<std::size_t> warm_start(const ScoredCandidates& scored, const RowMatrix& features, std::size_t k,
                                    std::uint64_t seed);

inline double tempered_score(double s_z, double b, double mu, double w) { return w * s_z + b + mu; }

// Inverse-variance weighted mean of delta; 0 without observations.
double update_offset(std::span<const double> delta, std::span<const double> variance);

struct Observation {
  std::size_t candidate = 0;  // pool index
  PseudoObservation pseudo;
  // Pre-bias value the GP models: r_hat, or the reconstructed proxy when the
  // strategy models absolute scores.
  double delta = 0.0;
  double s_z = 0.0;
  // Proxy used for the final choice.
  double proxy = 0.0;
};

struct TraceEntry {
  int t = 0;
  std::string phase;
  Configuration candidate;
  std::vector<double> alpha_top5;
  std::optional<double> w;
  std::optional<double> beta;
  double b = 0.0;
  double r_hat = 0.0;
  double v = 0.0;
  bool failed = false;
  double wall_clock = 0.0;
  nlohmann::json kernel;  // null unless hyperparameters were refit

  nlohmann::json to_json(const ConfigSpace& space) const;
};

struct SelectionResult {
  Configuration chosen;
  double proxy_score = 0.0;
  double s_z = 0.0;
  std::size_t evaluations_used = 0;
  std::size_t failed_evaluations = 0;
  std::vector<TraceEntry> trace;

  nlohmann::json to_json(const ConfigSpace& space) const;
};

class OnlineLoop {
 public:
  // `pool.z` supplies s^(z); strategies without offline guidance ignore it.
  OnlineLoop(const ConfigSpace& space, ScoredCandidates pool, const ResidualPredictor& predictor,
             FeatureVector target_meta, OptimizerSettings settings);

  // Steps until the budget is spent.
  void run(Evaluator& evaluator);
  // One early-stopped evaluation: acquire, evaluate, predict, update offset, refit.
  void step(Evaluator& evaluator);
  bool done() const { return evaluations_ >= static_cast<std::size_t>(settings_.budget); }

  // Next candidate (pool index) without evaluating it.
  std::size_t acquire();
  // Argmax of the proxy over successful observations; ties prefer higher s^(z),
  // then the lexicographically smaller configuration.
  SelectionResult finalize() const;

  // The loop's estimate of y^(z) over the pool after the latest update, or
  // empty for strategies that form none.
  std::vector<double> belief() const;

  const ScoredCandidates& pool() const { return pool_; }
  const std::vector<Observation>& observations() const { return observations_; }
  const std::vector<bool>& evaluated() const { return evaluated_; }
  const GaussianProcess& gp() const { return gp_; }
  double offset() const { return offset_; }
  std::size_t evaluations() const { return evaluations_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }
  int acquisition_steps() const { return acquisition_steps_; }

 private:
  bool uses_gp() const;
  double anchor_weight(int acq_t) const;
  void refit_gp(bool hyperparameters, nlohmann::json* kernel_log);

  const ConfigSpace& space_;
  ScoredCandidates pool_;
  const ResidualPredictor& predictor_;
  FeatureVector meta_;
  OptimizerSettings settings_;
  RowMatrix features_;
  std::vector<std::size_t> scripted_;  // predetermined picks (warm start, fixed orders)
  int acquisition_steps_ = 0;
  std::vector<bool> evaluated_;
  std::vector<Observation> observations_;
  std::size_t evaluations_ = 0;
  std::size_t failures_ = 0;
  int acquisitions_done_ = 0;
  double offset_ = 0.0;
  GaussianProcess gp_;
  std::vector<TraceEntry> trace_;
  double started_ = 0.0;
  // Set by acquire() for the trace of the following step.
  std::vector<double> last_alpha_;
  std::optional<double> last_w_, last_beta_;
  nlohmann::json last_kernel_;
};

}  // namespace pipetune
