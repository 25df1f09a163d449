#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pipetune/audit.hpp"
#include "pipetune/featurize.hpp"
#include "pipetune/gbt.hpp"
#include "pipetune/ranker.hpp"

namespace pipetune {

enum class TargetKind { residual, absolute };

std::string to_string(TargetKind kind);
TargetKind target_kind_from_string(const std::string& text);

struct PredictorParams {
  BoostParams boost = [] {
    BoostParams b;
    b.bagging_fraction = 0.8;
    return b;
  }();
  int members = 5;
  TargetKind target = TargetKind::residual;
  // prefix_fraction is the truncation point of the early-stopped run.
  TrajectoryWindows windows;
  double variance_floor = 1e-4;
  bool filter = true;
  FilterThresholds trajectory_filter;
  FilterThresholds meta_filter{0.01, 0.97, 1};

  nlohmann::json to_json() const;
  static PredictorParams from_json(const nlohmann::json& doc);
};

struct PseudoObservation {
  Configuration config;
  // Pre-bias prediction: a residual, or y^(z) itself for absolute predictors.
  double r_hat = 0.0;
  double variance = 0.0;
  bool failed = false;
};

class ResidualPredictor {
 public:
  Ensemble ensemble;
  TargetKind target = TargetKind::residual;
  TrajectoryWindows windows;
  double variance_floor = 1e-4;
  std::vector<std::string> channels;
  std::vector<std::string> config_names;
  std::vector<std::string> meta_names;
  std::vector<std::string> trajectory_names;
  std::size_t skipped_records = 0;
  nlohmann::json manifest = nlohmann::json::object();

  std::vector<std::string> retained_features() const;

  // Throws InvalidArgument when the trajectory stops before the prefix cutoff.
  std::vector<double> feature_row(const Configuration& config, const FeatureVector& target_meta,
                                  const EarlyStopTrajectory& traj, const ConfigSpace& space) const;
  PseudoObservation predict(const Configuration& config, const FeatureVector& target_meta,
                            const EarlyStopTrajectory& traj, const ConfigSpace& space) const;

  nlohmann::json to_json() const;
  static ResidualPredictor from_json(const nlohmann::json& doc);
};

// Residual targets use y^(z) from the corpus standardizer minus the ranker's
// scores z-normalized over each training dataset's records; absolute targets
// are y^(z). `ranker` may be null only for absolute targets.
ResidualPredictor train_predictor(const std::vector<DatasetGroup>& groups, const ConfigSpace& space,
                                  const RankingSurrogate* ranker, const PredictorParams& params,
                                  FitAudit* audit = nullptr);

inline double reconstruct(double s_z, double r_hat) { return s_z + r_hat; }

}  // namespace pipetune
