#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pipetune/config_space.hpp"
#include "pipetune/corpus.hpp"
#include "pipetune/matrix.hpp"

namespace pipetune {

// Named, finite feature values.
class FeatureVector {
 public:
  FeatureVector() = default;
  FeatureVector(std::vector<std::string> names, std::vector<double> values);

  void push_back(std::string name, double value);
  void append(const FeatureVector& other);

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double at(const std::string& name) const;
  std::optional<std::size_t> find(const std::string& name) const;

  bool operator==(const FeatureVector&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<double> values_;
};

struct FeatureMatrix {
  std::vector<std::string> names;
  RowMatrix values;
};

// Position of each wanted name inside `available`; throws NotFound on a miss.
std::vector<std::size_t> column_indices(const std::vector<std::string>& available,
                                        const std::vector<std::string>& wanted);

FeatureVector config_features(const Configuration& config, const ConfigSpace& space);

// The group's precomputed meta-feature vector, verbatim.
FeatureVector dataset_features(const DatasetGroup& group);

// Window geometry relative to the full SFT horizon.
struct TrajectoryWindows {
  // Prefix window: steps <= prefix_fraction * horizon.
  double prefix_fraction = 0.5;
  // Late window: the last late_fraction of the prefix window.
  double late_fraction = 0.2;
};

inline constexpr const char* kTrajectoryStats[] = {"mean", "max", "min", "std", "slope", "mean_diff"};

// For every channel and window: mean, max, min, stddev, least-squares slope
// and mean successive difference, plus a `degenerate` flag that is 1 when the
// window holds fewer than two points (slope and mean_diff are then 0).
// When `expected_channels` is given the output layout follows it, and absent
// channels are emitted as zeros with both degenerate flags set.
FeatureVector trajectory_features(const EarlyStopTrajectory& traj, const TrajectoryWindows& windows = {},
                                  const std::vector<std::string>* expected_channels = nullptr);

// Last step a prefix window may read for this trajectory.
int prefix_cutoff_step(const EarlyStopTrajectory& traj, const TrajectoryWindows& windows);

struct FilterThresholds {
  double variance_ratio = 1e-2;
  double correlation = 0.97;
  // 0 selects max(1, dataset_count - 1).
  std::size_t quorum = 0;
};

struct FilterReport {
  std::vector<std::string> retained;
  std::vector<std::string> removed_low_variance;
  // (kept, removed)
  std::vector<std::pair<std::string, std::string>> removed_correlated;
  std::map<std::string, std::vector<std::string>> per_dataset_flags;
  double threshold_variance_ratio = 0.0;
  double threshold_correlation = 0.0;
  std::size_t flag_quorum = 0;

  nlohmann::json to_json() const;
  static FilterReport from_json(const nlohmann::json& doc);
};

// Flags near-constant features (variance below ratio * median variance) and
// the later member of each highly correlated pair within every dataset, then
// removes features flagged in at least `quorum` datasets.
FilterReport filter_features(const std::map<std::string, FeatureMatrix>& matrix_per_dataset,
                             const FilterThresholds& thresholds = {});

// Meta-features are constant inside a dataset, so they are filtered on the
// across-dataset matrix (one row per group) with the given quorum. Groups
// without meta-features contribute nothing; mixing both kinds is an error.
std::vector<std::string> retained_meta_features(const std::vector<DatasetGroup>& groups,
                                                FilterThresholds thresholds = {0.01, 0.97, 1});

// Values of `names` looked up in `features`, in that order.
std::vector<double> select_features(const FeatureVector& features, const std::vector<std::string>& names);

}  // namespace pipetune
