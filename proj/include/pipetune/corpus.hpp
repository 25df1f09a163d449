#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pipetune/config_space.hpp"

namespace pipetune {

struct TrajectoryPoint {
  int step = 0;
  double value = 0.0;

  bool operator==(const TrajectoryPoint&) const = default;
};

// Logged training dynamics of a (possibly truncated) SFT run.
struct EarlyStopTrajectory {
  std::map<std::string, std::vector<TrajectoryPoint>> channels;
  // Fraction of the full SFT horizon the series covers, in (0, 1].
  double truncation_fraction = 1.0;
  // Planned step count of the full run; 0 means "infer from the data".
  int horizon = 0;

  // Throws InvalidArgument unless every series has >= 2 points with strictly
  // increasing steps and truncation_fraction is in (0, 1].
  void validate() const;
  int last_step() const;
  // Explicit horizon, or last_step / truncation_fraction rounded.
  int horizon_steps() const;

  bool operator==(const EarlyStopTrajectory&) const = default;
};

struct RunRecord {
  std::string dataset_id;
  Configuration config;
  double final_score = 0.0;
  std::optional<EarlyStopTrajectory> trajectory;
  nlohmann::json tags = nlohmann::json::object();
  // Keys this library does not interpret, preserved on round-trip.
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const RunRecord&) const = default;
};

struct DatasetGroup {
  std::string dataset_id;
  std::vector<RunRecord> records;
  std::vector<std::string> meta_names;
  std::vector<double> meta_features;

  bool operator==(const DatasetGroup&) const = default;
};

// Per-dataset z-normalization of final scores: (y - mean) / (stddev + eps).
class Standardizer {
 public:
  static constexpr double kEpsilon = 1e-8;

  struct Stats {
    double mean = 0.0;
    double stddev = 0.0;
  };

  void set(const std::string& dataset_id, Stats stats) { stats_[dataset_id] = stats; }
  bool contains(const std::string& dataset_id) const { return stats_.count(dataset_id) != 0; }
  const Stats& stats(const std::string& dataset_id) const;
  const std::map<std::string, Stats>& all() const { return stats_; }

  double standardize(const std::string& dataset_id, double y) const;

 private:
  std::map<std::string, Stats> stats_;
};

// Population mean/stddev of final_score per group.
Standardizer fit_standardizer(const std::vector<DatasetGroup>& groups);

inline double standardize(const Standardizer& std_, const std::string& dataset_id, double y) {
  return std_.standardize(dataset_id, y);
}

// JSONL corpus: one RunRecord per line. Records are grouped by dataset_id in
// first-appearance order; order within a group is preserved.
std::vector<DatasetGroup> load_corpus(const std::filesystem::path& path, const ConfigSpace& space);
std::vector<DatasetGroup> parse_corpus(std::istream& in, const ConfigSpace& space);
void save_corpus(const std::filesystem::path& path, const std::vector<DatasetGroup>& groups,
                 const ConfigSpace& space);

nlohmann::json record_to_json(const RunRecord& record, const ConfigSpace& space,
                              const DatasetGroup* group = nullptr);
nlohmann::json trajectory_to_json(const EarlyStopTrajectory& traj);
EarlyStopTrajectory trajectory_from_json(const nlohmann::json& channels, double truncation_fraction,
                                         int horizon);

// Key used as the pairwise-ranking group: tags.group when present, else dataset_id.
std::string ranking_group_key(const RunRecord& record);

}  // namespace pipetune
