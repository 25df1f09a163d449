#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pipetune/audit.hpp"
#include "pipetune/config_space.hpp"
#include "pipetune/corpus.hpp"
#include "pipetune/featurize.hpp"
#include "pipetune/gbt.hpp"

namespace pipetune {

struct RankerParams {
  BoostParams boost;
  int members = 3;
  bool filter_meta = true;
  FilterThresholds meta_filter{0.01, 0.97, 1};

  nlohmann::json to_json() const;
  static RankerParams from_json(const nlohmann::json& doc);
};

struct ScoredCandidates {
  std::vector<Configuration> configs;
  std::vector<double> raw;
  // raw z-normalized over this pool; all zeros for constant or singleton pools.
  std::vector<double> z;
};

// Population z-scores of `values`; constant inputs map to zeros.
std::vector<double> standardize_pool(const std::vector<double>& values);

class RankingSurrogate {
 public:
  Ensemble ensemble;
  // Layout of the model input: configuration encoding then meta-features.
  std::vector<std::string> config_names;
  std::vector<std::string> meta_names;
  nlohmann::json manifest = nlohmann::json::object();

  std::vector<std::string> retained_features() const;

  RowMatrix features(const FeatureVector& target_meta, const std::vector<Configuration>& candidates,
                     const ConfigSpace& space) const;
  ScoredCandidates score(const FeatureVector& target_meta, const std::vector<Configuration>& candidates,
                         const ConfigSpace& space) const;

  nlohmann::json to_json() const;
  static RankingSurrogate from_json(const nlohmann::json& doc);
};

// Pairwise ensemble trained on within-group preferences; group = ranking_group_key.
RankingSurrogate train_ranker(const std::vector<DatasetGroup>& groups, const ConfigSpace& space,
                              const RankerParams& params, FitAudit* audit = nullptr);

// Meta-features of a group, empty when the group carries none.
FeatureVector group_meta(const DatasetGroup& group);

// Indices of the k best raw scores; ties go to the lexicographically smaller
// configuration. k beyond the pool returns the whole pool sorted.
std::vector<std::size_t> select_top(const ScoredCandidates& scored, std::size_t k);

}  // namespace pipetune
