#include "pipetune/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "pipetune/error.hpp"
#include "pipetune/rng.hpp"

namespace pipetune {

nlohmann::json RankerParams::to_json() const {
  return {{"boost", boost.to_json()},
          {"members", members},
          {"filter_meta", filter_meta},
          {"meta_filter", {{"variance_ratio", meta_filter.variance_ratio},
                           {"correlation", meta_filter.correlation},
                           {"quorum", meta_filter.quorum}}}};
}

RankerParams RankerParams::from_json(const nlohmann::json& doc) {
  RankerParams p;
  if (doc.contains("boost")) p.boost = BoostParams::from_json(doc["boost"]);
  p.members = doc.value("members", p.members);
  p.filter_meta = doc.value("filter_meta", p.filter_meta);
  if (doc.contains("meta_filter")) {
    const auto& f = doc["meta_filter"];
    p.meta_filter.variance_ratio = f.value("variance_ratio", p.meta_filter.variance_ratio);
    p.meta_filter.correlation = f.value("correlation", p.meta_filter.correlation);
    p.meta_filter.quorum = f.value("quorum", p.meta_filter.quorum);
  }
  return p;
}

std::vector<double> standardize_pool(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<double> z(n, 0.0);
  if (n < 2) return z;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 0.0)) return z;
  for (std::size_t i = 0; i < n; ++i) z[i] = (values[i] - mean) / sd;
  return z;
}

FeatureVector group_meta(const DatasetGroup& group) {
  if (group.meta_features.empty()) return {};
  return dataset_features(group);
}

std::vector<std::string> RankingSurrogate::retained_features() const {
  auto out = config_names;
  out.insert(out.end(), meta_names.begin(), meta_names.end());
  return out;
}

RowMatrix RankingSurrogate::features(const FeatureVector& target_meta, const std::vector<Configuration>& candidates,
                                     const ConfigSpace& space) const {
  if (space.encoded_names() != config_names) throw InvalidArgument("ranker was trained on a different config space");
  const auto meta = select_features(target_meta, meta_names);
  const auto width = static_cast<Eigen::Index>(config_names.size() + meta.size());
  RowMatrix X(static_cast<Eigen::Index>(candidates.size()), width);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto enc = encode(candidates[i], space);
    double* row = X.row(static_cast<Eigen::Index>(i)).data();
    std::copy(enc.begin(), enc.end(), row);
    std::copy(meta.begin(), meta.end(), row + enc.size());
  }
  return X;
}

ScoredCandidates RankingSurrogate::score(const FeatureVector& target_meta, const std::vector<Configuration>& candidates,
                                         const ConfigSpace& space) const {
  if (candidates.empty()) throw InvalidArgument("cannot score an empty candidate pool");
  ScoredCandidates out;
  out.configs = candidates;
  out.raw = ensemble.predict(features(target_meta, candidates, space)).mean;
  out.z = standardize_pool(out.raw);
  return out;
}

nlohmann::json RankingSurrogate::to_json() const {
  return {{"format", "pipetune-ranker"},
          {"version", 1},
          {"config_features", config_names},
          {"meta_features", meta_names},
          {"manifest", manifest},
          {"ensemble", ensemble.to_json()}};
}

RankingSurrogate RankingSurrogate::from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "pipetune-ranker") throw ParseError("not a pipetune-ranker bundle");
  if (doc.value("version", 0) != 1) throw ParseError("unsupported pipetune-ranker version");
  RankingSurrogate r;
  r.config_names = doc.at("config_features").get<std::vector<std::string>>();
  r.meta_names = doc.at("meta_features").get<std::vector<std::string>>();
  r.manifest = doc.value("manifest", nlohmann::json::object());
  r.ensemble = Ensemble::from_json(doc.at("ensemble"));
  if (r.ensemble.feature_count() != r.config_names.size() + r.meta_names.size())
    throw ParseError("ranker feature layout does not match its ensemble");
  return r;
}

RankingSurrogate train_ranker(const std::vector<DatasetGroup>& groups, const ConfigSpace& space,
                              const RankerParams& params, FitAudit* audit) {
  if (params.members < 1) throw InvalidArgument("ranker needs at least one ensemble member");
  RankingSurrogate model;
  model.config_names = space.encoded_names();
  if (params.filter_meta) {
    model.meta_names = retained_meta_features(groups, params.meta_filter);
  } else {
    for (const auto& g : groups)
      if (!g.meta_features.empty()) {
        model.meta_names = dataset_features(g).names();
        break;
      }
  }

  std::size_t rows = 0;
  for (const auto& g : groups) rows += g.records.size();
  std::map<std::string, int> group_index;
  std::vector<double> y;
  std::vector<int> gid;
  y.reserve(rows);
  gid.reserve(rows);
  RowMatrix X(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(model.config_names.size() + model.meta_names.size()));
  std::size_t r = 0;
  std::vector<std::string> ids;
  for (const auto& g : groups) {
    ids.push_back(g.dataset_id);
    std::vector<Configuration> configs;
    for (const auto& rec : g.records) configs.push_back(rec.config);
    X.middleRows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(configs.size())) =
        model.features(group_meta(g), configs, space);
    for (const auto& rec : g.records) {
      auto [it, inserted] = group_index.emplace(ranking_group_key(rec), static_cast<int>(group_index.size()));
      gid.push_back(it->second);
      y.push_back(rec.final_score);
      if (audit) audit->consume(rec);
    }
    r += configs.size();
  }
  model.ensemble = fit_ranker_ensemble(X, y, gid, params.boost, params.members);
  std::vector<std::uint64_t> seeds;
  for (int m = 0; m < params.members; ++m)
    seeds.push_back(derive_seed(params.boost.seed, {static_cast<std::uint64_t>(m)}));
  model.manifest = {{"datasets", ids}, {"seeds", seeds}, {"params", params.to_json()}, {"rows", rows}};
  return model;
}

std::vector<std::size_t> select_top(const ScoredCandidates& scored, std::size_t k) {
  if (k < 1) throw InvalidArgument("k must be at least 1");
  std::vector<std::size_t> idx(scored.raw.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (scored.raw[a] != scored.raw[b]) return scored.raw[a] > scored.raw[b];
    return scored.configs[a] < scored.configs[b];
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  return idx;
}

}  // namespace pipetune
