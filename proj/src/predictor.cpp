#include "pipetune/predictor.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "pipetune/error.hpp"

namespace pipetune {

std::string to_string(TargetKind kind) { return kind == TargetKind::residual ? "residual" : "absolute"; }

TargetKind target_kind_from_string(const std::string& text) {
  if (text == "residual") return TargetKind::residual;
  if (text == "absolute") return TargetKind::absolute;
  throw InvalidArgument("unknown target kind '" + text + "'");
}

namespace {

nlohmann::json thresholds_json(const FilterThresholds& t) {
  return {{"variance_ratio", t.variance_ratio}, {"correlation", t.correlation}, {"quorum", t.quorum}};
}

FilterThresholds thresholds_from(const nlohmann::json& doc, FilterThresholds t) {
  t.variance_ratio = doc.value("variance_ratio", t.variance_ratio);
  t.correlation = doc.value("correlation", t.correlation);
  t.quorum = doc.value("quorum", t.quorum);
  return t;
}

}  // namespace

nlohmann::json PredictorParams::to_json() const {
  return {{"boost", boost.to_json()},
          {"members", members},
          {"target", to_string(target)},
          {"prefix_fraction", windows.prefix_fraction},
          {"late_fraction", windows.late_fraction},
          {"variance_floor", variance_floor},
          {"filter", filter},
          {"trajectory_filter", thresholds_json(trajectory_filter)},
          {"meta_filter", thresholds_json(meta_filter)}};
}

PredictorParams PredictorParams::from_json(const nlohmann::json& doc) {
  PredictorParams p;
  if (doc.contains("boost")) p.boost = BoostParams::from_json(doc["boost"]);
  p.members = doc.value("members", p.members);
  p.target = target_kind_from_string(doc.value("target", to_string(p.target)));
  p.windows.prefix_fraction = doc.value("prefix_fraction", p.windows.prefix_fraction);
  p.windows.late_fraction = doc.value("late_fraction", p.windows.late_fraction);
  p.variance_floor = doc.value("variance_floor", p.variance_floor);
  p.filter = doc.value("filter", p.filter);
  if (doc.contains("trajectory_filter")) p.trajectory_filter = thresholds_from(doc["trajectory_filter"], p.trajectory_filter);
  if (doc.contains("meta_filter")) p.meta_filter = thresholds_from(doc["meta_filter"], p.meta_filter);
  return p;
}

std::vector<std::string> ResidualPredictor::retained_features() const {
  auto out = config_names;
  out.insert(out.end(), meta_names.begin(), meta_names.end());
  out.insert(out.end(), trajectory_names.begin(), trajectory_names.end());
  return out;
}

namespace {

FeatureVector checked_trajectory_features(const EarlyStopTrajectory& traj, const TrajectoryWindows& windows,
                                          const std::vector<std::string>& channels) {
  const int cutoff = prefix_cutoff_step(traj, windows);
  if (traj.last_step() < cutoff)
    throw InvalidArgument("trajectory ends at step " + std::to_string(traj.last_step()) +
                          " before the prefix cutoff " + std::to_string(cutoff));
  return trajectory_features(traj, windows, &channels);
}

}  // namespace

std::vector<double> ResidualPredictor::feature_row(const Configuration& config, const FeatureVector& target_meta,
                                                   const EarlyStopTrajectory& traj, const ConfigSpace& space) const {
  if (space.encoded_names() != config_names) throw InvalidArgument("predictor was trained on a different config space");
  auto row = encode(config, space);
  const auto meta = select_features(target_meta, meta_names);
  row.insert(row.end(), meta.begin(), meta.end());
  const auto tf = select_features(checked_trajectory_features(traj, windows, channels), trajectory_names);
  row.insert(row.end(), tf.begin(), tf.end());
  return row;
}

PseudoObservation ResidualPredictor::predict(const Configuration& config, const FeatureVector& target_meta,
                                             const EarlyStopTrajectory& traj, const ConfigSpace& space) const {
  const auto row = feature_row(config, target_meta, traj, space);
  RowMatrix X(1, static_cast<Eigen::Index>(row.size()));
  std::copy(row.begin(), row.end(), X.row(0).data());
  const auto p = ensemble.predict(X);
  return {config, p.mean[0], std::max(p.variance[0], variance_floor), false};
}

nlohmann::json ResidualPredictor::to_json() const {
  return {{"format", "pipetune-predictor"},
          {"version", 1},
          {"target", to_string(target)},
          {"prefix_fraction", windows.prefix_fraction},
          {"late_fraction", windows.late_fraction},
          {"variance_floor", variance_floor},
          {"channels", channels},
          {"config_features", config_names},
          {"meta_features", meta_names},
          {"trajectory_features", trajectory_names},
          {"skipped_records", skipped_records},
          {"manifest", manifest},
          {"ensemble", ensemble.to_json()}};
}

ResidualPredictor ResidualPredictor::from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "pipetune-predictor") throw ParseError("not a pipetune-predictor bundle");
  if (doc.value("version", 0) != 1) throw ParseError("unsupported pipetune-predictor version");
  ResidualPredictor p;
  p.target = target_kind_from_string(doc.at("target").get<std::string>());
  p.windows.prefix_fraction = doc.at("prefix_fraction").get<double>();
  p.windows.late_fraction = doc.at("late_fraction").get<double>();
  p.variance_floor = doc.at("variance_floor").get<double>();
  p.channels = doc.at("channels").get<std::vector<std::string>>();
  p.config_names = doc.at("config_features").get<std::vector<std::string>>();
  p.meta_names = doc.at("meta_features").get<std::vector<std::string>>();
  p.trajectory_names = doc.at("trajectory_features").get<std::vector<std::string>>();
  p.skipped_records = doc.value("skipped_records", std::size_t{0});
  p.manifest = doc.value("manifest", nlohmann::json::object());
  p.ensemble = Ensemble::from_json(doc.at("ensemble"));
  if (p.ensemble.feature_count() != p.retained_features().size())
    throw ParseError("predictor feature layout does not match its ensemble");
  return p;
}

ResidualPredictor train_predictor(const std::vector<DatasetGroup>& groups, const ConfigSpace& space,
                                  const RankingSurrogate* ranker, const PredictorParams& params, FitAudit* audit) {
  if (params.target == TargetKind::residual && !ranker)
    throw InvalidArgument("residual targets need a ranking surrogate");
  if (params.members < 1) throw InvalidArgument("predictor needs at least one ensemble member");
  if (!(params.variance_floor > 0.0)) throw InvalidArgument("variance floor must be positive");

  ResidualPredictor model;
  model.target = params.target;
  model.windows = params.windows;
  model.variance_floor = params.variance_floor;
  model.config_names = space.encoded_names();

  std::set<std::string> channel_set;
  for (const auto& g : groups)
    for (const auto& r : g.records)
      if (r.trajectory)
        for (const auto& [name, series] : r.trajectory->channels) channel_set.insert(name);
  model.channels.assign(channel_set.begin(), channel_set.end());

  struct Row {
    const DatasetGroup* group;
    const RunRecord* record;
    double target;
  };
  std::vector<Row> rows;
  std::map<std::string, FeatureMatrix> traj_matrices;
  std::vector<std::vector<double>> traj_rows;
  std::vector<std::string> traj_names;
  // The standardizer reads every record, so all of them count as consumed.
  const Standardizer standardizer = fit_standardizer(groups);
  if (audit)
    for (const auto& g : groups) audit->consume(g);

  for (const auto& g : groups) {
    std::vector<double> s_z;
    if (params.target == TargetKind::residual) {
      std::vector<Configuration> configs;
      for (const auto& r : g.records) configs.push_back(r.config);
      s_z = ranker->score(group_meta(g), configs, space).z;
    }
    std::vector<std::vector<double>> group_rows;
    for (std::size_t i = 0; i < g.records.size(); ++i) {
      const auto& rec = g.records[i];
      if (!rec.trajectory) {
        ++model.skipped_records;
        continue;
      }
      FeatureVector tf;
      try {
        tf = checked_trajectory_features(*rec.trajectory, params.windows, model.channels);
      } catch (const InvalidArgument&) {
        ++model.skipped_records;
        continue;
      }
      if (traj_names.empty()) traj_names = tf.names();
      const double y_z = standardizer.standardize(g.dataset_id, rec.final_score);
      rows.push_back({&g, &rec, params.target == TargetKind::residual ? y_z - s_z[i] : y_z});
      group_rows.push_back(tf.values());
      traj_rows.push_back(tf.values());
    }
    if (!group_rows.empty()) {
      FeatureMatrix m{traj_names, RowMatrix(static_cast<Eigen::Index>(group_rows.size()),
                                            static_cast<Eigen::Index>(traj_names.size()))};
      for (std::size_t i = 0; i < group_rows.size(); ++i)
        std::copy(group_rows[i].begin(), group_rows[i].end(), m.values.row(static_cast<Eigen::Index>(i)).data());
      traj_matrices.emplace(g.dataset_id, std::move(m));
    }
  }
  if (rows.empty()) throw InvalidArgument("no training record carries a usable trajectory");

  model.meta_names = params.filter ? retained_meta_features(groups, params.meta_filter) : std::vector<std::string>{};
  if (!params.filter)
    for (const auto& g : groups)
      if (!g.meta_features.empty()) {
        model.meta_names = dataset_features(g).names();
        break;
      }
  model.trajectory_names = params.filter ? filter_features(traj_matrices, params.trajectory_filter).retained : traj_names;

  const auto traj_idx = column_indices(traj_names, model.trajectory_names);
  const std::size_t width = model.config_names.size() + model.meta_names.size() + traj_idx.size();
  RowMatrix X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  std::vector<double> y(rows.size());
  std::map<const DatasetGroup*, std::vector<double>> meta_cache;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto it = meta_cache.find(rows[i].group);
    if (it == meta_cache.end())
      it = meta_cache.emplace(rows[i].group, select_features(group_meta(*rows[i].group), model.meta_names)).first;
    double* out = X.row(static_cast<Eigen::Index>(i)).data();
    const auto enc = encode(rows[i].record->config, space);
    out = std::copy(enc.begin(), enc.end(), out);
    out = std::copy(it->second.begin(), it->second.end(), out);
    for (auto j : traj_idx) *out++ = traj_rows[i][j];
    y[i] = rows[i].target;
  }
  model.ensemble = fit_regressor_ensemble(X, y, params.boost, params.members);

  std::vector<std::string> ids;
  for (const auto& g : groups) ids.push_back(g.dataset_id);
  model.manifest = {{"datasets", ids}, {"params", params.to_json()}, {"rows", rows.size()}};
  return model;
}

}  // namespace pipetune
