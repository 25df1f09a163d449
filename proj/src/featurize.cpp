#include "pipetune/featurize.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "pipetune/error.hpp"

namespace pipetune {

FeatureVector::FeatureVector(std::vector<std::string> names, std::vector<double> values)
    : names_(std::move(names)), values_(std::move(values)) {
  if (names_.size() != values_.size()) throw InvalidArgument("feature names and values differ in length");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!seen.insert(names_[i]).second) throw InvalidArgument("duplicate feature name '" + names_[i] + "'");
    if (!std::isfinite(values_[i])) throw InvalidArgument("feature '" + names_[i] + "' is not finite");
  }
}

void FeatureVector::push_back(std::string name, double value) {
  if (!std::isfinite(value)) throw InvalidArgument("feature '" + name + "' is not finite");
  if (find(name)) throw InvalidArgument("duplicate feature name '" + name + "'");
  names_.push_back(std::move(name));
  values_.push_back(value);
}

void FeatureVector::append(const FeatureVector& other) {
  for (std::size_t i = 0; i < other.size(); ++i) push_back(other.names_[i], other.values_[i]);
}

std::optional<std::size_t> FeatureVector::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

double FeatureVector::at(const std::string& name) const {
  auto i = find(name);
  if (!i) throw NotFound("no feature named '" + name + "'");
  return values_[*i];
}

std::vector<std::size_t> column_indices(const std::vector<std::string>& available,
                                        const std::vector<std::string>& wanted) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < available.size(); ++i) pos.emplace(available[i], i);
  std::vector<std::size_t> out;
  out.reserve(wanted.size());
  for (const auto& w : wanted) {
    auto it = pos.find(w);
    if (it == pos.end()) throw NotFound("feature '" + w + "' is not available");
    out.push_back(it->second);
  }
  return out;
}

FeatureVector config_features(const Configuration& config, const ConfigSpace& space) {
  return FeatureVector(space.encoded_names(), encode(config, space));
}

FeatureVector dataset_features(const DatasetGroup& group) {
  if (group.meta_features.empty())
    throw InvalidArgument("dataset '" + group.dataset_id + "' carries no meta-features");
  std::vector<std::string> names = group.meta_names;
  if (names.empty())
    for (std::size_t i = 0; i < group.meta_features.size(); ++i) names.push_back("meta_" + std::to_string(i));
  return FeatureVector(std::move(names), group.meta_features);
}

int prefix_cutoff_step(const EarlyStopTrajectory& traj, const TrajectoryWindows& windows) {
  return static_cast<int>(std::floor(windows.prefix_fraction * traj.horizon_steps() + 1e-9));
}

namespace {

struct WindowStats {
  double mean = 0, max = 0, min = 0, stddev = 0, slope = 0, mean_diff = 0;
  bool degenerate = true;
};

WindowStats window_stats(const std::vector<TrajectoryPoint>& pts, std::size_t begin, std::size_t end) {
  WindowStats s;
  const std::size_t n = end - begin;
  if (n == 0) return s;
  double sum = 0, mx = pts[begin].value, mn = pts[begin].value;
  for (std::size_t i = begin; i < end; ++i) {
    sum += pts[i].value;
    mx = std::max(mx, pts[i].value);
    mn = std::min(mn, pts[i].value);
  }
  s.mean = sum / static_cast<double>(n);
  s.max = mx;
  s.min = mn;
  double ss = 0;
  for (std::size_t i = begin; i < end; ++i) ss += (pts[i].value - s.mean) * (pts[i].value - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(n));
  if (n < 2) return s;
  s.degenerate = false;
  double tmean = 0;
  for (std::size_t i = begin; i < end; ++i) tmean += pts[i].step;
  tmean /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = begin; i < end; ++i) {
    const double dt = pts[i].step - tmean;
    sxy += dt * (pts[i].value - s.mean);
    sxx += dt * dt;
  }
  s.slope = sxx > 0 ? sxy / sxx : 0.0;
  s.mean_diff = (pts[end - 1].value - pts[begin].value) / static_cast<double>(n - 1);
  return s;
}

void emit(FeatureVector& out, const std::string& prefix, const WindowStats& s) {
  out.push_back(prefix + ".mean", s.mean);
  out.push_back(prefix + ".max", s.max);
  out.push_back(prefix + ".min", s.min);
  out.push_back(prefix + ".std", s.stddev);
  out.push_back(prefix + ".slope", s.slope);
  out.push_back(prefix + ".mean_diff", s.mean_diff);
  out.push_back(prefix + ".degenerate", s.degenerate ? 1.0 : 0.0);
}

}  // namespace

FeatureVector trajectory_features(const EarlyStopTrajectory& traj, const TrajectoryWindows& windows,
                                  const std::vector<std::string>* expected_channels) {
  if (!(windows.prefix_fraction > 0 && windows.prefix_fraction <= 1))
    throw InvalidArgument("prefix_fraction must be in (0, 1]");
  if (!(windows.late_fraction > 0 && windows.late_fraction <= 1))
    throw InvalidArgument("late_fraction must be in (0, 1]");
  const int cutoff = prefix_cutoff_step(traj, windows);
  const double late_start = cutoff * (1.0 - windows.late_fraction);

  std::vector<std::string> channels;
  if (expected_channels) {
    channels = *expected_channels;
  } else {
    for (const auto& [name, series] : traj.channels) channels.push_back(name);
  }

  FeatureVector out;
  for (const auto& name : channels) {
    auto it = traj.channels.find(name);
    WindowStats prefix, late;
    if (it != traj.channels.end()) {
      const auto& pts = it->second;
      // Only points at or before the cutoff are ever read.
      std::size_t end = 0;
      while (end < pts.size() && pts[end].step <= cutoff) ++end;
      std::size_t late_begin = end;
      while (late_begin > 0 && pts[late_begin - 1].step > late_start) --late_begin;
      prefix = window_stats(pts, 0, end);
      late = window_stats(pts, late_begin, end);
    }
    emit(out, name + ".prefix", prefix);
    emit(out, name + ".late", late);
  }
  return out;
}

nlohmann::json FilterReport::to_json() const {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [kept, removed] : removed_correlated) pairs.push_back({{"kept", kept}, {"removed", removed}});
  return {{"retained", retained},
          {"removed_low_variance", removed_low_variance},
          {"removed_correlated", pairs},
          {"per_dataset_flags", per_dataset_flags},
          {"threshold_variance_ratio", threshold_variance_ratio},
          {"threshold_correlation", threshold_correlation},
          {"flag_quorum", flag_quorum}};
}

FilterReport FilterReport::from_json(const nlohmann::json& doc) {
  FilterReport r;
  r.retained = doc.at("retained").get<std::vector<std::string>>();
  r.removed_low_variance = doc.at("removed_low_variance").get<std::vector<std::string>>();
  for (const auto& p : doc.at("removed_correlated"))
    r.removed_correlated.emplace_back(p.at("kept").get<std::string>(), p.at("removed").get<std::string>());
  r.per_dataset_flags = doc.at("per_dataset_flags").get<std::map<std::string, std::vector<std::string>>>();
  r.threshold_variance_ratio = doc.at("threshold_variance_ratio").get<double>();
  r.threshold_correlation = doc.at("threshold_correlation").get<double>();
  r.flag_quorum = doc.at("flag_quorum").get<std::size_t>();
  return r;
}

FilterReport filter_features(const std::map<std::string, FeatureMatrix>& matrix_per_dataset,
                             const FilterThresholds& thresholds) {
  if (matrix_per_dataset.empty()) throw InvalidArgument("feature filtering needs at least one dataset");
  const auto& names = matrix_per_dataset.begin()->second.names;
  const std::size_t cols = names.size();
  for (const auto& [id, m] : matrix_per_dataset) {
    if (m.names != names) throw InvalidArgument("dataset '" + id + "' has a different feature layout");
    if (m.values.rows() == 0 || m.values.cols() == 0)
      throw InvalidArgument("dataset '" + id + "' has an empty feature matrix");
    if (static_cast<std::size_t>(m.values.cols()) != cols)
      throw InvalidArgument("dataset '" + id + "' matrix width does not match its names");
  }

  FilterReport report;
  report.threshold_variance_ratio = thresholds.variance_ratio;
  report.threshold_correlation = thresholds.correlation;
  report.flag_quorum = thresholds.quorum > 0
                           ? thresholds.quorum
                           : std::max<std::size_t>(1, matrix_per_dataset.size() - 1);

  std::vector<std::size_t> low_count(cols, 0), corr_count(cols, 0);
  std::vector<std::optional<std::size_t>> first_anchor(cols);

  for (const auto& [id, m] : matrix_per_dataset) {
    const auto rows = static_cast<double>(m.values.rows());
    const Eigen::RowVectorXd mean = m.values.colwise().mean();
    const RowMatrix centered = m.values.rowwise() - mean;
    const Eigen::RowVectorXd var = centered.colwise().squaredNorm() / rows;

    std::vector<double> sorted(var.data(), var.data() + cols);
    std::sort(sorted.begin(), sorted.end());
    const double median = cols % 2 ? sorted[cols / 2] : 0.5 * (sorted[cols / 2 - 1] + sorted[cols / 2]);
    const double var_threshold = thresholds.variance_ratio * median;

    std::vector<bool> flagged(cols, false), low(cols, false);
    for (std::size_t j = 0; j < cols; ++j) {
      if (var[j] <= 0.0 || var[j] < var_threshold) {
        low[j] = flagged[j] = true;
        ++low_count[j];
      }
    }
    for (std::size_t j = 0; j < cols; ++j) {
      if (flagged[j]) continue;
      for (std::size_t i = 0; i < j; ++i) {
        if (flagged[i]) continue;
        const double cov = centered.col(i).dot(centered.col(j)) / rows;
        const double r = cov / std::sqrt(var[i] * var[j]);
        if (std::abs(r) >= thresholds.correlation) {
          flagged[j] = true;
          ++corr_count[j];
          if (!first_anchor[j]) first_anchor[j] = i;
          break;
        }
      }
    }
    auto& list = report.per_dataset_flags[id];
    for (std::size_t j = 0; j < cols; ++j)
      if (flagged[j]) list.push_back(names[j]);
  }

  for (std::size_t j = 0; j < cols; ++j) {
    if (low_count[j] + corr_count[j] < report.flag_quorum) {
      report.retained.push_back(names[j]);
    } else if (low_count[j] >= corr_count[j]) {
      report.removed_low_variance.push_back(names[j]);
    } else {
      report.removed_correlated.emplace_back(names[*first_anchor[j]], names[j]);
    }
  }
  return report;
}

std::vector<std::string> retained_meta_features(const std::vector<DatasetGroup>& groups,
                                                FilterThresholds thresholds) {
  std::vector<const DatasetGroup*> with_meta;
  for (const auto& g : groups)
    if (!g.meta_features.empty()) with_meta.push_back(&g);
  if (with_meta.empty()) return {};
  if (with_meta.size() != groups.size()) throw InvalidArgument("only some datasets carry meta-features");
  const auto names = dataset_features(*with_meta.front()).names();
  FeatureMatrix m{names, RowMatrix(static_cast<Eigen::Index>(with_meta.size()), static_cast<Eigen::Index>(names.size()))};
  for (std::size_t i = 0; i < with_meta.size(); ++i) {
    const auto f = dataset_features(*with_meta[i]);
    if (f.names() != names) throw InvalidArgument("datasets disagree on meta-feature names");
    for (std::size_t j = 0; j < names.size(); ++j)
      m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f.values()[j];
  }
  if (names.empty()) return {};
  return filter_features({{"datasets", std::move(m)}}, thresholds).retained;
}

std::vector<double> select_features(const FeatureVector& features, const std::vector<std::string>& names) {
  std::vector<double> out;
  out.reserve(names.size());
  for (auto i : column_indices(features.names(), names)) out.push_back(features.values()[i]);
  return out;
}

}  // namespace pipetune
