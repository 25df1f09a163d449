#include "pipetune/corpus.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "pipetune/error.hpp"

namespace pipetune {

namespace {

const char* const kKnownKeys[] = {"dataset_id", "config",     "final_score", "trajectory",
                                  "truncation_fraction", "horizon", "tags", "meta_features"};

bool known_key(const std::string& key) {
  for (const char* k : kKnownKeys)
    if (key == k) return true;
  return false;
}

}  // namespace

void EarlyStopTrajectory::validate() const {
  if (!(truncation_fraction > 0.0 && truncation_fraction <= 1.0))
    throw InvalidArgument("truncation_fraction must be in (0, 1]");
  if (horizon < 0) throw InvalidArgument("horizon must be non-negative");
  if (channels.empty()) throw InvalidArgument("trajectory has no channels");
  for (const auto& [name, series] : channels) {
    if (series.size() < 2) throw InvalidArgument("channel '" + name + "' has fewer than 2 points");
    for (std::size_t i = 0; i < series.size(); ++i) {
      if (!std::isfinite(series[i].value))
        throw InvalidArgument("channel '" + name + "' has a non-finite value");
      if (i > 0 && series[i].step <= series[i - 1].step)
        throw InvalidArgument("channel '" + name + "' steps are not strictly increasing");
    }
  }
}

int EarlyStopTrajectory::last_step() const {
  int last = 0;
  for (const auto& [name, series] : channels)
    if (!series.empty()) last = std::max(last, series.back().step);
  return last;
}

int EarlyStopTrajectory::horizon_steps() const {
  if (horizon > 0) return horizon;
  return static_cast<int>(std::lround(last_step() / truncation_fraction));
}

const Standardizer::Stats& Standardizer::stats(const std::string& dataset_id) const {
  auto it = stats_.find(dataset_id);
  if (it == stats_.end()) throw NotFound("no standardization statistics for dataset '" + dataset_id + "'");
  return it->second;
}

double Standardizer::standardize(const std::string& dataset_id, double y) const {
  const auto& s = stats(dataset_id);
  return (y - s.mean) / (s.stddev + kEpsilon);
}

Standardizer fit_standardizer(const std::vector<DatasetGroup>& groups) {
  Standardizer out;
  for (const auto& g : groups) {
    if (g.records.empty()) throw InvalidArgument("dataset '" + g.dataset_id + "' has no records");
    double sum = 0.0;
    for (const auto& r : g.records) sum += r.final_score;
    const double mean = sum / static_cast<double>(g.records.size());
    double ss = 0.0;
    for (const auto& r : g.records) ss += (r.final_score - mean) * (r.final_score - mean);
    out.set(g.dataset_id, {mean, std::sqrt(ss / static_cast<double>(g.records.size()))});
  }
  return out;
}

std::string ranking_group_key(const RunRecord& record) {
  auto it = record.tags.find("group");
  if (it != record.tags.end() && it->is_string()) return it->get<std::string>();
  return record.dataset_id;
}

nlohmann::json trajectory_to_json(const EarlyStopTrajectory& traj) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, series] : traj.channels) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : series) pts.push_back(nlohmann::json::array({p.step, p.value}));
    out[name] = std::move(pts);
  }
  return out;
}

EarlyStopTrajectory trajectory_from_json(const nlohmann::json& channels, double truncation_fraction,
                                         int horizon) {
  if (!channels.is_object()) throw ParseError("trajectory must be an object of channels");
  EarlyStopTrajectory traj;
  traj.truncation_fraction = truncation_fraction;
  traj.horizon = horizon;
  for (const auto& [name, pts] : channels.items()) {
    if (!pts.is_array()) throw ParseError("channel '" + name + "' must be a list of [step, value]");
    auto& series = traj.channels[name];
    for (const auto& p : pts) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number())
        throw ParseError("channel '" + name + "' has a malformed point");
      series.push_back({p[0].get<int>(), p[1].get<double>()});
    }
  }
  return traj;
}

nlohmann::json record_to_json(const RunRecord& record, const ConfigSpace& space,
                              const DatasetGroup* group) {
  nlohmann::json out = record.extra.is_object() ? record.extra : nlohmann::json::object();
  out["dataset_id"] = record.dataset_id;
  out["config"] = space.config_to_json(record.config);
  out["final_score"] = record.final_score;
  if (record.trajectory) {
    out["trajectory"] = trajectory_to_json(*record.trajectory);
    out["truncation_fraction"] = record.trajectory->truncation_fraction;
    if (record.trajectory->horizon > 0) out["horizon"] = record.trajectory->horizon;
  }
  if (!record.tags.empty()) out["tags"] = record.tags;
  if (group && !group->meta_features.empty())
    out["meta_features"] = {{"names", group->meta_names}, {"values", group->meta_features}};
  return out;
}

std::vector<DatasetGroup> parse_corpus(std::istream& in, const ConfigSpace& space) {
  std::vector<DatasetGroup> groups;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<bool> has_meta;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      if (!doc.is_object()) throw ParseError("record is not a JSON object");
      if (!doc.contains("dataset_id") || !doc["dataset_id"].is_string())
        throw ParseError("missing string 'dataset_id'");
      if (!doc.contains("config")) throw ParseError("missing 'config'");
      if (!doc.contains("final_score") || !doc["final_score"].is_number())
        throw ParseError("missing numeric 'final_score'");

      RunRecord rec;
      rec.dataset_id = doc["dataset_id"].get<std::string>();
      rec.config = space.config_from_json(doc["config"]);
      rec.final_score = doc["final_score"].get<double>();
      if (!std::isfinite(rec.final_score) || rec.final_score < 0.0 || rec.final_score > 1.0)
        throw ParseError("final_score must be a finite value in [0, 1]");
      if (doc.contains("trajectory") && !doc["trajectory"].is_null()) {
        const double frac = doc.value("truncation_fraction", 1.0);
        const int horizon = doc.value("horizon", 0);
        rec.trajectory = trajectory_from_json(doc["trajectory"], frac, horizon);
        rec.trajectory->validate();
      }
      if (doc.contains("tags")) {
        if (!doc["tags"].is_object()) throw ParseError("'tags' must be an object");
        rec.tags = doc["tags"];
      }
      for (const auto& [key, value] : doc.items())
        if (!known_key(key)) rec.extra[key] = value;

      auto [it, inserted] = index.emplace(rec.dataset_id, groups.size());
      if (inserted) {
        groups.push_back(DatasetGroup{rec.dataset_id, {}, {}, {}});
        has_meta.push_back(false);
      }
      auto& group = groups[it->second];
      if (doc.contains("meta_features")) {
        const auto& meta = doc["meta_features"];
        auto names = meta.at("names").get<std::vector<std::string>>();
        auto values = meta.at("values").get<std::vector<double>>();
        if (names.size() != values.size()) throw ParseError("meta_features names/values differ in length");
        if (!has_meta[it->second]) {
          group.meta_names = std::move(names);
          group.meta_features = std::move(values);
          has_meta[it->second] = true;
        } else if (names != group.meta_names || values != group.meta_features) {
          throw ParseError("meta_features disagree with earlier records of '" + rec.dataset_id + "'");
        }
      }
      group.records.push_back(std::move(rec));
    } catch (const ParseError& e) {
      if (e.line() != 0) throw;
      throw ParseError(e.what(), line_no);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const Error& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return groups;
}

std::vector<DatasetGroup> load_corpus(const std::filesystem::path& path, const ConfigSpace& space) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open corpus '" + path.string() + "'");
  return parse_corpus(in, space);
}

void save_corpus(const std::filesystem::path& path, const std::vector<DatasetGroup>& groups,
                 const ConfigSpace& space) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write corpus '" + path.string() + "'");
  for (const auto& g : groups)
    for (const auto& r : g.records) out << record_to_json(r, space, &g).dump() << '\n';
  if (!out) throw Error("failed writing corpus '" + path.string() + "'");
}

}  // namespace pipetune
