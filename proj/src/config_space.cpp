#include "pipetune/config_space.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include "pipetune/error.hpp"
#include "pipetune/rng.hpp"

namespace pipetune {

namespace {

bool level_equal(const Level& a, const Level& b) { return a == b; }

std::string level_label(const Level& level) {
  if (const auto* s = std::get_if<std::string>(&level)) return *s;
  nlohmann::json j = std::get<double>(level);
  return j.dump();
}

}  // namespace

bool Dimension::categorical() const {
  return !levels.empty() && std::holds_alternative<std::string>(levels.front());
}

std::size_t Configuration::hash() const {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (auto i : indices_) h = mix64(h ^ i);
  return static_cast<std::size_t>(h);
}

ConfigSpace::ConfigSpace(std::vector<Dimension> dimensions) : dims_(std::move(dimensions)) {
  if (dims_.empty()) throw InvalidArgument("config space needs at least one dimension");
  std::set<std::string> names;
  for (const auto& d : dims_) {
    if (!names.insert(d.name).second) throw InvalidArgument("duplicate dimension '" + d.name + "'");
    if (d.levels.size() < 2)
      throw InvalidArgument("dimension '" + d.name + "' needs at least two levels");
    if (d.levels.size() > std::numeric_limits<std::uint16_t>::max())
      throw InvalidArgument("dimension '" + d.name + "' has too many levels");
    const bool cat = d.categorical();
    for (std::size_t i = 0; i < d.levels.size(); ++i) {
      if (std::holds_alternative<std::string>(d.levels[i]) != cat)
        throw InvalidArgument("dimension '" + d.name + "' mixes labels and numbers");
      if (!cat && !std::isfinite(std::get<double>(d.levels[i])))
        throw InvalidArgument("dimension '" + d.name + "' has a non-finite level");
      for (std::size_t j = 0; j < i; ++j)
        if (level_equal(d.levels[i], d.levels[j]))
          throw InvalidArgument("dimension '" + d.name + "' has duplicate levels");
    }
    if (size_ > std::numeric_limits<std::uint64_t>::max() / d.levels.size())
      throw InvalidArgument("config space too large");
    size_ *= d.levels.size();
    if (cat) {
      for (const auto& l : d.levels) encoded_names_.push_back(d.name + "=" + level_label(l));
      encoded_width_ += d.levels.size();
    } else {
      encoded_names_.push_back(d.name);
      encoded_width_ += 1;
    }
  }
}

ConfigSpace ConfigSpace::default_space() {
  auto num = [](std::initializer_list<double> v) {
    std::vector<Level> out;
    for (double x : v) out.emplace_back(x);
    return out;
  };
  std::vector<Dimension> dims;
  dims.push_back({"base_model",
                  {Level{"Qwen2.5-1.5B-Instruct"}, Level{"Qwen2.5-3B-Instruct"},
                   Level{"Qwen2.5-7B-Instruct"}, Level{"Llama3.2-1B-Instruct"},
                   Level{"Llama3.2-3B-Instruct"}, Level{"Llama3.1-8B-Instruct"}}});
  dims.push_back({"sft_epochs", num({1, 2, 3})});
  dims.push_back({"sft_batch_size", num({32, 64, 128})});
  dims.push_back({"sft_learning_rate", num({1e-5, 2e-5, 5e-5})});
  dims.push_back({"rl_batch_size", num({64, 128, 256})});
  dims.push_back({"rl_learning_rate", num({1e-6, 2e-6, 5e-6, 1e-5})});
  dims.push_back({"rl_beta", num({0.0, 0.05, 0.1})});
  dims.push_back({"rl_rollouts", num({8, 16})});
  dims.push_back({"rl_temperature", num({0.7, 0.9, 1.1})});
  return ConfigSpace(std::move(dims));
}

std::size_t ConfigSpace::dimension_index(const std::string& name) const {
  for (std::size_t i = 0; i < dims_.size(); ++i)
    if (dims_[i].name == name) return i;
  throw NotFound("unknown dimension '" + name + "'");
}

Configuration ConfigSpace::at(std::uint64_t flat_index) const {
  if (flat_index >= size_) throw InvalidArgument("flat index out of range");
  std::vector<std::uint16_t> idx(dims_.size());
  for (std::size_t d = dims_.size(); d-- > 0;) {
    const auto n = dims_[d].levels.size();
    idx[d] = static_cast<std::uint16_t>(flat_index % n);
    flat_index /= n;
  }
  return Configuration(std::move(idx));
}

std::uint64_t ConfigSpace::flat_index(const Configuration& config) const {
  validate(config);
  std::uint64_t flat = 0;
  for (std::size_t d = 0; d < dims_.size(); ++d) flat = flat * dims_[d].levels.size() + config[d];
  return flat;
}

bool ConfigSpace::contains(const Configuration& config) const {
  if (config.size() != dims_.size()) return false;
  for (std::size_t d = 0; d < dims_.size(); ++d)
    if (config[d] >= dims_[d].levels.size()) return false;
  return true;
}

void ConfigSpace::validate(const Configuration& config) const {
  if (config.size() != dims_.size())
    throw InvalidConfiguration("configuration has " + std::to_string(config.size()) +
                               " dimensions, space has " + std::to_string(dims_.size()));
  for (std::size_t d = 0; d < dims_.size(); ++d)
    if (config[d] >= dims_[d].levels.size())
      throw InvalidConfiguration("level index out of range for '" + dims_[d].name + "'");
}

nlohmann::json ConfigSpace::to_json() const {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : dims_) {
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& l : d.levels) {
      if (const auto* s = std::get_if<std::string>(&l))
        levels.push_back(*s);
      else
        levels.push_back(std::get<double>(l));
    }
    dims.push_back({{"name", d.name}, {"levels", levels}});
  }
  return {{"dimensions", dims}};
}

ConfigSpace ConfigSpace::from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("dimensions") || !doc["dimensions"].is_array())
    throw ParseError("config space document needs a 'dimensions' array");
  std::vector<Dimension> dims;
  for (const auto& jd : doc["dimensions"]) {
    if (!jd.contains("name") || !jd.contains("levels") || !jd["levels"].is_array())
      throw ParseError("dimension entries need 'name' and 'levels'");
    Dimension d;
    d.name = jd["name"].get<std::string>();
    for (const auto& jl : jd["levels"]) {
      if (jl.is_string())
        d.levels.emplace_back(jl.get<std::string>());
      else if (jl.is_number())
        d.levels.emplace_back(jl.get<double>());
      else
        throw ParseError("level of '" + d.name + "' is neither a string nor a number");
    }
    dims.push_back(std::move(d));
  }
  return ConfigSpace(std::move(dims));
}

nlohmann::json ConfigSpace::config_to_json(const Configuration& config) const {
  validate(config);
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t d = 0; d < dims_.size(); ++d) {
    const auto& l = dims_[d].levels[config[d]];
    if (const auto* s = std::get_if<std::string>(&l))
      out[dims_[d].name] = *s;
    else
      out[dims_[d].name] = std::get<double>(l);
  }
  return out;
}

Configuration ConfigSpace::config_from_json(const nlohmann::json& doc) const {
  if (!doc.is_object()) throw InvalidConfiguration("configuration must be a JSON object");
  if (doc.size() != dims_.size())
    throw InvalidConfiguration("configuration has " + std::to_string(doc.size()) +
                               " entries, space has " + std::to_string(dims_.size()));
  std::vector<std::uint16_t> idx(dims_.size());
  for (std::size_t d = 0; d < dims_.size(); ++d) {
    const auto& dim = dims_[d];
    auto it = doc.find(dim.name);
    if (it == doc.end()) throw InvalidConfiguration("configuration lacks '" + dim.name + "'");
    Level value;
    if (it->is_string())
      value = it->get<std::string>();
    else if (it->is_number())
      value = it->get<double>();
    else
      throw InvalidConfiguration("bad value for '" + dim.name + "'");
    auto pos = std::find(dim.levels.begin(), dim.levels.end(), value);
    if (pos == dim.levels.end())
      throw InvalidConfiguration("value " + it->dump() + " is not a level of '" + dim.name + "'");
    idx[d] = static_cast<std::uint16_t>(pos - dim.levels.begin());
  }
  return Configuration(std::move(idx));
}

bool ConfigSpace::operator==(const ConfigSpace& other) const {
  if (dims_.size() != other.dims_.size()) return false;
  for (std::size_t d = 0; d < dims_.size(); ++d)
    if (dims_[d].name != other.dims_[d].name || dims_[d].levels != other.dims_[d].levels)
      return false;
  return true;
}

std::vector<Configuration> enumerate(const ConfigSpace& space) {
  std::vector<Configuration> out;
  out.reserve(space.size());
  for (std::uint64_t i = 0; i < space.size(); ++i) out.push_back(space.at(i));
  return out;
}

std::vector<double> encode(const Configuration& config, const ConfigSpace& space) {
  space.validate(config);
  std::vector<double> out;
  out.reserve(space.encoded_width());
  const auto& dims = space.dimensions();
  for (std::size_t d = 0; d < dims.size(); ++d) {
    if (dims[d].categorical()) {
      for (std::size_t l = 0; l < dims[d].levels.size(); ++l) out.push_back(l == config[d] ? 1.0 : 0.0);
    } else {
      out.push_back(std::get<double>(dims[d].levels[config[d]]));
    }
  }
  return out;
}

namespace {

// Swap single-dimension entries between rows until every row is unique.
// Swaps keep the per-dimension level counts unchanged.
bool repair_duplicates(std::vector<std::vector<std::uint16_t>>& cols, Rng& rng) {
  const std::size_t n = cols.front().size();
  const std::size_t dims = cols.size();
  auto row = [&](std::size_t i) {
    std::vector<std::uint16_t> idx(dims);
    for (std::size_t d = 0; d < dims; ++d) idx[d] = cols[d][i];
    return Configuration(std::move(idx));
  };
  std::unordered_map<Configuration, int> counts;
  for (std::size_t i = 0; i < n; ++i) ++counts[row(i)];

  std::uniform_int_distribution<std::size_t> pick_row(0, n - 1);
  std::uniform_int_distribution<std::size_t> pick_dim(0, dims - 1);
  for (std::size_t i = 0; i < n; ++i) {
    int attempts = 0;
    while (counts[row(i)] > 1) {
      if (++attempts > 2000) return false;
      const std::size_t j = pick_row(rng);
      const std::size_t d = pick_dim(rng);
      if (j == i || cols[d][i] == cols[d][j]) continue;
      const Configuration old_i = row(i), old_j = row(j);
      --counts[old_i];
      --counts[old_j];
      std::swap(cols[d][i], cols[d][j]);
      const Configuration new_i = row(i), new_j = row(j);
      const bool ok = new_i != new_j && counts[new_i] == 0 && counts[new_j] == 0;
      if (ok) {
        ++counts[new_i];
        ++counts[new_j];
      } else {
        std::swap(cols[d][i], cols[d][j]);
        ++counts[old_i];
        ++counts[old_j];
      }
    }
  }
  return true;
}

}  // namespace

std::vector<Configuration> sample_balanced(const ConfigSpace& space, std::size_t n,
                                           std::uint64_t seed, BalanceReport* report) {
  if (n > space.size())
    throw InvalidArgument("cannot draw " + std::to_string(n) + " distinct configurations from a space of " +
                          std::to_string(space.size()));
  BalanceReport rep;
  const auto& dims = space.dimensions();
  for (const auto& d : dims)
    if (n % d.levels.size() != 0) rep.exact = false;

  std::vector<Configuration> out;
  if (n == 0) {
    if (report) *report = rep;
    return out;
  }
  if (n == space.size()) {
    out = enumerate(space);
    Rng rng(derive_seed(seed, {0}));
    std::shuffle(out.begin(), out.end(), rng);
    if (report) *report = rep;
    return out;
  }

  for (std::size_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, {attempt}));
    std::vector<std::vector<std::uint16_t>> cols(dims.size(), std::vector<std::uint16_t>(n));
    for (std::size_t d = 0; d < dims.size(); ++d) {
      const auto levels = dims[d].levels.size();
      for (std::size_t i = 0; i < n; ++i) cols[d][i] = static_cast<std::uint16_t>(i % levels);
      std::shuffle(cols[d].begin(), cols[d].end(), rng);
    }
    if (!repair_duplicates(cols, rng)) {
      if (++rep.reseeds > 1000) throw Error("balanced sampling failed to find distinct rows");
      continue;
    }
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::uint16_t> idx(dims.size());
      for (std::size_t d = 0; d < dims.size(); ++d) idx[d] = cols[d][i];
      out.emplace_back(std::move(idx));
    }
    break;
  }
  if (report) *report = rep;
  return out;
}

}  // namespace pipetune
