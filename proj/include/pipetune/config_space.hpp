#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace pipetune {

// A level is either a categorical label or a numeric value.
using Level = std::variant<std::string, double>;

struct Dimension {
  std::string name;
  std::vector<Level> levels;

  bool categorical() const;
};

// One point of a ConfigSpace: a level index per dimension.
class Configuration {
 public:
  Configuration() = default;
  explicit Configuration(std::vector<std::uint16_t> indices) : indices_(std::move(indices)) {}

  const std::vector<std::uint16_t>& indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }
  std::uint16_t operator[](std::size_t dim) const { return indices_[dim]; }

  // Lexicographic order of level indices, which is also enumeration order.
  auto operator<=>(const Configuration&) const = default;
  bool operator==(const Configuration&) const = default;

  std::size_t hash() const;

 private:
  std::vector<std::uint16_t> indices_;
};

class ConfigSpace {
 public:
  explicit ConfigSpace(std::vector<Dimension> dimensions);

  // Base model plus SFT and RL hyperparameters used throughout the project.
  static ConfigSpace default_space();

  const std::vector<Dimension>& dimensions() const { return dims_; }
  std::size_t dimension_count() const { return dims_.size(); }
  std::size_t dimension_index(const std::string& name) const;

  // Number of points in the Cartesian product.
  std::uint64_t size() const { return size_; }

  // Length of encode() output and the matching feature names.
  std::size_t encoded_width() const { return encoded_width_; }
  const std::vector<std::string>& encoded_names() const { return encoded_names_; }

  // Flat index <-> configuration, last dimension varying fastest.
  Configuration at(std::uint64_t flat_index) const;
  std::uint64_t flat_index(const Configuration& config) const;

  void validate(const Configuration& config) const;
  bool contains(const Configuration& config) const;

  nlohmann::json to_json() const;
  static ConfigSpace from_json(const nlohmann::json& doc);

  // Flat name -> value object.
  nlohmann::json config_to_json(const Configuration& config) const;
  Configuration config_from_json(const nlohmann::json& doc) const;

  bool operator==(const ConfigSpace& other) const;

 private:
  std::vector<Dimension> dims_;
  std::uint64_t size_ = 1;
  std::size_t encoded_width_ = 0;
  std::vector<std::string> encoded_names_;
};

std::vector<Configuration> enumerate(const ConfigSpace& space);

// Categorical dimensions become one-hot blocks; numeric levels are emitted raw.
std::vector<double> encode(const Configuration& config, const ConfigSpace& space);

struct BalanceReport {
  // False when n is not a multiple of some dimension's level count.
  bool exact = true;
  std::size_t reseeds = 0;
};

// n configurations where every level of every dimension appears n / levels
// times (within one when not divisible). Deterministic for a given seed.
std::vector<Configuration> sample_balanced(const ConfigSpace& space, std::size_t n,
                                           std::uint64_t seed,
                                           BalanceReport* report = nullptr);

}  // namespace pipetune

template <>
struct std::hash<pipetune::Configuration> {
  std::size_t operator()(const pipetune::Configuration& c) const noexcept { return c.hash(); }
};
