#pragma once

#include "pipetune/config_space.hpp"
#include "pipetune/gbt.hpp"
#include "pipetune/simulator.hpp"

namespace fixture {

// 4 x 3 x 5 x 4 = 240 points, one categorical and three numeric dimensions.
inline pipetune::ConfigSpace small_space() {
  using pipetune::Level;
  return pipetune::ConfigSpace({
      {"model", {Level{"a"}, Level{"b"}, Level{"c"}, Level{"d"}}},
      {"epochs", {Level{1.0}, Level{2.0}, Level{3.0}}},
      {"lr", {Level{1e-5}, Level{3e-5}, Level{1e-4}, Level{3e-4}, Level{1e-3}}},
      {"batch", {Level{8.0}, Level{16.0}, Level{32.0}, Level{64.0}}},
  });
}

inline pipetune::SimSpec small_spec(std::uint64_t seed = 1) {
  pipetune::SimSpec s;
  s.space = small_space();
  s.n_datasets = 4;
  s.descriptor_dim = 4;
  s.records_per_dataset = 120;
  s.seed = seed;
  return s;
}

inline pipetune::BoostParams fast_boost() {
  pipetune::BoostParams b;
  b.rounds = 30;
  b.max_depth = 3;
  b.pairs_per_row = 8;
  return b;
}

}  // namespace fixture
