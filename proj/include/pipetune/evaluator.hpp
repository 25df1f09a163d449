#pragma once

#include "pipetune/config_space.hpp"
#include "pipetune/corpus.hpp"

namespace pipetune {

// Pipeline oracle for one target dataset. Either call may throw
// EvaluationError, which the online loop records as a failed run.
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  // Truncated run covering `truncation` of the SFT horizon.
  virtual EarlyStopTrajectory run_early(const Configuration& config, double truncation) = 0;
  // Full-fidelity end-to-end score.
  virtual double run_full(const Configuration& config) = 0;
};

}  // namespace pipetune
