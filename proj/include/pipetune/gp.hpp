#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "pipetune/matrix.hpp"

namespace pipetune {

// sigma_f^2 (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r), r the lengthscale-scaled distance.
class MaternKernel {
 public:
  MaternKernel(double signal_variance, std::vector<double> lengthscales);

  double signal_variance() const { return signal_variance_; }
  const std::vector<double>& lengthscales() const { return lengthscales_; }
  std::size_t dims() const { return lengthscales_.size(); }

  double operator()(std::span<const double> a, std::span<const double> b) const;
  double eval(const double* a, const double* b) const;

  // Gram matrix between the rows of A and the rows of B.
  RowMatrix cross(const RowMatrix& A, const RowMatrix& B) const;

  nlohmann::json to_json() const;

 private:
  double signal_variance_;
  std::vector<double> lengthscales_;
  std::vector<double> inv_lengthscales_;
};

// The unit-variance Matérn-5/2 profile as a function of scaled distance.
double matern52(double r);

struct Posterior {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// Zero-mean GP with per-observation noise variances.
class GaussianProcess {
 public:
  static constexpr double kFirstJitter = 1e-10;
  static constexpr double kMaxJitter = 1e-4;

  explicit GaussianProcess(MaternKernel kernel) : kernel_(std::move(kernel)) {}

  // Factorizes K + diag(noise); zero rows yields the prior.
  void fit(RowMatrix X, std::vector<double> targets, std::vector<double> noise);
  // Replaces targets while keeping inputs, noise and the factorization.
  void set_targets(std::vector<double> targets);

  bool fitted() const { return fitted_; }
  std::size_t size() const { return targets_.size(); }
  const MaternKernel& kernel() const { return kernel_; }
  const RowMatrix& inputs() const { return X_; }
  const std::vector<double>& targets() const { return targets_; }
  const std::vector<double>& noise() const { return noise_; }
  double jitter() const { return jitter_; }
  // (K + diag(noise))^{-1} t
  const Eigen::VectorXd& weights() const { return alpha_; }

  Posterior posterior(const RowMatrix& Xq) const;
  double log_marginal_likelihood() const;

 private:
  void check_fitted() const;

  MaternKernel kernel_;
  RowMatrix X_;
  std::vector<double> targets_;
  std::vector<double> noise_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double jitter_ = 0.0;
  bool fitted_ = false;
};

struct HyperparameterSearch {
  int restarts = 8;
  double min_lengthscale = 1e-2;
  double max_lengthscale = 1e2;
  double min_signal_variance = 1e-3;
  double max_signal_variance = 10.0;
  // Coordinate steps in log space start here and halve down to min_step.
  double initial_step = 1.0;
  double min_step = 1.0 / 32;
  int max_evaluations = 400;
};

struct HyperparameterFit {
  MaternKernel kernel;
  double log_marginal_likelihood;
  int evaluations;
};

// Maximizes the log marginal likelihood over (sigma_f^2, lengthscales) by
// multi-start coordinate search in log space. The first start is `initial`
// (clipped to the bounds); the rest are drawn uniformly in log space.
HyperparameterFit fit_hyperparameters(const RowMatrix& X, std::span<const double> targets,
                                      std::span<const double> noise, const MaternKernel& initial,
                                      const HyperparameterSearch& search, std::uint64_t seed);

}  // namespace pipetune
