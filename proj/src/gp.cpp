#include "pipetune/gp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pipetune/error.hpp"
#include "pipetune/rng.hpp"

namespace pipetune {

namespace {

constexpr double kSqrt5 = 2.23606797749978969640917366873128;

}  // namespace

double matern52(double r) {
  const double s = kSqrt5 * r;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

MaternKernel::MaternKernel(double signal_variance, std::vector<double> lengthscales)
    : signal_variance_(signal_variance), lengthscales_(std::move(lengthscales)) {
  if (!(signal_variance_ > 0.0) || !std::isfinite(signal_variance_))
    throw InvalidArgument("signal variance must be positive");
  if (lengthscales_.empty()) throw InvalidArgument("kernel needs at least one lengthscale");
  inv_lengthscales_.reserve(lengthscales_.size());
  for (double l : lengthscales_) {
    if (!(l > 0.0) || !std::isfinite(l)) throw InvalidArgument("lengthscales must be positive");
    inv_lengthscales_.push_back(1.0 / l);
  }
}

double MaternKernel::eval(const double* a, const double* b) const {
  double r2 = 0.0;
  for (std::size_t j = 0; j < inv_lengthscales_.size(); ++j) {
    const double d = (a[j] - b[j]) * inv_lengthscales_[j];
    r2 += d * d;
  }
  return signal_variance_ * matern52(std::sqrt(r2));
}

double MaternKernel::operator()(std::span<const double> a, std::span<const double> b) const {
  if (a.size() != dims() || b.size() != dims()) throw InvalidArgument("input dimension does not match lengthscales");
  return eval(a.data(), b.data());
}

RowMatrix MaternKernel::cross(const RowMatrix& A, const RowMatrix& B) const {
  if ((A.rows() && static_cast<std::size_t>(A.cols()) != dims()) ||
      (B.rows() && static_cast<std::size_t>(B.cols()) != dims()))
    throw InvalidArgument("input dimension does not match lengthscales");
  RowMatrix K(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.rows(); ++j) K(i, j) = eval(A.row(i).data(), B.row(j).data());
  return K;
}

nlohmann::json MaternKernel::to_json() const {
  return {{"signal_variance", signal_variance_}, {"lengthscales", lengthscales_}};
}

void GaussianProcess::fit(RowMatrix X, std::vector<double> targets, std::vector<double> noise) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (targets.size() != n || noise.size() != n) throw InvalidArgument("inputs, targets and noise differ in length");
  if (n > 0 && static_cast<std::size_t>(X.cols()) != kernel_.dims())
    throw InvalidArgument("input dimension does not match lengthscales");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(targets[i]) || !(noise[i] >= 0.0)) throw InvalidArgument("targets must be finite, noise >= 0");
  X_ = std::move(X);
  targets_ = std::move(targets);
  noise_ = std::move(noise);
  fitted_ = false;

  Eigen::MatrixXd K = kernel_.cross(X_, X_);
  for (std::size_t i = 0; i < n; ++i) K(i, i) += noise_[i];
  const double scale = n ? K.diagonal().maxCoeff() : 1.0;
  const double pivot_floor = 1e-15 * static_cast<double>(std::max<std::size_t>(n, 1)) * scale;
  for (double jitter = 0.0;; jitter = jitter == 0.0 ? kFirstJitter : jitter * 10.0) {
    if (jitter > kMaxJitter * 1.0000001) throw SingularKernel("kernel matrix is singular even with maximal jitter");
    Eigen::MatrixXd Kj = K;
    Kj.diagonal().array() += jitter;
    llt_.compute(Kj);
    if (llt_.info() != Eigen::Success) continue;
    const Eigen::VectorXd diag = llt_.matrixLLT().diagonal();
    if (n && (diag.array() * diag.array()).minCoeff() <= pivot_floor) continue;
    jitter_ = jitter;
    break;
  }
  alpha_ = n ? llt_.solve(Eigen::Map<const Eigen::VectorXd>(targets_.data(), n)) : Eigen::VectorXd();
  fitted_ = true;
}

void GaussianProcess::set_targets(std::vector<double> targets) {
  check_fitted();
  if (targets.size() != targets_.size()) throw InvalidArgument("target count changed");
  targets_ = std::move(targets);
  if (!targets_.empty()) alpha_ = llt_.solve(Eigen::Map<const Eigen::VectorXd>(targets_.data(), targets_.size()));
}

void GaussianProcess::check_fitted() const {
  if (!fitted_) throw InvalidArgument("gaussian process has not been fitted");
}

Posterior GaussianProcess::posterior(const RowMatrix& Xq) const {
  check_fitted();
  const auto m = static_cast<std::size_t>(Xq.rows());
  if (m && static_cast<std::size_t>(Xq.cols()) != kernel_.dims())
    throw InvalidArgument("query dimension does not match lengthscales");
  const double prior = kernel_.signal_variance();
  Posterior out{std::vector<double>(m, 0.0), std::vector<double>(m, std::sqrt(prior))};
  if (targets_.empty() || m == 0) return out;

  const auto& L = llt_.matrixL();
  constexpr Eigen::Index kBlock = 4096;
  for (Eigen::Index start = 0; start < Xq.rows(); start += kBlock) {
    const Eigen::Index rows = std::min(kBlock, Xq.rows() - start);
    // n x rows cross-covariance, solved in place against L.
    Eigen::MatrixXd K = kernel_.cross(X_, Xq.middleRows(start, rows));
    const Eigen::VectorXd mean = K.transpose() * alpha_;
    L.solveInPlace(K);
    const Eigen::VectorXd reduction = K.colwise().squaredNorm().transpose();
    for (Eigen::Index q = 0; q < rows; ++q) {
      out.mean[static_cast<std::size_t>(start + q)] = mean(q);
      out.stddev[static_cast<std::size_t>(start + q)] = std::sqrt(std::max(0.0, prior - reduction(q)));
    }
  }
  return out;
}

double GaussianProcess::log_marginal_likelihood() const {
  check_fitted();
  const std::size_t n = targets_.size();
  if (n == 0) return 0.0;
  const Eigen::Map<const Eigen::VectorXd> t(targets_.data(), n);
  const double log_det_half = llt_.matrixLLT().diagonal().array().log().sum();
  return -0.5 * t.dot(alpha_) - log_det_half - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

namespace {

// theta = [log sigma_f^2, log l_1, ..., log l_D]
MaternKernel kernel_from(const std::vector<double>& theta) {
  std::vector<double> ls(theta.size() - 1);
  for (std::size_t j = 1; j < theta.size(); ++j) ls[j - 1] = std::exp(theta[j]);
  return MaternKernel(std::exp(theta[0]), std::move(ls));
}

}  // namespace

HyperparameterFit fit_hyperparameters(const RowMatrix& X, std::span<const double> targets,
                                      std::span<const double> noise, const MaternKernel& initial,
                                      const HyperparameterSearch& search, std::uint64_t seed) {
  if (search.restarts < 1) throw InvalidArgument("hyperparameter search needs at least one restart");
  const std::size_t D = initial.dims();
  std::vector<double> lo(D + 1), hi(D + 1);
  lo[0] = std::log(search.min_signal_variance);
  hi[0] = std::log(search.max_signal_variance);
  for (std::size_t j = 1; j <= D; ++j) {
    lo[j] = std::log(search.min_lengthscale);
    hi[j] = std::log(search.max_lengthscale);
  }
  const std::vector<double> t(targets.begin(), targets.end());
  const std::vector<double> v(noise.begin(), noise.end());

  int evaluations = 0;
  auto objective = [&](const std::vector<double>& theta) {
    ++evaluations;
    GaussianProcess gp(kernel_from(theta));
    try {
      gp.fit(X, t, v);
    } catch (const SingularKernel&) {
      return -std::numeric_limits<double>::infinity();
    }
    return gp.log_marginal_likelihood();
  };

  Rng rng(seed);
  std::vector<double> best_theta;
  double best = -std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < search.restarts; ++restart) {
    std::vector<double> theta(D + 1);
    if (restart == 0) {
      theta[0] = std::log(initial.signal_variance());
      for (std::size_t j = 0; j < D; ++j) theta[j + 1] = std::log(initial.lengthscales()[j]);
    } else {
      for (std::size_t j = 0; j <= D; ++j) theta[j] = std::uniform_real_distribution<double>(lo[j], hi[j])(rng);
    }
    for (std::size_t j = 0; j <= D; ++j) theta[j] = std::clamp(theta[j], lo[j], hi[j]);

    double value = objective(theta);
    double step = search.initial_step;
    const int budget_end = evaluations + search.max_evaluations;
    while (step >= search.min_step && evaluations < budget_end) {
      bool improved = false;
      for (std::size_t j = 0; j <= D && evaluations < budget_end; ++j) {
        for (double dir : {1.0, -1.0}) {
          std::vector<double> trial = theta;
          trial[j] = std::clamp(theta[j] + dir * step, lo[j], hi[j]);
          if (trial[j] == theta[j]) continue;
          const double tv = objective(trial);
          if (tv > value) {
            theta = std::move(trial);
            value = tv;
            improved = true;
            break;
          }
        }
      }
      if (!improved) step *= 0.5;
    }
    if (value > best) {
      best = value;
      best_theta = theta;
    }
  }
  if (best_theta.empty()) throw SingularKernel("no hyperparameter setting admits a factorization");
  return {kernel_from(best_theta), best, evaluations};
}

}  // namespace pipetune
