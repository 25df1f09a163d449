#include "pipetune/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "pipetune/error.hpp"
#include "pipetune/rng.hpp"

namespace pipetune {

namespace {

constexpr std::uint64_t kWarmStartTag = 0x3a11;
constexpr std::uint64_t kRandomPickTag = 0x7a2d;
constexpr std::uint64_t kHyperTag = 0x4e7f;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

// k distinct pool indices drawn uniformly (partial Fisher-Yates).
std::vector<std::size_t> random_picks(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace

double Schedules::w(int t, int steps) const {
  if (steps <= 1) return w_start;
  return w_start + (w_end - w_start) * static_cast<double>(t) / static_cast<double>(steps - 1);
}

double Schedules::beta(int t, int steps) const {
  if (steps <= 1) return beta_start;
  return beta_start * std::pow(beta_end / beta_start, static_cast<double>(t) / static_cast<double>(steps - 1));
}

void Schedules::validate() const {
  if (!(w_start >= 0.0 && w_start <= 1.0 && w_end >= 0.0 && w_end <= w_start))
    throw InvalidArgument("w schedule must satisfy 0 <= w_end <= w_start <= 1");
  if (!(beta_end > 0.0 && beta_end <= beta_start && std::isfinite(beta_start)))
    throw InvalidArgument("beta schedule must satisfy 0 < beta_end <= beta_start");
}

nlohmann::json Schedules::to_json() const {
  return {{"w_start", w_start}, {"w_end", w_end}, {"beta_start", beta_start}, {"beta_end", beta_end}};
}

Schedules Schedules::from_json(const nlohmann::json& doc) {
  Schedules s;
  s.w_start = doc.value("w_start", s.w_start);
  s.w_end = doc.value("w_end", s.w_end);
  s.beta_start = doc.value("beta_start", s.beta_start);
  s.beta_end = doc.value("beta_end", s.beta_end);
  return s;
}

std::string to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::two_phase: return "two_phase";
    case Strategy::no_residual: return "no_residual";
    case Strategy::no_offline: return "no_offline";
    case Strategy::no_bo: return "no_bo";
    case Strategy::random_search: return "random_search";
  }
  return "two_phase";
}

Strategy strategy_from_string(const std::string& text) {
  for (auto s : {Strategy::two_phase, Strategy::no_residual, Strategy::no_offline, Strategy::no_bo,
                 Strategy::random_search})
    if (to_string(s) == text) return s;
  throw InvalidArgument("unknown strategy '" + text + "'");
}

void OptimizerSettings::validate() const {
  if (budget < 1) throw InvalidArgument("budget must be at least 1");
  if (warm_start < 0) throw InvalidArgument("warm start size must be non-negative");
  if (!(truncation > 0.0 && truncation <= 1.0)) throw InvalidArgument("truncation must be in (0, 1]");
  if (refit_every < 1) throw InvalidArgument("refit_every must be at least 1");
  schedules.validate();
}

nlohmann::json OptimizerSettings::to_json() const {
  const auto& h = hyperparameters;
  return {{"strategy", to_string(strategy)},
          {"budget", budget},
          {"warm_start", warm_start},
          {"truncation", truncation},
          {"schedules", schedules.to_json()},
          {"hyperparameters",
           {{"restarts", h.restarts},
            {"min_lengthscale", h.min_lengthscale},
            {"max_lengthscale", h.max_lengthscale},
            {"min_signal_variance", h.min_signal_variance},
            {"max_signal_variance", h.max_signal_variance},
            {"initial_step", h.initial_step},
            {"min_step", h.min_step},
            {"max_evaluations", h.max_evaluations}}},
          {"refit_every", refit_every},
          {"seed", seed}};
}

OptimizerSettings OptimizerSettings::from_json(const nlohmann::json& doc) {
  OptimizerSettings s;
  s.strategy = strategy_from_string(doc.value("strategy", to_string(s.strategy)));
  s.budget = doc.value("budget", s.budget);
  s.warm_start = doc.value("warm_start", s.warm_start);
  s.truncation = doc.value("truncation", s.truncation);
  if (doc.contains("schedules")) s.schedules = Schedules::from_json(doc["schedules"]);
  if (doc.contains("hyperparameters")) {
    const auto& j = doc["hyperparameters"];
    auto& h = s.hyperparameters;
    h.restarts = j.value("restarts", h.restarts);
    h.min_lengthscale = j.value("min_lengthscale", h.min_lengthscale);
    h.max_lengthscale = j.value("max_lengthscale", h.max_lengthscale);
    h.min_signal_variance = j.value("min_signal_variance", h.min_signal_variance);
    h.max_signal_variance = j.value("max_signal_variance", h.max_signal_variance);
    h.initial_step = j.value("initial_step", h.initial_step);
    h.min_step = j.value("min_step", h.min_step);
    h.max_evaluations = j.value("max_evaluations", h.max_evaluations);
  }
  s.refit_every = doc.value("refit_every", s.refit_every);
  s.seed = doc.value("seed", s.seed);
  return s;
}

RowMatrix gp_inputs(const std::vector<Configuration>& pool, const ConfigSpace& space) {
  const auto width = static_cast<Eigen::Index>(space.encoded_width());
  RowMatrix X(static_cast<Eigen::Index>(pool.size()), width);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto enc = encode(pool[i], space);
    std::copy(enc.begin(), enc.end(), X.row(static_cast<Eigen::Index>(i)).data());
  }
  Eigen::Index col = 0;
  for (const auto& dim : space.dimensions()) {
    if (dim.categorical()) {
      col += static_cast<Eigen::Index>(dim.levels.size());
      continue;
    }
    if (X.rows() > 0) {
      auto c = X.col(col);
      const double mean = c.mean();
      const double sd = std::sqrt((c.array() - mean).square().mean());
      if (sd > 0.0)
        c = (c.array() - mean) / sd;
      else
        c.setZero();
    }
    ++col;
  }
  return X;
}

std::vector<std::size_t> warm_start(const ScoredCandidates& scored, const RowMatrix& features, std::size_t k,
                                    std::uint64_t seed) {
  const std::size_t n = scored.raw.size();
  if (static_cast<std::size_t>(features.rows()) != n) throw InvalidArgument("features do not match the pool");
  k = std::min(k, n);
  if (k == 0) return {};
  const std::size_t decile = std::min(n, std::max(k, (n + 9) / 10));
  const auto top = select_top(scored, decile);

  Rng rng(derive_seed(seed, {kWarmStartTag}));
  std::vector<std::uint64_t> tie_key(top.size());
  for (auto& key : tie_key) key = rng();

  std::vector<std::size_t> picks{top[0]};
  std::vector<bool> taken(top.size(), false);
  taken[0] = true;
  std::vector<double> nearest(top.size(), std::numeric_limits<double>::infinity());
  while (picks.size() < k) {
    const auto last = static_cast<Eigen::Index>(picks.back());
    std::size_t best = top.size();
    for (std::size_t i = 0; i < top.size(); ++i) {
      if (taken[i]) continue;
      const double d = (features.row(static_cast<Eigen::Index>(top[i])) - features.row(last)).squaredNorm();
      nearest[i] = std::min(nearest[i], d);
      if (best == top.size() || nearest[i] > nearest[best] ||
          (nearest[i] == nearest[best] && tie_key[i] > tie_key[best]))
        best = i;
    }
    taken[best] = true;
    picks.push_back(top[best]);
  }
  return picks;
}

double update_offset(std::span<const double> delta, std::span<const double> variance) {
  if (delta.size() != variance.size()) throw InvalidArgument("offset inputs differ in length");
  if (delta.empty()) return 0.0;
  double v_min = std::numeric_limits<double>::infinity();
  for (double v : variance) {
    if (!(v > 0.0)) throw InvalidArgument("observation variance must be positive");
    v_min = std::min(v_min, v);
  }
  // Weights relative to the most precise observation, so one observation or
  // equal variances reduce to the plain mean without rounding.
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double w = v_min / variance[i];
    num += w * delta[i];
    den += w;
  }
  return num / den;
}

nlohmann::json TraceEntry::to_json(const ConfigSpace& space) const {
  nlohmann::json out = {{"t", t},
                        {"phase", phase},
                        {"candidate", space.config_to_json(candidate)},
                        {"alpha_top5", alpha_top5},
                        {"w", w ? nlohmann::json(*w) : nlohmann::json()},
                        {"beta", beta ? nlohmann::json(*beta) : nlohmann::json()},
                        {"b", b},
                        {"r_hat", failed ? nlohmann::json() : nlohmann::json(r_hat)},
                        {"v", failed ? nlohmann::json() : nlohmann::json(v)},
                        {"failed", failed},
                        {"wall_clock", wall_clock}};
  if (!kernel.is_null()) out["kernel"] = kernel;
  return out;
}

nlohmann::json SelectionResult::to_json(const ConfigSpace& space) const {
  return {{"chosen", space.config_to_json(chosen)},
          {"proxy_score", proxy_score},
          {"s_z", s_z},
          {"evaluations_used", evaluations_used},
          {"failed_evaluations", failed_evaluations}};
}

OnlineLoop::OnlineLoop(const ConfigSpace& space, ScoredCandidates pool, const ResidualPredictor& predictor,
                       FeatureVector target_meta, OptimizerSettings settings)
    : space_(space),
      pool_(std::move(pool)),
      predictor_(predictor),
      meta_(std::move(target_meta)),
      settings_(std::move(settings)),
      gp_(MaternKernel(1.0, std::vector<double>(space.encoded_width(), 1.0))) {
  settings_.validate();
  const std::size_t n = pool_.configs.size();
  if (n == 0) throw InvalidArgument("candidate pool is empty");
  if (pool_.z.size() != n || pool_.raw.size() != n) throw InvalidArgument("pool scores do not match its configs");
  if ((predictor_.target == TargetKind::absolute) != absolute_targets(settings_.strategy))
    throw InvalidArgument("strategy " + to_string(settings_.strategy) + " needs a predictor with " +
                          (absolute_targets(settings_.strategy) ? "absolute" : "residual") + " targets");
  if (settings_.truncation < predictor_.windows.prefix_fraction)
    throw InvalidArgument("truncation " + std::to_string(settings_.truncation) +
                          " is shorter than the predictor's prefix " +
                          std::to_string(predictor_.windows.prefix_fraction));

  features_ = gp_inputs(pool_.configs, space_);
  evaluated_.assign(n, false);
  const auto budget = static_cast<std::size_t>(settings_.budget);
  const auto warm = std::min(static_cast<std::size_t>(settings_.warm_start), budget);
  switch (settings_.strategy) {
    case Strategy::two_phase:
    case Strategy::no_residual:
      scripted_ = warm_start(pool_, features_, warm, settings_.seed);
      break;
    case Strategy::no_offline:
      scripted_ = random_picks(n, warm, derive_seed(settings_.seed, {kRandomPickTag}));
      break;
    case Strategy::no_bo:
      scripted_ = select_top(pool_, budget);
      break;
    case Strategy::random_search:
      scripted_ = random_picks(n, budget, derive_seed(settings_.seed, {kRandomPickTag}));
      break;
  }
  if (uses_gp()) acquisition_steps_ = settings_.budget - static_cast<int>(scripted_.size());
  gp_.fit(RowMatrix(0, features_.cols()), {}, {});
  started_ = now_seconds();
}

bool OnlineLoop::uses_gp() const {
  return settings_.strategy == Strategy::two_phase || settings_.strategy == Strategy::no_residual ||
         settings_.strategy == Strategy::no_offline;
}

double OnlineLoop::anchor_weight(int acq_t) const {
  return settings_.strategy == Strategy::two_phase ? settings_.schedules.w(acq_t, acquisition_steps_) : 0.0;
}

void OnlineLoop::refit_gp(bool hyperparameters, nlohmann::json* kernel_log) {
  std::vector<const Observation*> ok;
  for (const auto& o : observations_)
    if (!o.pseudo.failed) ok.push_back(&o);
  RowMatrix X(static_cast<Eigen::Index>(ok.size()), features_.cols());
  std::vector<double> t(ok.size()), v(ok.size());
  for (std::size_t i = 0; i < ok.size(); ++i) {
    X.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(ok[i]->candidate));
    t[i] = ok[i]->delta - offset_;
    v[i] = ok[i]->pseudo.variance;
  }
  MaternKernel kernel = gp_.kernel();
  if (hyperparameters && !ok.empty()) {
    const auto fit = fit_hyperparameters(X, t, v, kernel, settings_.hyperparameters,
                                         derive_seed(settings_.seed, {kHyperTag, static_cast<std::uint64_t>(evaluations_)}));
    kernel = fit.kernel;
    if (kernel_log) {
      *kernel_log = kernel.to_json();
      (*kernel_log)["log_marginal_likelihood"] = fit.log_marginal_likelihood;
    }
  }
  gp_ = GaussianProcess(kernel);
  gp_.fit(std::move(X), std::move(t), std::move(v));
}

std::size_t OnlineLoop::acquire() {
  last_alpha_.clear();
  last_w_.reset();
  last_beta_.reset();
  last_kernel_ = nullptr;
  if (done()) throw InvalidArgument("budget exhausted");
  if (evaluations_ < scripted_.size()) return scripted_[evaluations_];
  if (!uses_gp()) throw InvalidArgument("candidate pool exhausted");

  const int t = acquisitions_done_;
  if (t % settings_.refit_every == 0) refit_gp(true, &last_kernel_);
  const double w = anchor_weight(t);
  const double beta = settings_.schedules.beta(t, acquisition_steps_);
  const Posterior post = gp_.posterior(features_);

  std::size_t best = evaluated_.size();
  double best_alpha = 0.0;
  std::vector<double> alphas;
  for (std::size_t i = 0; i < evaluated_.size(); ++i) {
    if (evaluated_[i]) continue;
    const double a = tempered_score(pool_.z[i], offset_, post.mean[i], w) + beta * post.stddev[i];
    alphas.push_back(a);
    if (best == evaluated_.size() || a > best_alpha ||
        (a == best_alpha && (pool_.z[i] > pool_.z[best] ||
                             (pool_.z[i] == pool_.z[best] && pool_.configs[i] < pool_.configs[best])))) {
      best = i;
      best_alpha = a;
    }
  }
  if (best == evaluated_.size()) throw InvalidArgument("candidate pool exhausted");
  const std::size_t top = std::min<std::size_t>(5, alphas.size());
  std::partial_sort(alphas.begin(), alphas.begin() + static_cast<std::ptrdiff_t>(top), alphas.end(),
                    std::greater<>());
  alphas.resize(top);
  last_alpha_ = std::move(alphas);
  last_w_ = settings_.strategy == Strategy::two_phase ? std::optional<double>(w) : std::nullopt;
  last_beta_ = beta;
  return best;
}

void OnlineLoop::step(Evaluator& evaluator) {
  const bool scripted = evaluations_ < scripted_.size();
  const std::size_t idx = acquire();
  const Configuration& config = pool_.configs[idx];

  Observation obs;
  obs.candidate = idx;
  obs.s_z = pool_.z[idx];
  obs.pseudo.config = config;
  try {
    const auto traj = evaluator.run_early(config, settings_.truncation);
    obs.pseudo = predictor_.predict(config, meta_, traj, space_);
  } catch (const EvaluationError&) {
    obs.pseudo.failed = true;
  } catch (const InvalidArgument&) {
    // A trajectory too short for the predictor's prefix window.
    obs.pseudo.failed = true;
  }
  if (!obs.pseudo.failed) {
    const bool absolute = absolute_targets(settings_.strategy);
    obs.proxy = absolute ? obs.pseudo.r_hat : reconstruct(obs.s_z, obs.pseudo.r_hat);
    obs.delta = settings_.strategy == Strategy::two_phase ? obs.pseudo.r_hat : obs.proxy;
  } else {
    ++failures_;
  }
  evaluated_[idx] = true;
  observations_.push_back(obs);
  ++evaluations_;
  if (!scripted) ++acquisitions_done_;

  std::vector<double> d, v;
  for (const auto& o : observations_)
    if (!o.pseudo.failed) {
      d.push_back(o.delta);
      v.push_back(o.pseudo.variance);
    }
  if (uses_gp()) {
    offset_ = update_offset(d, v);
    refit_gp(false, nullptr);
  }

  TraceEntry e;
  e.t = static_cast<int>(evaluations_) - 1;
  e.phase = scripted ? (uses_gp() ? "warm_start" : "fixed") : "acquire";
  e.candidate = config;
  e.alpha_top5 = last_alpha_;
  e.w = last_w_;
  e.beta = last_beta_;
  e.b = offset_;
  e.r_hat = obs.pseudo.r_hat;
  e.v = obs.pseudo.variance;
  e.failed = obs.pseudo.failed;
  e.wall_clock = now_seconds() - started_;
  e.kernel = last_kernel_;
  trace_.push_back(std::move(e));
}

void OnlineLoop::run(Evaluator& evaluator) {
  while (!done()) step(evaluator);
}

SelectionResult OnlineLoop::finalize() const {
  const Observation* best = nullptr;
  for (const auto& o : observations_) {
    if (o.pseudo.failed) continue;
    if (!best || o.proxy > best->proxy ||
        (o.proxy == best->proxy &&
         (o.s_z > best->s_z || (o.s_z == best->s_z && o.pseudo.config < best->pseudo.config))))
      best = &o;
  }
  if (!best) throw EvaluationError("every evaluation failed; nothing to select");
  SelectionResult out;
  out.chosen = best->pseudo.config;
  out.proxy_score = best->proxy;
  out.s_z = best->s_z;
  out.evaluations_used = evaluations_;
  out.failed_evaluations = failures_;
  out.trace = trace_;
  return out;
}

std::vector<double> OnlineLoop::belief() const {
  if (uses_gp()) {
    const Posterior post = gp_.posterior(features_);
    const double w = anchor_weight(std::max(0, acquisition_steps_ - 1));
    std::vector<double> out(post.mean.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = tempered_score(pool_.z[i], offset_, post.mean[i], w);
    return out;
  }
  if (settings_.strategy == Strategy::no_bo) return pool_.z;
  return {};
}

}  // namespace pipetune
