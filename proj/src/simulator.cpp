#include "pipetune/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pipetune/error.hpp"
#include "pipetune/rng.hpp"

namespace pipetune {

namespace {

constexpr std::uint64_t kMaxSimSpace = 200000;
constexpr std::uint64_t kGroundTruthTableLimit = 50000;

enum Tag : std::uint64_t {
  kSharedTag = 1,
  kDescriptorTag,
  kResidualTag,
  kSampleTag,
  kStepNoiseTag,
  kLatentTag,
  kFullEvalTag,
  kCorpusNoiseTag,
  kInterceptTag,
  kNuisanceTag,
};

struct Polynomial {
  std::vector<double> linear;
  std::vector<double> quadratic;
  struct Term {
    std::size_t i, j;
    double coef;
  };
  std::vector<Term> interactions;

  double eval(const double* h) const {
    double v = 0.0;
    for (std::size_t j = 0; j < linear.size(); ++j) v += (linear[j] + quadratic[j] * h[j]) * h[j];
    for (const auto& t : interactions) v += t.coef * h[t.i] * h[t.j];
    return v;
  }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

class SimModel {
 public:
  explicit SimModel(const SimSpec& spec) : spec(spec) {
    const auto& space = spec.space;
    n = space.size();
    // Normalized features: one-hot for labels, level position in [-1, 1] for numbers.
    for (const auto& d : space.dimensions()) {
      if (d.categorical()) {
        for (std::size_t l = 0; l < d.levels.size(); ++l) numeric.push_back(false);
      } else {
        numeric.push_back(true);
      }
    }
    P = numeric.size();
    H = RowMatrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(P));
    for (std::uint64_t f = 0; f < n; ++f) {
      const auto c = space.at(f);
      double* row = H.row(static_cast<Eigen::Index>(f)).data();
      std::size_t col = 0;
      for (std::size_t d = 0; d < space.dimension_count(); ++d) {
        const auto& dim = space.dimensions()[d];
        const auto levels = dim.levels.size();
        if (dim.categorical()) {
          for (std::size_t l = 0; l < levels; ++l) row[col++] = l == c[d] ? 1.0 : 0.0;
        } else {
          row[col++] = 2.0 * c[d] / static_cast<double>(levels - 1) - 1.0;
        }
      }
    }
    Rng rng(derive_seed(spec.seed, {kSharedTag}));
    shared = random_polynomial(rng);
    std::normal_distribution<double> nd;
    modulation.resize(P * static_cast<std::size_t>(spec.descriptor_dim));
    for (auto& g : modulation) g = nd(rng);

    // Nuisance: configuration-dependent curve speed and loss level, unrelated to quality.
    Rng nr(derive_seed(spec.seed, {kNuisanceTag}));
    speed_coef.resize(P);
    level_coef.resize(P);
    for (std::size_t j = 0; j < P; ++j) {
      speed_coef[j] = 0.15 * nd(nr);
      level_coef[j] = 0.03 * nd(nr);
    }
  }

  Polynomial random_polynomial(Rng& rng) const {
    std::normal_distribution<double> nd;
    Polynomial p;
    p.linear.resize(P);
    p.quadratic.assign(P, 0.0);
    for (std::size_t j = 0; j < P; ++j) {
      p.linear[j] = nd(rng);
      if (numeric[j]) p.quadratic[j] = -0.7 * std::abs(nd(rng));
    }
    std::uniform_int_distribution<std::size_t> pick(0, P - 1);
    for (int k = 0; k < spec.interactions; ++k) {
      std::size_t i = pick(rng), j = pick(rng);
      while (j == i) j = pick(rng);
      p.interactions.push_back({std::min(i, j), std::max(i, j), 0.7 * nd(rng)});
    }
    return p;
  }

  // Standardized values of `poly` over the whole space.
  std::vector<double> standardized(const Polynomial& poly) const {
    std::vector<double> v(n);
    double sum = 0.0;
    for (std::uint64_t f = 0; f < n; ++f) {
      v[f] = poly.eval(H.row(static_cast<Eigen::Index>(f)).data());
      sum += v[f];
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    for (double& x : v) x = sd > 0 ? (x - mean) / sd : 0.0;
    return v;
  }

  SimSpec spec;
  std::uint64_t n = 0;
  std::size_t P = 0;
  std::vector<bool> numeric;
  RowMatrix H;
  Polynomial shared;
  std::vector<double> modulation;
  std::vector<double> speed_coef, level_coef;
};

void SimSpec::validate() const {
  if (n_datasets < 1) throw InvalidArgument("simulation needs at least one dataset");
  if (descriptor_dim < 1) throw InvalidArgument("descriptor_dim must be positive");
  if (!(shared_weight >= 0) || !(residual_weight >= 0) || !(shared_weight + residual_weight > 0))
    throw InvalidArgument("shared and residual weights must be >= 0 with a positive sum");
  if (!(noise >= 0)) throw InvalidArgument("noise must be >= 0");
  if (!std::isfinite(base_logit)) throw InvalidArgument("base_logit must be finite");
  if (!(informativeness >= 0 && informativeness <= 1)) throw InvalidArgument("informativeness must be in [0, 1]");
  if (records_per_dataset < 2) throw InvalidArgument("records_per_dataset must be at least 2");
  if (static_cast<std::uint64_t>(records_per_dataset) > space.size())
    throw InvalidArgument("records_per_dataset exceeds the config space size");
  if (horizon < 4) throw InvalidArgument("horizon must be at least 4 steps");
  if (!(descriptor_modulation >= 0) || !(logit_scale > 0) || interactions < 0 || !(trajectory_noise >= 0))
    throw InvalidArgument("invalid response shape parameters");
  if (space.size() > kMaxSimSpace) throw InvalidArgument("simulator supports spaces of at most 200000 points");
}

nlohmann::json SimSpec::to_json() const {
  return {{"space", space.to_json()},
          {"n_datasets", n_datasets},
          {"descriptor_dim", descriptor_dim},
          {"shared_weight", shared_weight},
          {"residual_weight", residual_weight},
          {"noise", noise},
          {"informativeness", informativeness},
          {"seed", seed},
          {"records_per_dataset", records_per_dataset},
          {"horizon", horizon},
          {"descriptor_modulation", descriptor_modulation},
          {"logit_scale", logit_scale},
          {"base_logit", base_logit},
          {"interactions", interactions},
          {"trajectory_noise", trajectory_noise}};
}

SimSpec SimSpec::from_json(const nlohmann::json& doc) {
  SimSpec s;
  if (doc.contains("space")) s.space = ConfigSpace::from_json(doc["space"]);
  s.n_datasets = doc.value("n_datasets", s.n_datasets);
  s.descriptor_dim = doc.value("descriptor_dim", s.descriptor_dim);
  s.shared_weight = doc.value("shared_weight", s.shared_weight);
  s.residual_weight = doc.value("residual_weight", s.residual_weight);
  s.noise = doc.value("noise", s.noise);
  s.informativeness = doc.value("informativeness", s.informativeness);
  s.seed = doc.value("seed", s.seed);
  s.records_per_dataset = doc.value("records_per_dataset", s.records_per_dataset);
  s.horizon = doc.value("horizon", s.horizon);
  s.descriptor_modulation = doc.value("descriptor_modulation", s.descriptor_modulation);
  s.logit_scale = doc.value("logit_scale", s.logit_scale);
  s.base_logit = doc.value("base_logit", s.base_logit);
  s.interactions = doc.value("interactions", s.interactions);
  s.trajectory_noise = doc.value("trajectory_noise", s.trajectory_noise);
  return s;
}

SimDataset::SimDataset(std::shared_ptr<const SimModel> model, int index)
    : model_(std::move(model)), index_(index) {
  const auto& spec = model_->spec;
  id_ = index < spec.n_datasets ? "d" + std::to_string(index) : "heldout";
  const auto tag = static_cast<std::uint64_t>(index);

  Rng drng(derive_seed(spec.seed, {kDescriptorTag, tag}));
  std::normal_distribution<double> nd;
  descriptor_.resize(static_cast<std::size_t>(spec.descriptor_dim));
  for (auto& u : descriptor_) u = nd(drng);

  // Shared response with descriptor-modulated linear coefficients.
  Polynomial shared = model_->shared;
  const double scale = spec.descriptor_modulation / std::sqrt(static_cast<double>(spec.descriptor_dim));
  for (std::size_t j = 0; j < model_->P; ++j) {
    double m = 0.0;
    for (std::size_t l = 0; l < descriptor_.size(); ++l)
      m += model_->modulation[j * descriptor_.size() + l] * descriptor_[l];
    shared.linear[j] += scale * m;
  }
  Rng rrng(derive_seed(spec.seed, {kResidualTag, tag}));
  const Polynomial residual = model_->random_polynomial(rrng);

  const auto gs = model_->standardized(shared);
  const auto gd = model_->standardized(residual);
  Rng irng(derive_seed(spec.seed, {kInterceptTag, tag}));
  const double intercept = spec.base_logit + 0.3 * nd(irng) + 0.2 * descriptor_[0];

  const std::uint64_t n = model_->n;
  table_.resize(n);
  quality_.resize(n);
  std::vector<double> combined(n);
  for (std::uint64_t f = 0; f < n; ++f) combined[f] = spec.shared_weight * gs[f] + spec.residual_weight * gd[f];
  double mean = 0.0, ss = 0.0;
  for (double c : combined) mean += c;
  mean /= static_cast<double>(n);
  for (double c : combined) ss += (c - mean) * (c - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  for (std::uint64_t f = 0; f < n; ++f) {
    table_[f] = std::clamp(sigmoid(intercept + spec.logit_scale * combined[f]), 0.0, 1.0);
    quality_[f] = sd > 0 ? (combined[f] - mean) / sd : 0.0;
    if (table_[f] > table_[optimum_]) optimum_ = f;
  }
}

FeatureVector SimDataset::meta() const {
  FeatureVector out;
  for (std::size_t l = 0; l < descriptor_.size(); ++l) out.push_back("descriptor_" + std::to_string(l), descriptor_[l]);
  const auto [lo, hi] = std::minmax_element(descriptor_.begin(), descriptor_.end());
  double mean = 0.0, ss = 0.0;
  for (double u : descriptor_) mean += u;
  mean /= static_cast<double>(descriptor_.size());
  for (double u : descriptor_) ss += (u - mean) * (u - mean);
  out.push_back("descriptor_mean", mean);
  out.push_back("descriptor_std", std::sqrt(ss / static_cast<double>(descriptor_.size())));
  out.push_back("descriptor_min", *lo);
  out.push_back("descriptor_max", *hi);
  return out;
}

double SimDataset::true_score(const Configuration& config) const {
  return table_[model_->spec.space.flat_index(config)];
}

double SimDataset::evaluate_full(const Configuration& config, std::uint64_t call_index) const {
  const auto f = model_->spec.space.flat_index(config);
  const double sigma = model_->spec.noise;
  if (sigma == 0.0) return table_[f];
  Rng rng(derive_seed(model_->spec.seed, {kFullEvalTag, static_cast<std::uint64_t>(index_), f, call_index}));
  return std::clamp(table_[f] + sigma * std::normal_distribution<double>()(rng), 0.0, 1.0);
}

EarlyStopTrajectory SimDataset::emit_trajectory(const Configuration& config, double truncation) const {
  if (!(truncation > 0.0 && truncation <= 1.0)) throw InvalidArgument("truncation must be in (0, 1]");
  const auto& spec = model_->spec;
  const auto f = spec.space.flat_index(config);
  const auto tag = static_cast<std::uint64_t>(index_);
  const int steps = static_cast<int>(std::lround(truncation * spec.horizon));
  if (steps < 2) throw InvalidArgument("truncation leaves fewer than two steps");

  Rng latent(derive_seed(spec.seed, {kLatentTag, tag, f}));
  std::normal_distribution<double> nd;
  const double rho = spec.informativeness;
  // Each channel's curve parameter mixes the quality with its own noise draw.
  double p[4];
  for (double& pc : p) pc = rho * quality_[f] + (1.0 - rho) * nd(latent);

  const double* h = model_->H.row(static_cast<Eigen::Index>(f)).data();
  double speed = 1.0, level = 0.0;
  for (std::size_t j = 0; j < model_->P; ++j) {
    speed += model_->speed_coef[j] * h[j];
    level += model_->level_coef[j] * h[j];
  }
  speed = std::max(speed, 0.2);

  Rng noise(derive_seed(spec.seed, {kStepNoiseTag, tag, f}));
  const double sn = spec.trajectory_noise;
  EarlyStopTrajectory traj;
  traj.horizon = spec.horizon;
  traj.truncation_fraction = static_cast<double>(steps) / spec.horizon;
  // The quality signal grows quadratically over the run, so short prefixes carry little of it.
  for (int s = 1; s <= spec.horizon && s <= steps; ++s) {
    const double x = static_cast<double>(s) / spec.horizon;
    const double w = x * x;
    traj.channels["train_loss"].push_back({s, 1.0 + level + 1.5 * std::exp(-3.0 * speed * x) - 0.8 * w * p[0] + sn * nd(noise)});
    traj.channels["val_loss"].push_back({s, 1.1 + level + 1.4 * std::exp(-2.5 * speed * x) - 1.0 * w * p[1] + sn * nd(noise)});
    traj.channels["grad_norm"].push_back({s, 0.3 + 1.5 * std::exp(-4.0 * speed * x) + 0.5 * w * p[2] + sn * nd(noise)});
    traj.channels["entropy"].push_back({s, 1.5 - 0.4 * x - 0.1 * level + 0.4 * w * p[3] + sn * nd(noise)});
  }
  return traj;
}

const SimDataset& SimWorld::dataset(const std::string& id) const {
  for (const auto& d : datasets)
    if (d.id() == id) return d;
  if (heldout.id() == id) return heldout;
  throw NotFound("no simulated dataset '" + id + "'");
}

SimWorld generate(const SimSpec& spec) {
  spec.validate();
  auto model = std::make_shared<const SimModel>(spec);
  std::vector<SimDataset> datasets;
  for (int d = 0; d < spec.n_datasets; ++d) datasets.emplace_back(model, d);
  SimDataset heldout(model, spec.n_datasets);

  std::vector<DatasetGroup> corpus;
  for (const auto& ds : datasets) {
    DatasetGroup g;
    g.dataset_id = ds.id();
    const auto meta = ds.meta();
    g.meta_names = meta.names();
    g.meta_features = meta.values();
    const auto sample = sample_balanced(spec.space, static_cast<std::size_t>(spec.records_per_dataset),
                                        derive_seed(spec.seed, {kSampleTag, static_cast<std::uint64_t>(ds.index())}));
    for (const auto& c : sample) {
      RunRecord r;
      r.dataset_id = ds.id();
      r.config = c;
      const auto f = spec.space.flat_index(c);
      double y = ds.score_table()[f];
      if (spec.noise > 0) {
        Rng rng(derive_seed(spec.seed, {kCorpusNoiseTag, static_cast<std::uint64_t>(ds.index()), f}));
        y = std::clamp(y + spec.noise * std::normal_distribution<double>()(rng), 0.0, 1.0);
      }
      r.final_score = y;
      r.trajectory = ds.emit_trajectory(c, 1.0);
      g.records.push_back(std::move(r));
    }
    corpus.push_back(std::move(g));
  }
  return SimWorld{spec, std::move(datasets), std::move(heldout), std::move(corpus)};
}

EarlyStopTrajectory SimEvaluator::run_early(const Configuration& config, double truncation) {
  ++early_calls_;
  return dataset_.emit_trajectory(config, truncation);
}

double SimEvaluator::run_full(const Configuration& config) {
  ++full_calls_;
  return dataset_.evaluate_full(config, full_counts_[config]++);
}

nlohmann::json ground_truth_json(const SimWorld& world) {
  const auto& space = world.spec.space;
  nlohmann::json out = {{"space_size", space.size()}, {"datasets", nlohmann::json::array()}};
  auto emit = [&](const SimDataset& d) {
    nlohmann::json j = {{"dataset_id", d.id()},
                        {"optimum_index", d.optimum_index()},
                        {"optimum_config", space.config_to_json(space.at(d.optimum_index()))},
                        {"optimum_score", d.optimum_score()}};
    if (space.size() <= kGroundTruthTableLimit) j["scores"] = d.score_table();
    out["datasets"].push_back(std::move(j));
  };
  for (const auto& d : world.datasets) emit(d);
  emit(world.heldout);
  return out;
}

}  // namespace pipetune
