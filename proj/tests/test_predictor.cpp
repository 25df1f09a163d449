#include <doctest.h>

#include <cmath>
#include <numeric>

#include "pipetune/error.hpp"
#include "pipetune/predictor.hpp"
#include "pipetune/simulator.hpp"
#include "support/fixtures.hpp"

using namespace pipetune;

namespace {

RankerParams fast_ranker() {
  RankerParams p;
  p.boost = fixture::fast_boost();
  p.members = 2;
  return p;
}

PredictorParams fast_predictor() {
  PredictorParams p;
  p.boost = fixture::fast_boost();
  p.boost.bagging_fraction = 0.8;
  p.members = 3;
  return p;
}

struct Split {
  std::vector<DatasetGroup> train;
  DatasetGroup held;
};

Split split(const std::vector<DatasetGroup>& corpus, std::size_t h) {
  Split s;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (i == h) s.held = corpus[i];
    else s.train.push_back(corpus[i]);
  return s;
}

struct Magnitudes {
  double predicted = 0.0;
  double actual = 0.0;
};

// Mean |r_hat| and mean |y^z - s^z| over the held-out records.
Magnitudes held_out_magnitudes(const SimWorld& world, const RankingSurrogate& ranker,
                               const ResidualPredictor& predictor, const DatasetGroup& held) {
  const auto& space = world.spec.space;
  std::vector<Configuration> configs;
  for (const auto& r : held.records) configs.push_back(r.config);
  const auto s_z = ranker.score(group_meta(held), configs, space).z;
  const auto y_std = fit_standardizer({held});
  Magnitudes m;
  for (std::size_t i = 0; i < held.records.size(); ++i) {
    const auto& rec = held.records[i];
    m.predicted += std::abs(predictor.predict(rec.config, group_meta(held), *rec.trajectory, space).r_hat);
    m.actual += std::abs(y_std.standardize(held.dataset_id, rec.final_score) - s_z[i]);
  }
  m.predicted /= static_cast<double>(held.records.size());
  m.actual /= static_cast<double>(held.records.size());
  return m;
}

TreeModel constant_model(double value, std::size_t width) {
  TreeModel m;
  m.base_score = value;
  m.feature_count = width;
  return m;
}

}  // namespace

TEST_CASE("reconstruction") {
  CHECK(reconstruct(0.5, -0.2) == doctest::Approx(0.3));
  CHECK(reconstruct(0.7, 0.0) == 0.7);
  CHECK(reconstruct(0.0, 0.0) == 0.0);
}

TEST_CASE("targets are residuals or standardized scores") {
  const auto space = fixture::small_space();
  const auto world = generate(fixture::small_spec(21));
  const auto& ds = world.datasets[0];
  DatasetGroup g;
  g.dataset_id = ds.id();
  for (std::uint64_t f : {7u, 150u}) {
    const auto c = space.at(f);
    g.records.push_back({ds.id(), c, ds.true_score(c), ds.emit_trajectory(c, 1.0), nlohmann::json::object()});
  }
  g.records[0].final_score = 0.3;
  g.records[1].final_score = 0.6;

  // One full-strength round of exact-fit trees reproduces the targets.
  PredictorParams p;
  p.boost.rounds = 1;
  p.boost.learning_rate = 1.0;
  p.boost.min_leaf = 1;
  p.members = 1;
  p.boost.bagging_fraction = 1.0;
  p.filter = false;
  const auto y_std = fit_standardizer({g});

  p.target = TargetKind::absolute;
  const auto absolute = train_predictor({g}, space, nullptr, p);
  for (const auto& r : g.records) {
    const double y_z = y_std.standardize(g.dataset_id, r.final_score);
    CHECK(absolute.predict(r.config, {}, *r.trajectory, space).r_hat == doctest::Approx(y_z).epsilon(1e-12));
  }
  CHECK(std::abs(y_std.standardize(g.dataset_id, 0.6) - 1.0) <= 1e-6);

  // A ranker that orders the pair backwards gives residuals of -2 and +2.
  auto flipped = g;
  flipped.records[0].final_score = 0.6;
  flipped.records[1].final_score = 0.3;
  auto rp = fast_ranker();
  rp.filter_meta = false;
  rp.boost.min_leaf = 1;
  const auto ranker = train_ranker({flipped}, space, rp);
  p.target = TargetKind::residual;
  const auto residual = train_predictor({g}, space, &ranker, p);
  const auto s_z = ranker.score({}, {g.records[0].config, g.records[1].config}, space).z;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& r = g.records[i];
    const double target = y_std.standardize(g.dataset_id, r.final_score) - s_z[i];
    CHECK(residual.predict(r.config, {}, *r.trajectory, space).r_hat == doctest::Approx(target).epsilon(1e-12));
  }
  CHECK(s_z[0] > s_z[1]);
}

TEST_CASE("ensemble variance and its floor") {
  const auto space = fixture::small_space();
  const auto world = generate(fixture::small_spec(22));
  const auto& ds = world.datasets[1];
  const auto traj = ds.emit_trajectory(space.at(3), 0.5);

  ResidualPredictor p;
  p.windows.prefix_fraction = 0.5;
  p.config_names = space.encoded_names();
  p.channels.assign(std::begin(kSimChannels), std::end(kSimChannels));
  p.variance_floor = 1e-4;
  p.ensemble.members = {constant_model(-0.2, p.retained_features().size()),
                        constant_model(0.2, p.retained_features().size())};
  auto obs = p.predict(space.at(3), {}, traj, space);
  CHECK(obs.r_hat == 0.0);
  CHECK(obs.variance == doctest::Approx(0.04).epsilon(1e-12));

  p.variance_floor = 0.1;
  CHECK(p.predict(space.at(3), {}, traj, space).variance == 0.1);

  p.variance_floor = 1e-4;
  p.ensemble.members = {constant_model(0.3, p.retained_features().size()),
                        constant_model(0.3, p.retained_features().size())};
  obs = p.predict(space.at(3), {}, traj, space);
  CHECK(obs.r_hat == doctest::Approx(0.3));
  CHECK(obs.variance == 1e-4);

  // Unbagged trained members coincide.
  const auto ranker = train_ranker(world.corpus, space, fast_ranker());
  auto params = fast_predictor();
  params.boost.bagging_fraction = 1.0;
  const auto trained = train_predictor(world.corpus, space, &ranker, params);
  for (std::uint64_t f = 0; f < space.size(); f += 17)
    CHECK(trained.predict(space.at(f), ds.meta(), ds.emit_trajectory(space.at(f), 0.5), space).variance ==
          params.variance_floor);
}

TEST_CASE("trajectory prefix contract") {
  const auto world = generate(fixture::small_spec(23));
  const auto& space = world.spec.space;
  const auto ranker = train_ranker(world.corpus, space, fast_ranker());
  const auto model = train_predictor(world.corpus, space, &ranker, fast_predictor());
  const auto& ds = world.heldout;

  // The offline score is not an input.
  CHECK(model.retained_features().size() ==
        space.encoded_width() + model.meta_names.size() + model.trajectory_names.size());
  for (const auto& name : model.retained_features()) CHECK(name.find("score") == std::string::npos);

  for (std::uint64_t f = 0; f < space.size(); f += 11) {
    const auto c = space.at(f);
    const auto prefix = model.predict(c, ds.meta(), ds.emit_trajectory(c, 0.5), space);
    for (double t : {0.75, 1.0}) {
      const auto longer = model.predict(c, ds.meta(), ds.emit_trajectory(c, t), space);
      CHECK(longer.r_hat == prefix.r_hat);
      CHECK(longer.variance == prefix.variance);
    }
    CHECK(prefix.variance >= model.variance_floor);
  }
  CHECK_THROWS_AS(model.predict(space.at(0), ds.meta(), ds.emit_trajectory(space.at(0), 0.25), space),
                  InvalidArgument);
}

TEST_CASE("records without trajectories") {
  const auto world = generate(fixture::small_spec(24));
  const auto& space = world.spec.space;
  const auto ranker = train_ranker(world.corpus, space, fast_ranker());
  auto corpus = world.corpus;
  std::size_t stripped = 0;
  for (auto& g : corpus)
    for (std::size_t i = 0; i < g.records.size(); i += 3, ++stripped) g.records[i].trajectory.reset();
  const auto model = train_predictor(corpus, space, &ranker, fast_predictor());
  CHECK(model.skipped_records == stripped);

  for (auto& g : corpus)
    for (auto& r : g.records) r.trajectory.reset();
  CHECK_THROWS_AS(train_predictor(corpus, space, &ranker, fast_predictor()), InvalidArgument);
  CHECK_THROWS_AS(train_predictor(world.corpus, space, nullptr, fast_predictor()), InvalidArgument);
}

TEST_CASE("training is deterministic and serializable") {
  const auto world = generate(fixture::small_spec(25));
  const auto& space = world.spec.space;
  const auto ranker = train_ranker(world.corpus, space, fast_ranker());
  const auto a = train_predictor(world.corpus, space, &ranker, fast_predictor());
  const auto b = train_predictor(world.corpus, space, &ranker, fast_predictor());
  CHECK(a.to_json().dump() == b.to_json().dump());

  const auto c = ResidualPredictor::from_json(a.to_json());
  const auto cfg = space.at(42);
  const auto traj = world.heldout.emit_trajectory(cfg, 0.5);
  CHECK(c.predict(cfg, world.heldout.meta(), traj, space).r_hat ==
        a.predict(cfg, world.heldout.meta(), traj, space).r_hat);
  CHECK(PredictorParams::from_json(fast_predictor().to_json()).to_json() == fast_predictor().to_json());

  auto bad = a.to_json();
  bad["trajectory_features"].push_back("extra");
  CHECK_THROWS_AS(ResidualPredictor::from_json(bad), ParseError);
}

TEST_CASE("training consumes every record of every training dataset") {
  const auto world = generate(fixture::small_spec(26));
  const auto& space = world.spec.space;
  const auto s = split(world.corpus, 0);
  const auto ranker = train_ranker(s.train, space, fast_ranker());
  FitAudit audit;
  train_predictor(s.train, space, &ranker, fast_predictor(), &audit);
  std::size_t n = 0;
  for (const auto& g : s.train) n += g.records.size();
  CHECK(audit.records() == n);
  CHECK_NOTHROW(audit.assert_disjoint(s.held));
  CHECK_THROWS_AS(audit.assert_disjoint(s.train[1]), LeakageError);
}

TEST_CASE("near-zero corrections when the ranker is exact on the corpus") {
  auto spec = fixture::small_spec(27);
  spec.residual_weight = 0.0;
  spec.noise = 0.0;
  const auto world = generate(spec);
  RankerParams rp;
  rp.boost.pairs_per_row = 16;
  for (std::size_t h = 0; h < world.corpus.size(); ++h) {
    auto s = split(world.corpus, h);
    const auto ranker = train_ranker(s.train, spec.space, rp);
    // Relabel every record with an affine image of its ranker score, so y^z = s^z.
    auto relabel = [&](DatasetGroup& g) {
      std::vector<Configuration> configs;
      for (const auto& r : g.records) configs.push_back(r.config);
      const auto raw = ranker.score(group_meta(g), configs, spec.space).raw;
      for (std::size_t i = 0; i < raw.size(); ++i) g.records[i].final_score = 0.5 + 0.1 * raw[i];
    };
    relabel(s.held);
    for (auto& g : s.train) relabel(g);
    const auto model = train_predictor(s.train, spec.space, &ranker, PredictorParams{});
    const auto m = held_out_magnitudes(world, ranker, model, s.held);
    CHECK(m.actual <= 1e-6);
    CHECK(m.predicted <= 0.05);
  }
}

TEST_CASE("uninformative trajectories shrink corrections toward zero") {
  double predicted = 0.0, actual = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto spec = fixture::small_spec(300 + seed);
    spec.informativeness = 0.0;
    spec.n_datasets = 3;
    const auto world = generate(spec);
    const auto s = split(world.corpus, seed % 3);
    const auto ranker = train_ranker(s.train, spec.space, fast_ranker());
    const auto model = train_predictor(s.train, spec.space, &ranker, fast_predictor());
    const auto m = held_out_magnitudes(world, ranker, model, s.held);
    predicted += m.predicted;
    actual += m.actual;
  }
  CHECK(predicted <= actual);
}
