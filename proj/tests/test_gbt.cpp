#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pipetune/error.hpp"
#include "pipetune/gbt.hpp"

using namespace pipetune;

namespace {

RowMatrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  RowMatrix X(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) X(r, c) = n(rng);
  return X;
}

double mse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / a.size();
}

}  // namespace

TEST_CASE("constant targets predict the constant") {
  std::mt19937_64 rng(1);
  const RowMatrix X = random_matrix(40, 3, rng);
  const std::vector<double> y(40, 0.3);
  const auto m = fit_regressor(X, y, {});
  for (double p : m.predict(X)) CHECK(p == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("threshold-separable targets are fit exactly") {
  std::mt19937_64 rng(2);
  const RowMatrix X = random_matrix(60, 2, rng);
  std::vector<double> y(60);
  for (int i = 0; i < 60; ++i) y[i] = X(i, 1) > 0.1 ? 1.0 : -1.0;
  BoostParams p;
  p.rounds = 50;
  p.max_depth = 1;
  p.learning_rate = 0.5;
  const auto m = fit_regressor(X, y, p);
  CHECK(mse(m.predict(X), y) < 1e-6);
}

TEST_CASE("regression training loss is non-increasing on random instances") {
  for (int inst = 0; inst < 20; ++inst) {
    std::mt19937_64 rng(100 + inst);
    const RowMatrix X = random_matrix(80, 4, rng);
    std::normal_distribution<double> n;
    std::vector<double> y(80);
    for (int i = 0; i < 80; ++i) y[i] = std::sin(X(i, 0)) + 0.5 * X(i, 1) * X(i, 2) + 0.1 * n(rng);
    BoostParams p;
    p.rounds = 60;
    const auto m = fit_regressor(X, y, p);
    REQUIRE(!m.training_loss.empty());
    for (std::size_t r = 1; r < m.training_loss.size(); ++r)
      CHECK(m.training_loss[r] <= m.training_loss[r - 1] * (1 + 1e-12));
    CHECK(m.training_loss.back() == doctest::Approx(mse(m.predict(X), y)).epsilon(1e-9));
  }
}

TEST_CASE("fewer rows than min_leaf gives the mean") {
  RowMatrix X(3, 1);
  X << 1, 2, 3;
  const std::vector<double> y{1, 2, 6};
  const auto m = fit_regressor(X, y, {});
  CHECK(m.trees.empty());
  CHECK(m.base_score == doctest::Approx(3.0));
}

TEST_CASE("regressor is seed independent without subsampling") {
  std::mt19937_64 rng(3);
  const RowMatrix X = random_matrix(50, 3, rng);
  std::vector<double> y(50);
  for (int i = 0; i < 50; ++i) y[i] = X(i, 0) - X(i, 2);
  BoostParams a, b;
  a.seed = 1;
  b.seed = 99;
  CHECK(fit_regressor(X, y, a).predict(X) == fit_regressor(X, y, b).predict(X));
}

TEST_CASE("tree predictions are piecewise constant") {
  std::mt19937_64 rng(4);
  const RowMatrix X = random_matrix(100, 2, rng);
  std::vector<double> y(100);
  for (int i = 0; i < 100; ++i) y[i] = X(i, 0) * X(i, 0);
  const auto m = fit_regressor(X, y, {});
  std::vector<double> thresholds;
  for (const auto& t : m.trees)
    for (const auto& n : t.nodes)
      if (n.feature == 0) thresholds.push_back(n.threshold);
  std::sort(thresholds.begin(), thresholds.end());
  for (int i = 0; i < 100; ++i) {
    std::vector<double> row{X(i, 0), X(i, 1)};
    auto it = std::upper_bound(thresholds.begin(), thresholds.end(), row[0]);
    if (it == thresholds.end()) continue;
    // Move halfway toward the next threshold above: no split is crossed.
    std::vector<double> moved{row[0] + 0.5 * (*it - row[0]), row[1]};
    if (moved[0] >= *it) continue;
    CHECK(m.predict_row(moved) == m.predict_row(row));
  }
}

TEST_CASE("prediction checks dimensions and handles empty input") {
  std::mt19937_64 rng(5);
  const RowMatrix X = random_matrix(20, 3, rng);
  std::vector<double> y(20);
  std::iota(y.begin(), y.end(), 0.0);
  const auto m = fit_regressor(X, y, {});
  CHECK_THROWS_AS(m.predict(RowMatrix(2, 4)), InvalidArgument);
  CHECK(m.predict(RowMatrix(0, 3)).empty());
  CHECK_THROWS_AS(fit_regressor(X, std::vector<double>(19), {}), InvalidArgument);
}

TEST_CASE("ensemble mean and population variance") {
  TreeModel zero, one;
  zero.feature_count = one.feature_count = 1;
  zero.base_score = 0.0;
  one.base_score = 1.0;
  Ensemble e{{zero, one}};
  const auto p = e.predict(RowMatrix::Zero(2, 1));
  CHECK(p.mean == std::vector<double>{0.5, 0.5});
  CHECK(p.variance == std::vector<double>{0.25, 0.25});
  Ensemble same{{one, one, one}};
  CHECK(same.predict(RowMatrix::Zero(1, 1)).variance[0] == 0.0);
}

TEST_CASE("pairwise ranker orders a single pair") {
  RowMatrix X(2, 1);
  X << 1.0, 0.0;
  const std::vector<double> y{1.0, 0.0};
  const std::vector<int> g{0, 0};
  BoostParams p;
  p.min_leaf = 1;
  const auto m = fit_pairwise_ranker(X, y, g, p);
  const auto s = m.predict(X);
  CHECK(s[0] > s[1]);
}

TEST_CASE("pairwise ranker needs a within-group pair") {
  RowMatrix X(3, 1);
  X << 0, 1, 2;
  CHECK_THROWS_AS(fit_pairwise_ranker(X, std::vector<double>{0, 1, 2}, std::vector<int>{0, 1, 2}, {}),
                  InvalidArgument);
}

TEST_CASE("pairwise ranker is invariant to row order within groups") {
  std::mt19937_64 rng(6);
  const RowMatrix X = random_matrix(40, 3, rng);
  std::vector<double> y(40);
  std::vector<int> g(40);
  for (int i = 0; i < 40; ++i) {
    y[i] = X(i, 0) + 0.3 * X(i, 1);
    g[i] = i % 2;
  }
  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  RowMatrix Xp(40, 3);
  std::vector<double> yp(40);
  std::vector<int> gp(40);
  for (int i = 0; i < 40; ++i) {
    Xp.row(i) = X.row(perm[i]);
    yp[i] = y[perm[i]];
    gp[i] = g[perm[i]];
  }
  BoostParams p;
  p.rounds = 40;
  const auto a = fit_pairwise_ranker(X, y, g, p).predict(X);
  const auto b = fit_pairwise_ranker(Xp, yp, gp, p).predict(X);
  for (int i = 0; i < 40; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
}

TEST_CASE("cross-group pairs do not influence the fit") {
  std::mt19937_64 rng(7);
  const RowMatrix X = random_matrix(30, 2, rng);
  std::vector<double> y(30);
  std::vector<int> g(30);
  for (int i = 0; i < 30; ++i) {
    y[i] = X(i, 0);
    g[i] = i < 15 ? 0 : 1;
  }
  auto shifted = y;
  for (int i = 15; i < 30; ++i) shifted[i] -= 100.0;  // every group-1 row now below group 0
  BoostParams p;
  p.rounds = 30;
  CHECK(fit_pairwise_ranker(X, y, g, p).predict(X) == fit_pairwise_ranker(X, shifted, g, p).predict(X));
}

TEST_CASE("serialization round trip is exact") {
  std::mt19937_64 rng(8);
  const RowMatrix X = random_matrix(70, 3, rng);
  std::vector<double> y(70);
  for (int i = 0; i < 70; ++i) y[i] = std::exp(0.3 * X(i, 0)) - X(i, 1);
  const auto e = fit_regressor_ensemble(X, y, {}, 2);
  const auto back = Ensemble::from_json(nlohmann::json::parse(e.to_json().dump()));
  CHECK(back.predict(X).mean == e.predict(X).mean);
  CHECK(back.to_json() == e.to_json());
  CHECK_THROWS_AS(TreeModel::from_json({{"format", "other"}}), ParseError);
}

TEST_CASE("bagged regressor ensembles have spread, unbagged ones do not") {
  std::mt19937_64 rng(9);
  const RowMatrix X = random_matrix(80, 2, rng);
  std::vector<double> y(80);
  for (int i = 0; i < 80; ++i) y[i] = X(i, 0) + 0.2 * std::cos(3 * X(i, 1));
  BoostParams p;
  p.rounds = 30;
  CHECK(fit_regressor_ensemble(X, y, p, 3).predict(X).variance == std::vector<double>(80, 0.0));
  p.bagging_fraction = 0.7;
  const auto e = fit_regressor_ensemble(X, y, p, 3);
  const auto v = e.predict(X).variance;
  CHECK(*std::max_element(v.begin(), v.end()) > 0.0);
  CHECK(fit_regressor_ensemble(X, y, p, 3).to_json() == e.to_json());
}

TEST_CASE("ranker separates two-feature groups on the training set") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0, 1);
  RowMatrix X(200, 2);
  std::vector<double> y(200);
  std::vector<int> g(200);
  for (int i = 0; i < 200; ++i) {
    X(i, 0) = u(rng);
    X(i, 1) = u(rng);
    y[i] = X(i, 0) > 0.5 ? 1.0 + X(i, 1) : X(i, 1);
    g[i] = i / 100;
  }
  const auto m = fit_pairwise_ranker(X, y, g, {});
  const auto s = m.predict(X);
  int good = 0, total = 0;
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 200; ++j)
      if (g[i] == g[j] && y[i] > y[j]) {
        ++total;
        good += s[i] > s[j];
      }
  CHECK(static_cast<double>(good) / total >= 0.99);
}
