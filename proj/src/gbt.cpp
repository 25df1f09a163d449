#include "pipetune/gbt.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <map>
#include <numeric>

#include "pipetune/error.hpp"
#include "pipetune/rng.hpp"

namespace pipetune {

nlohmann::json BoostParams::to_json() const {
  return {{"rounds", rounds},   {"max_depth", max_depth},         {"learning_rate", learning_rate},
          {"min_leaf", min_leaf}, {"seed", seed},                 {"l2", l2},
          {"pairs_per_row", pairs_per_row}, {"max_bins", max_bins}, {"bagging_fraction", bagging_fraction}};
}

BoostParams BoostParams::from_json(const nlohmann::json& doc) {
  BoostParams p;
  p.rounds = doc.value("rounds", p.rounds);
  p.max_depth = doc.value("max_depth", p.max_depth);
  p.learning_rate = doc.value("learning_rate", p.learning_rate);
  p.min_leaf = doc.value("min_leaf", p.min_leaf);
  p.seed = doc.value("seed", p.seed);
  p.l2 = doc.value("l2", p.l2);
  p.pairs_per_row = doc.value("pairs_per_row", p.pairs_per_row);
  p.max_bins = doc.value("max_bins", p.max_bins);
  p.bagging_fraction = doc.value("bagging_fraction", p.bagging_fraction);
  return p;
}

namespace {

void check_params(const BoostParams& p) {
  if (p.rounds < 0 || p.max_depth < 0 || p.min_leaf < 1 || p.max_bins < 2 || p.max_bins > 256 || p.pairs_per_row < 1)
    throw InvalidArgument("invalid boosting parameters");
  if (!(p.learning_rate > 0.0) || !(p.l2 >= 0.0) || !(p.bagging_fraction > 0.0 && p.bagging_fraction <= 1.0))
    throw InvalidArgument("invalid boosting parameters");
}

void check_inputs(const RowMatrix& X, std::span<const double> y) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw InvalidArgument("feature rows and targets differ in length");
  if (X.rows() == 0) throw InvalidArgument("cannot fit on zero rows");
  if (!X.allFinite()) throw InvalidArgument("features must be finite");
  for (double v : y)
    if (!std::isfinite(v)) throw InvalidArgument("targets must be finite");
}

// Features discretized into ordered bins of consecutive distinct values.
// With at most max_bins distinct values each bin holds exactly one value, so
// split search over bins is exact greedy search over sorted unique values.
struct BinnedFeatures {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bins;  // row-major
  std::vector<std::vector<double>> cuts;
  std::vector<std::size_t> offset;
  std::size_t total_bins = 0;

  const std::uint8_t* row(std::size_t r) const { return bins.data() + r * cols; }
  std::size_t bin_count(std::size_t f) const { return cuts[f].size() + 1; }
};

BinnedFeatures bin_features(const RowMatrix& X, int max_bins) {
  BinnedFeatures b;
  b.rows = static_cast<std::size_t>(X.rows());
  b.cols = static_cast<std::size_t>(X.cols());
  b.bins.resize(b.rows * b.cols);
  b.cuts.resize(b.cols);
  b.offset.resize(b.cols);
  std::vector<std::pair<double, std::uint32_t>> col(b.rows);
  for (std::size_t f = 0; f < b.cols; ++f) {
    for (std::size_t r = 0; r < b.rows; ++r) col[r] = {X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)), static_cast<std::uint32_t>(r)};
    std::sort(col.begin(), col.end());
    std::size_t distinct = 1;
    for (std::size_t r = 1; r < b.rows; ++r)
      if (col[r].first != col[r - 1].first) ++distinct;
    const double per_bin = distinct <= static_cast<std::size_t>(max_bins)
                               ? 0.0
                               : static_cast<double>(b.rows) / static_cast<double>(max_bins);
    int bin = 0;
    std::size_t in_bin = 0;
    for (std::size_t r = 0; r < b.rows; ++r) {
      if (r > 0 && col[r].first != col[r - 1].first) {
        // A new distinct value: open a new bin unless the current one is still short.
        if (static_cast<double>(in_bin) >= per_bin && bin + 1 < max_bins) {
          const double lo = col[r - 1].first, hi = col[r].first;
          double cut = lo + 0.5 * (hi - lo);
          if (!(cut >= lo && cut < hi)) cut = lo;
          b.cuts[f].push_back(cut);
          ++bin;
          in_bin = 0;
        }
      }
      b.bins[col[r].second * b.cols + f] = static_cast<std::uint8_t>(bin);
      ++in_bin;
    }
    b.offset[f] = b.total_bins;
    b.total_bins += b.bin_count(f);
  }
  return b;
}

struct HistBin {
  double g = 0.0, h = 0.0;
  std::uint32_t n = 0;
};
using Histogram = std::vector<HistBin>;

struct SplitChoice {
  bool found = false;
  std::size_t feature = 0;
  std::uint8_t bin = 0;  // rows with bin <= this go left
  double gain = 0.0;
};

// Grows one depth-limited tree on gradient/hessian statistics. The leaf each
// training row lands in is recorded, so predictions update without a walk.
class TreeBuilder {
 public:
  TreeBuilder(const BinnedFeatures& data, const BoostParams& params, double l2)
      : data_(data), params_(params), l2_(l2), leaf_of_(data.rows) {}

  Tree build(const std::vector<double>& grad, const std::vector<double>& hess) {
    grad_ = &grad;
    hess_ = &hess;
    Tree tree;
    std::vector<std::uint32_t> rows(data_.rows);
    std::iota(rows.begin(), rows.end(), 0u);
    Histogram root = histogram(rows);
    grow(tree, std::move(rows), std::move(root), 0);
    return tree;
  }

  void apply(const Tree& tree, double lr, std::vector<double>& pred) const {
    for (std::size_t r = 0; r < data_.rows; ++r) pred[r] += lr * tree.nodes[leaf_of_[r]].value;
  }

 private:
  Histogram histogram(const std::vector<std::uint32_t>& rows) const {
    Histogram hist(data_.total_bins);
    const auto& grad = *grad_;
    const auto& hess = *hess_;
    const std::size_t* offset = data_.offset.data();
    for (const auto r : rows) {
      const std::uint8_t* b = data_.row(r);
      const double g = grad[r], h = hess[r];
      for (std::size_t f = 0; f < data_.cols; ++f) {
        HistBin& slot = hist[offset[f] + b[f]];
        slot.g += g;
        slot.h += h;
        ++slot.n;
      }
    }
    return hist;
  }

  static void subtract(Histogram& parent, const Histogram& child) {
    for (std::size_t i = 0; i < parent.size(); ++i) {
      parent[i].g -= child[i].g;
      parent[i].h -= child[i].h;
      parent[i].n -= child[i].n;
    }
  }

  double score(double g, double h) const { return g * g / (h + l2_); }

  SplitChoice best_split(const Histogram& hist, double G, double H, std::size_t count, double node_sq) const {
    SplitChoice best;
    const double parent = score(G, H);
    const double min_gain = std::max(1e-14, 1e-10 * node_sq);
    const auto min_leaf = static_cast<std::uint32_t>(params_.min_leaf);
    for (std::size_t f = 0; f < data_.cols; ++f) {
      const std::size_t nb = data_.bin_count(f);
      const HistBin* bins = hist.data() + data_.offset[f];
      double gl = 0.0, hl = 0.0;
      std::uint32_t nl = 0;
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        gl += bins[b].g;
        hl += bins[b].h;
        nl += bins[b].n;
        if (nl < min_leaf) continue;
        const std::uint32_t nr = static_cast<std::uint32_t>(count) - nl;
        if (nr < min_leaf) break;
        const double hr = H - hl;
        if (hl <= kMinHessian || hr <= kMinHessian) continue;
        const double gain = score(gl, hl) + score(G - gl, hr) - parent;
        if (gain > min_gain && gain > best.gain) {
          best.found = true;
          best.feature = f;
          best.bin = static_cast<std::uint8_t>(b);
          best.gain = gain;
        }
      }
    }
    return best;
  }

  int grow(Tree& tree, std::vector<std::uint32_t> rows, Histogram hist, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double G = 0.0, H = 0.0, sq = 0.0;
    for (auto r : rows) {
      const double g = (*grad_)[r], h = (*hess_)[r];
      G += g;
      H += h;
      if (h > 0) sq += g * g / h;
    }
    tree.nodes[id].value = -G / (H + l2_);

    SplitChoice split;
    if (depth < params_.max_depth && rows.size() >= 2 * static_cast<std::size_t>(params_.min_leaf))
      split = best_split(hist, G, H, rows.size(), sq);
    if (!split.found) {
      for (auto r : rows) leaf_of_[r] = id;
      return id;
    }

    std::vector<std::uint32_t> left, right;
    left.reserve(rows.size());
    right.reserve(rows.size());
    for (auto r : rows) (data_.row(r)[split.feature] <= split.bin ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    Histogram left_hist, right_hist;
    if (depth + 1 < params_.max_depth) {
      if (left.size() <= right.size()) {
        left_hist = histogram(left);
        subtract(hist, left_hist);
        right_hist = std::move(hist);
      } else {
        right_hist = histogram(right);
        subtract(hist, right_hist);
        left_hist = std::move(hist);
      }
    }
    hist = Histogram{};

    tree.nodes[id].feature = static_cast<int>(split.feature);
    tree.nodes[id].threshold = data_.cuts[split.feature][split.bin];
    const int l = grow(tree, std::move(left), std::move(left_hist), depth + 1);
    tree.nodes[id].left = l;
    const int r = grow(tree, std::move(right), std::move(right_hist), depth + 1);
    tree.nodes[id].right = r;
    return id;
  }

  static constexpr double kMinHessian = 1e-12;

  const BinnedFeatures& data_;
  const BoostParams& params_;
  double l2_;
  std::vector<int> leaf_of_;
  const std::vector<double>* grad_ = nullptr;
  const std::vector<double>* hess_ = nullptr;
};

nlohmann::json node_to_json(const Tree& tree, int i) {
  const auto& n = tree.nodes[i];
  if (n.feature < 0) return {{"leaf", n.value}};
  return {{"feature", n.feature},
          {"threshold", n.threshold},
          {"left", node_to_json(tree, n.left)},
          {"right", node_to_json(tree, n.right)}};
}

int node_from_json(Tree& tree, const nlohmann::json& doc, std::size_t feature_count) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  if (doc.contains("leaf")) {
    tree.nodes[id].value = doc["leaf"].get<double>();
    return id;
  }
  const int feature = doc.at("feature").get<int>();
  const double threshold = doc.at("threshold").get<double>();
  if (feature < 0 || static_cast<std::size_t>(feature) >= feature_count || !std::isfinite(threshold))
    throw ParseError("tree node has an invalid split");
  tree.nodes[id].feature = feature;
  tree.nodes[id].threshold = threshold;
  const int l = node_from_json(tree, doc.at("left"), feature_count);
  tree.nodes[id].left = l;
  const int r = node_from_json(tree, doc.at("right"), feature_count);
  tree.nodes[id].right = r;
  return id;
}

}  // namespace

double TreeModel::predict_row(std::span<const double> row) const {
  if (row.size() != feature_count)
    throw InvalidArgument("expected " + std::to_string(feature_count) + " features, got " + std::to_string(row.size()));
  double sum = 0.0;
  for (const auto& t : trees) sum += t.leaf_value(row.data());
  return base_score + learning_rate * sum;
}

std::vector<double> TreeModel::predict(const RowMatrix& X) const {
  if (X.rows() > 0 && static_cast<std::size_t>(X.cols()) != feature_count)
    throw InvalidArgument("expected " + std::to_string(feature_count) + " features, got " + std::to_string(X.cols()));
  std::vector<double> out(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double* row = X.row(r).data();
    double sum = 0.0;
    for (const auto& t : trees) sum += t.leaf_value(row);
    out[static_cast<std::size_t>(r)] = base_score + learning_rate * sum;
  }
  return out;
}

nlohmann::json TreeModel::to_json() const {
  nlohmann::json ts = nlohmann::json::array();
  for (const auto& t : trees) ts.push_back(node_to_json(t, 0));
  return {{"format", "pipetune-gbt"},
          {"version", 1},
          {"base_score", base_score},
          {"learning_rate", learning_rate},
          {"feature_count", feature_count},
          {"trees", ts}};
}

TreeModel TreeModel::from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "pipetune-gbt") throw ParseError("not a pipetune-gbt document");
  if (doc.value("version", 0) != 1) throw ParseError("unsupported pipetune-gbt version");
  TreeModel m;
  m.base_score = doc.at("base_score").get<double>();
  m.learning_rate = doc.at("learning_rate").get<double>();
  m.feature_count = doc.at("feature_count").get<std::size_t>();
  for (const auto& jt : doc.at("trees")) {
    Tree t;
    node_from_json(t, jt, m.feature_count);
    m.trees.push_back(std::move(t));
  }
  return m;
}

std::size_t Ensemble::feature_count() const {
  if (members.empty()) throw InvalidArgument("empty ensemble");
  return members.front().feature_count;
}

EnsemblePrediction Ensemble::predict(const RowMatrix& X) const {
  if (members.empty()) throw InvalidArgument("empty ensemble");
  const auto n = static_cast<std::size_t>(X.rows());
  EnsemblePrediction out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  std::vector<std::vector<double>> preds;
  preds.reserve(members.size());
  for (const auto& m : members) preds.push_back(m.predict(X));
  const double k = static_cast<double>(members.size());
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0, lo = preds[0][i], hi = preds[0][i];
    for (const auto& p : preds) {
      s += p[i];
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
    if (lo == hi) {
      out.mean[i] = lo;
      continue;
    }
    const double mean = s / k;
    double ss = 0.0;
    for (const auto& p : preds) ss += (p[i] - mean) * (p[i] - mean);
    out.mean[i] = mean;
    out.variance[i] = ss / k;
  }
  return out;
}

nlohmann::json Ensemble::to_json() const {
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : members) ms.push_back(m.to_json());
  return {{"format", "pipetune-ensemble"}, {"version", 1}, {"members", ms}};
}

Ensemble Ensemble::from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "pipetune-ensemble") throw ParseError("not a pipetune-ensemble document");
  Ensemble e;
  for (const auto& jm : doc.at("members")) e.members.push_back(TreeModel::from_json(jm));
  if (e.members.empty()) throw ParseError("ensemble has no members");
  return e;
}

TreeModel fit_regressor(const RowMatrix& X, std::span<const double> y, const BoostParams& params) {
  check_params(params);
  check_inputs(X, y);
  const std::size_t n = y.size();
  TreeModel model;
  model.learning_rate = params.learning_rate;
  model.feature_count = static_cast<std::size_t>(X.cols());
  model.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  if (n < static_cast<std::size_t>(params.min_leaf)) return model;

  const BinnedFeatures data = bin_features(X, params.max_bins);
  TreeBuilder builder(data, params, 0.0);
  std::vector<double> pred(n, model.base_score), grad(n), hess(n, 1.0);
  auto mse = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
    return s / static_cast<double>(n);
  };
  double loss = mse();
  for (int round = 0; round < params.rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) grad[i] = pred[i] - y[i];
    Tree tree = builder.build(grad, hess);
    // A split-free tree is a no-op: residuals already sum to zero.
    if (tree.nodes.size() == 1) break;
    builder.apply(tree, params.learning_rate, pred);
    model.trees.push_back(std::move(tree));
    const double next = mse();
    assert(next <= loss * (1.0 + 1e-12) + 1e-300);
    loss = next;
    model.training_loss.push_back(loss);
  }
  return model;
}

TreeModel fit_pairwise_ranker(const RowMatrix& X, std::span<const double> y, std::span<const int> group_ids,
                              const BoostParams& params) {
  check_params(params);
  check_inputs(X, y);
  if (group_ids.size() != y.size()) throw InvalidArgument("group ids and targets differ in length");
  const std::size_t n = y.size();

  // Each group's rows sorted by descending target, so position order is
  // preference order and equal targets form contiguous runs.
  std::map<int, std::vector<std::uint32_t>> by_group;
  for (std::size_t i = 0; i < n; ++i) by_group[group_ids[i]].push_back(static_cast<std::uint32_t>(i));
  std::vector<std::vector<std::uint32_t>> groups;
  bool any_pair = false;
  for (auto& [id, rows] : by_group) {
    if (rows.size() < 2) continue;
    std::stable_sort(rows.begin(), rows.end(), [&](std::uint32_t a, std::uint32_t b) { return y[a] > y[b]; });
    if (y[rows.front()] != y[rows.back()]) any_pair = true;
    groups.push_back(std::move(rows));
  }
  if (!any_pair) throw InvalidArgument("no within-group pair with distinct targets");

  TreeModel model;
  model.learning_rate = params.learning_rate;
  model.feature_count = static_cast<std::size_t>(X.cols());
  model.base_score = 0.0;

  const BinnedFeatures data = bin_features(X, params.max_bins);
  TreeBuilder builder(data, params, params.l2);
  std::vector<double> pred(n, 0.0), grad(n), hess(n);
  std::vector<double> ys, ps, gs, hs;

  for (int round = 0; round < params.rounds; ++round) {
    SplitMix64 rng(derive_seed(params.seed, {static_cast<std::uint64_t>(round)}));
    for (const auto& rows : groups) {
      const std::size_t m = rows.size();
      ys.resize(m);
      ps.resize(m);
      gs.assign(m, 0.0);
      hs.assign(m, 0.0);
      for (std::size_t a = 0; a < m; ++a) {
        ys[a] = y[rows[a]];
        ps[a] = pred[rows[a]];
      }
      // Position a is preferred over position b > a unless their targets tie.
      auto add_pair = [&](std::size_t hi, std::size_t lo) {
        if (ys[hi] == ys[lo]) return;
        // p = 1 / (1 + exp(s_hi - s_lo)) is the gradient magnitude.
        const double p = 1.0 / (1.0 + std::exp(std::clamp(ps[hi] - ps[lo], -700.0, 700.0)));
        const double w = p * (1.0 - p);
        gs[hi] -= p;
        gs[lo] += p;
        hs[hi] += w;
        hs[lo] += w;
      };
      if (m <= BoostParams::kAllPairsLimit) {
        for (std::size_t a = 0; a < m; ++a)
          for (std::size_t b = a + 1; b < m; ++b) add_pair(a, b);
      } else {
        const auto span = static_cast<std::uint64_t>(m - 1);
        for (std::size_t a = 0; a < m; ++a)
          for (int k = 0; k < params.pairs_per_row; ++k) {
            auto b = static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * span) >> 64);
            if (b >= a) ++b;
            b < a ? add_pair(b, a) : add_pair(a, b);
          }
      }
      for (std::size_t a = 0; a < m; ++a) {
        grad[rows[a]] = gs[a];
        hess[rows[a]] = hs[a];
      }
    }
    Tree tree = builder.build(grad, hess);
    if (tree.nodes.size() == 1) continue;
    builder.apply(tree, params.learning_rate, pred);
    model.trees.push_back(std::move(tree));
  }
  return model;
}

Ensemble fit_regressor_ensemble(const RowMatrix& X, std::span<const double> y, const BoostParams& params,
                                int members) {
  if (members < 1) throw InvalidArgument("ensemble needs at least one member");
  check_params(params);
  Ensemble e;
  if (params.bagging_fraction >= 1.0) {
    e.members.assign(static_cast<std::size_t>(members), fit_regressor(X, y, params));
    return e;
  }
  const auto n = static_cast<std::size_t>(X.rows());
  const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(params.bagging_fraction * n)));
  for (int m = 0; m < members; ++m) {
    BoostParams p = params;
    p.seed = derive_seed(params.seed, {static_cast<std::uint64_t>(m)});
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    Rng rng(derive_seed(p.seed, {0xba99ULL}));
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(take);
    std::sort(rows.begin(), rows.end());
    RowMatrix Xs(static_cast<Eigen::Index>(take), X.cols());
    std::vector<double> ys(take);
    for (std::size_t i = 0; i < take; ++i) {
      Xs.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
      ys[i] = y[rows[i]];
    }
    e.members.push_back(fit_regressor(Xs, ys, p));
  }
  return e;
}

Ensemble fit_ranker_ensemble(const RowMatrix& X, std::span<const double> y, std::span<const int> group_ids,
                             const BoostParams& params, int members) {
  if (members < 1) throw InvalidArgument("ensemble needs at least one member");
  Ensemble e;
  for (int m = 0; m < members; ++m) {
    BoostParams p = params;
    p.seed = derive_seed(params.seed, {static_cast<std::uint64_t>(m)});
    e.members.push_back(fit_pairwise_ranker(X, y, group_ids, p));
  }
  return e;
}

}  // namespace pipetune
