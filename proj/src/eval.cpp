#include "pipetune/eval.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>

#include "pipetune/error.hpp"
#include "pipetune/metrics.hpp"
#include "pipetune/rng.hpp"

namespace pipetune {

namespace {

constexpr Method kAllMethods[] = {Method::two_phase,     Method::offline_only, Method::global,
                                  Method::random_single, Method::random_search, Method::no_residual,
                                  Method::no_bo,         Method::no_offline};

const DatasetGroup& find_group(const std::vector<DatasetGroup>& corpus, const std::string& id) {
  for (const auto& g : corpus)
    if (g.dataset_id == id) return g;
  throw NotFound("dataset '" + id + "' is not in the corpus");
}

}  // namespace

std::uint64_t method_seed(std::uint64_t seed, const std::string& heldout_id, Method method, int budget) {
  return derive_seed(seed, {hash_text(heldout_id), static_cast<std::uint64_t>(method) + 1,
                            static_cast<std::uint64_t>(budget)});
}

std::string to_string(Method method) {
  switch (method) {
    case Method::two_phase: return "two_phase";
    case Method::offline_only: return "offline_only";
    case Method::global: return "global";
    case Method::random_single: return "random_single";
    case Method::random_search: return "random_search";
    case Method::no_residual: return "no_residual";
    case Method::no_bo: return "no_bo";
    case Method::no_offline: return "no_offline";
  }
  return "two_phase";
}

Method method_from_string(const std::string& text) {
  for (auto m : kAllMethods)
    if (to_string(m) == text) return m;
  throw InvalidArgument("unknown method '" + text + "'");
}

std::optional<Strategy> online_strategy(Method method) {
  switch (method) {
    case Method::two_phase: return Strategy::two_phase;
    case Method::random_search: return Strategy::random_search;
    case Method::no_residual: return Strategy::no_residual;
    case Method::no_bo: return Strategy::no_bo;
    case Method::no_offline: return Strategy::no_offline;
    default: return std::nullopt;
  }
}

std::vector<LodoSplit> lodo_splits(const std::vector<DatasetGroup>& corpus) {
  if (corpus.size() < 2) throw InvalidArgument("leave-one-dataset-out needs at least two datasets");
  std::vector<LodoSplit> out;
  for (const auto& held : corpus) {
    LodoSplit s{held.dataset_id, {}};
    for (const auto& g : corpus)
      if (g.dataset_id != held.dataset_id) s.training_ids.push_back(g.dataset_id);
    out.push_back(std::move(s));
  }
  return out;
}

std::unique_ptr<Evaluator> SimOracle::evaluator(const std::string& dataset_id) const {
  return std::make_unique<SimEvaluator>(world_.dataset(dataset_id));
}

double SimOracle::true_score(const std::string& dataset_id, const Configuration& config) const {
  return world_.dataset(dataset_id).true_score(config);
}

double SimOracle::optimum_score(const std::string& dataset_id) const {
  return world_.dataset(dataset_id).optimum_score();
}

nlohmann::json MetricReport::to_json(const ConfigSpace& space) const {
  nlohmann::json recall = nlohmann::json::object(), ndcg = nlohmann::json::object();
  for (const auto& [k, v] : recall_at) recall[std::to_string(k)] = v;
  for (const auto& [k, v] : ndcg_at) ndcg[std::to_string(k)] = v;
  nlohmann::json out = {{"dataset_id", dataset_id},
                        {"method", method},
                        {"budget", budget},
                        {"truncation", truncation},
                        {"final_score", final_score},
                        {"regret", regret},
                        {"pool_regret", pool_regret},
                        {"verified_score", verified_score},
                        {"recall_at", recall},
                        {"ndcg_at", ndcg},
                        {"pairwise_accuracy", pairwise_accuracy ? nlohmann::json(*pairwise_accuracy) : nlohmann::json()},
                        {"spearman", spearman ? nlohmann::json(*spearman) : nlohmann::json()},
                        {"evaluations_used", evaluations_used},
                        {"full_evaluations", full_evaluations},
                        {"negative_regret", negative_regret}};
  if (error.empty())
    out["chosen"] = space.config_to_json(chosen);
  else
    out["error"] = error;
  return out;
}

void EvalSettings::validate() const {
  if (methods.empty()) throw InvalidArgument("no methods requested");
  for (int b : budgets)
    if (b < 1) throw InvalidArgument("budgets must be at least 1");
  for (int k : ks)
    if (k < 1) throw InvalidArgument("k must be at least 1");
  optimizer.validate();
}

nlohmann::json EvalSettings::to_json() const {
  std::vector<std::string> names;
  for (auto m : methods) names.push_back(to_string(m));
  return {{"methods", names},       {"ranker", ranker.to_json()}, {"predictor", predictor.to_json()},
          {"optimizer", optimizer.to_json()}, {"budgets", budgets},     {"ks", ks},
          {"seed", seed}};
}

EvalSettings EvalSettings::from_json(const nlohmann::json& doc) {
  EvalSettings s;
  if (doc.contains("methods")) {
    s.methods.clear();
    for (const auto& m : doc["methods"]) s.methods.push_back(method_from_string(m.get<std::string>()));
  }
  if (doc.contains("ranker")) s.ranker = RankerParams::from_json(doc["ranker"]);
  if (doc.contains("predictor")) s.predictor = PredictorParams::from_json(doc["predictor"]);
  if (doc.contains("optimizer")) s.optimizer = OptimizerSettings::from_json(doc["optimizer"]);
  s.budgets = doc.value("budgets", s.budgets);
  s.ks = doc.value("ks", s.ks);
  s.seed = doc.value("seed", s.seed);
  return s;
}

Configuration global_choice(const std::vector<DatasetGroup>& training) {
  // Per configuration: the mean of each dataset's (possibly repeated) runs.
  std::map<Configuration, std::map<std::string, std::pair<double, int>>> runs;
  for (const auto& g : training)
    for (const auto& r : g.records) {
      auto& slot = runs[r.config][g.dataset_id];
      slot.first += r.final_score;
      ++slot.second;
    }
  if (runs.empty()) throw InvalidArgument("training corpus has no records");
  const Configuration* best_shared = nullptr;
  const Configuration* best_single = nullptr;
  double shared_score = 0.0, single_score = 0.0;
  for (const auto& [config, per_dataset] : runs) {
    double sum = 0.0, top = -std::numeric_limits<double>::infinity();
    for (const auto& [id, acc] : per_dataset) {
      const double mean = acc.first / acc.second;
      sum += mean;
      top = std::max(top, mean);
    }
    // Map order is lexicographic, so strict comparisons keep the smaller config on ties.
    if (per_dataset.size() >= 2) {
      const double mean = sum / static_cast<double>(per_dataset.size());
      if (!best_shared || mean > shared_score) {
        best_shared = &config;
        shared_score = mean;
      }
    }
    if (!best_single || top > single_score) {
      best_single = &config;
      single_score = top;
    }
  }
  return best_shared ? *best_shared : *best_single;
}

SplitModels train_split(const std::vector<DatasetGroup>& corpus, const LodoSplit& split, const ConfigSpace& space,
                        const EvalSettings& settings) {
  std::vector<DatasetGroup> training;
  for (const auto& id : split.training_ids) {
    if (id == split.heldout_id) throw LeakageError("held-out dataset listed among training datasets");
    training.push_back(find_group(corpus, id));
  }
  bool need_residual = false, need_absolute = false;
  for (auto m : settings.methods) {
    const auto s = online_strategy(m);
    if (!s) continue;
    (absolute_targets(*s) ? need_absolute : need_residual) = true;
  }

  const std::uint64_t split_tag = hash_text(split.heldout_id);
  SplitModels out;
  out.split = split;
  RankerParams rp = settings.ranker;
  rp.boost.seed = derive_seed(settings.seed, {split_tag, 1});
  out.ranker = train_ranker(training, space, rp, &out.audit);

  PredictorParams pp = settings.predictor;
  pp.windows.prefix_fraction = settings.optimizer.truncation;
  if (need_residual) {
    pp.target = TargetKind::residual;
    pp.boost.seed = derive_seed(settings.seed, {split_tag, 2});
    out.residual = train_predictor(training, space, &out.ranker, pp, &out.audit);
  }
  if (need_absolute) {
    pp.target = TargetKind::absolute;
    pp.boost.seed = derive_seed(settings.seed, {split_tag, 3});
    out.absolute = train_predictor(training, space, nullptr, pp, &out.audit);
  }
  return out;
}

std::vector<MetricReport> evaluate_split(const std::vector<DatasetGroup>& corpus, const SplitModels& models,
                                         const ConfigSpace& space, const TargetOracle& oracle,
                                         const EvalSettings& settings) {
  settings.validate();
  const std::string& target = models.split.heldout_id;
  const DatasetGroup& held = find_group(corpus, target);
  models.audit.assert_disjoint(held);
  const FeatureVector meta = group_meta(held);

  const auto all = enumerate(space);
  const ScoredCandidates scored = models.ranker.score(meta, all, space);
  ScoredCandidates unguided = scored;
  std::fill(unguided.raw.begin(), unguided.raw.end(), 0.0);
  std::fill(unguided.z.begin(), unguided.z.end(), 0.0);

  // Reference pool: the held-out dataset's distinct corpus configurations.
  std::vector<std::uint64_t> pool_idx;
  {
    std::set<std::uint64_t> seen;
    for (const auto& r : held.records)
      if (seen.insert(space.flat_index(r.config)).second) pool_idx.push_back(space.flat_index(r.config));
  }
  std::vector<double> pool_truth;
  for (auto f : pool_idx) pool_truth.push_back(oracle.true_score(target, all[f]));
  const std::size_t pool_best =
      static_cast<std::size_t>(std::max_element(pool_truth.begin(), pool_truth.end()) - pool_truth.begin());
  const double opt = oracle.optimum_score(target);

  auto fill_outcome = [&](MetricReport& rep, const Configuration& chosen, Evaluator& ev) {
    rep.chosen = chosen;
    rep.final_score = oracle.true_score(target, chosen);
    rep.regret = regret(opt, rep.final_score);
    rep.pool_regret = regret(pool_truth[pool_best], rep.final_score);
    rep.negative_regret = rep.regret < 0.0;
    rep.verified_score = ev.run_full(chosen);
    ++rep.full_evaluations;
  };
  auto fill_ranking = [&](MetricReport& rep, const std::vector<double>& space_scores) {
    if (space_scores.empty()) return;
    std::vector<double> pred;
    std::vector<Configuration> configs;
    for (auto f : pool_idx) {
      pred.push_back(space_scores[f]);
      configs.push_back(all[f]);
    }
    std::vector<std::size_t> order(pred.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (pred[a] != pred[b]) return pred[a] > pred[b];
      return configs[a] < configs[b];
    });
    std::vector<Configuration> ranked;
    for (auto i : order) ranked.push_back(configs[i]);
    for (int k : settings.ks) {
      rep.recall_at[k] = recall_at_k(ranked, configs[pool_best], static_cast<std::size_t>(k));
      rep.ndcg_at[k] = ndcg_at_k(pred, pool_truth, static_cast<std::size_t>(k));
    }
    rep.pairwise_accuracy = pairwise_accuracy(pred, pool_truth);
    rep.spearman = spearman(pred, pool_truth);
  };

  std::vector<MetricReport> out;
  for (auto method : settings.methods) {
    const auto strategy = online_strategy(method);
    std::vector<int> budgets = {0};
    if (strategy) budgets = settings.budgets.empty() ? std::vector<int>{settings.optimizer.budget} : settings.budgets;
    for (int budget : budgets) {
      MetricReport rep;
      rep.dataset_id = target;
      rep.method = to_string(method);
      rep.budget = budget;
      rep.truncation = strategy ? settings.optimizer.truncation : 1.0;
      try {
        auto ev = oracle.evaluator(target);
        const std::uint64_t seed = method_seed(settings.seed, target, method, budget);
        switch (method) {
          case Method::offline_only:
            fill_outcome(rep, all[select_top(scored, 1)[0]], *ev);
            fill_ranking(rep, scored.raw);
            break;
          case Method::global: {
            std::vector<DatasetGroup> training;
            for (const auto& id : models.split.training_ids) training.push_back(find_group(corpus, id));
            fill_outcome(rep, global_choice(training), *ev);
            break;
          }
          case Method::random_single: {
            Rng rng(seed);
            fill_outcome(rep, all[uniform_index(rng, all.size())], *ev);
            break;
          }
          default: {
            OptimizerSettings os = settings.optimizer;
            os.strategy = *strategy;
            os.budget = budget;
            os.seed = seed;
            const ResidualPredictor* predictor =
                absolute_targets(*strategy) ? (models.absolute ? &*models.absolute : nullptr)
                                            : (models.residual ? &*models.residual : nullptr);
            if (!predictor) throw InvalidArgument("split has no predictor for " + rep.method);
            OnlineLoop loop(space, *strategy == Strategy::no_offline ? unguided : scored, *predictor, meta, os);
            loop.run(*ev);
            const auto result = loop.finalize();
            rep.evaluations_used = result.evaluations_used;
            fill_outcome(rep, result.chosen, *ev);
            fill_ranking(rep, loop.belief());
            break;
          }
        }
      } catch (const LeakageError&) {
        throw;
      } catch (const Error& e) {
        rep.error = e.what();
      }
      out.push_back(std::move(rep));
    }
  }
  return out;
}

std::vector<MetricReport> run_lodo(const std::vector<DatasetGroup>& corpus, const ConfigSpace& space,
                                   const TargetOracle& oracle, const EvalSettings& settings) {
  settings.validate();
  std::vector<MetricReport> out;
  for (const auto& split : lodo_splits(corpus)) {
    const auto models = train_split(corpus, split, space, settings);
    auto reports = evaluate_split(corpus, models, space, oracle, settings);
    out.insert(out.end(), std::make_move_iterator(reports.begin()), std::make_move_iterator(reports.end()));
  }
  return out;
}

namespace {

std::vector<std::pair<std::string, double>> scalar_metrics(const MetricReport& r) {
  std::vector<std::pair<std::string, double>> m = {{"final_score", r.final_score},
                                                    {"regret", r.regret},
                                                    {"pool_regret", r.pool_regret},
                                                    {"verified_score", r.verified_score},
                                                    {"evaluations_used", static_cast<double>(r.evaluations_used)},
                                                    {"full_evaluations", static_cast<double>(r.full_evaluations)}};
  for (const auto& [k, v] : r.recall_at) m.emplace_back("recall@" + std::to_string(k), v);
  for (const auto& [k, v] : r.ndcg_at) m.emplace_back("ndcg@" + std::to_string(k), v);
  if (r.pairwise_accuracy) m.emplace_back("pairwise_accuracy", *r.pairwise_accuracy);
  if (r.spearman) m.emplace_back("spearman", *r.spearman);
  return m;
}

}  // namespace

void write_report_csv(std::ostream& out, const std::vector<MetricReport>& reports) {
  out << "dataset_id,method,budget,truncation,metric,value\n";
  out.precision(17);
  for (const auto& r : reports) {
    const std::string head =
        r.dataset_id + "," + r.method + "," + std::to_string(r.budget) + "," + nlohmann::json(r.truncation).dump() + ",";
    if (!r.error.empty()) {
      out << head << "error,\n";
      continue;
    }
    for (const auto& [name, value] : scalar_metrics(r)) out << head << name << "," << nlohmann::json(value).dump() << "\n";
  }
}

nlohmann::json summarize(const std::vector<MetricReport>& reports) {
  struct Acc {
    std::string method;
    int budget;
    std::size_t splits = 0, failures = 0;
    std::vector<std::string> order;
    std::map<std::string, std::pair<double, std::size_t>> sums;
  };
  std::vector<Acc> groups;
  for (const auto& r : reports) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const Acc& a) { return a.method == r.method && a.budget == r.budget; });
    if (it == groups.end()) {
      groups.push_back(Acc{r.method, r.budget, 0, 0, {}, {}});
      it = groups.end() - 1;
    }
    ++it->splits;
    if (!r.error.empty()) {
      ++it->failures;
      continue;
    }
    for (const auto& [name, value] : scalar_metrics(r)) {
      auto [slot, inserted] = it->sums.try_emplace(name, 0.0, 0);
      if (inserted) it->order.push_back(name);
      slot->second.first += value;
      ++slot->second.second;
    }
  }
  nlohmann::json out = nlohmann::json::array();
  for (const auto& a : groups) {
    nlohmann::json means = nlohmann::json::object();
    for (const auto& name : a.order) {
      const auto& [sum, n] = a.sums.at(name);
      means[name] = sum / static_cast<double>(n);
    }
    out.push_back({{"method", a.method}, {"budget", a.budget}, {"splits", a.splits}, {"failures", a.failures},
                   {"means", means}});
  }
  return out;
}

}  // namespace pipetune
