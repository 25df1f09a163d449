#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pipetune/error.hpp"
#include "pipetune/eval.hpp"
#include "pipetune/metrics.hpp"
#include "pipetune/rng.hpp"

using namespace pipetune;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

// Bad flags, inputs or files: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

std::string digest(const fs::path& path) {
  std::ostringstream ss;
  ss << std::hex << hash_text(read_text(path));
  return ss.str();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Everything a command needs to run again; `settings` is the resolved option snapshot.
struct Invocation {
  std::string command;
  json settings = json::object();
  std::string config_file;
  std::string out_dir;
};

struct Artifacts {
  json inputs = json::object();
  std::vector<std::string> outputs;
};

void write_manifest(const Invocation& inv, const Artifacts& art) {
  json seeds = json::object();
  if (inv.settings.contains("seed")) seeds["seed"] = inv.settings["seed"];
  write_json(fs::path(inv.out_dir) / "manifest.json",
             {{"tool", "pipetune"},
              {"version", kVersion},
              {"command", inv.command},
              {"out_dir", inv.out_dir},
              {"config_file", inv.config_file.empty() ? json() : json(inv.config_file)},
              {"settings", inv.settings},
              {"seeds", seeds},
              {"inputs", art.inputs},
              {"outputs", art.outputs},
              {"created_at", utc_now()}});
}

ConfigSpace load_space(const std::string& path) {
  if (path.empty()) return ConfigSpace::default_space();
  return ConfigSpace::from_json(read_json(path));
}

struct LoadedWorld {
  SimWorld world;
  std::vector<DatasetGroup> corpus;
};

// A simulate output directory: the spec regenerates the oracle, the corpus file is the training data.
LoadedWorld load_world(const std::string& dir, Artifacts& art) {
  const fs::path spec_path = fs::path(dir) / "world.json";
  const fs::path corpus_path = fs::path(dir) / "corpus.jsonl";
  if (!fs::exists(spec_path) || !fs::exists(corpus_path))
    throw UsageError(dir + " is not a simulate output directory");
  const auto spec = SimSpec::from_json(read_json(spec_path).at("spec"));
  art.inputs[spec_path.string()] = digest(spec_path);
  art.inputs[corpus_path.string()] = digest(corpus_path);
  LoadedWorld lw{generate(spec), load_corpus(corpus_path, spec.space)};
  return lw;
}

// --- simulate ---------------------------------------------------------------

Artifacts run_simulate(const Invocation& inv) {
  const auto spec = SimSpec::from_json(inv.settings.at("spec"));
  const auto world = generate(spec);
  const fs::path out(inv.out_dir);
  fs::create_directories(out);
  save_corpus(out / "corpus.jsonl", world.corpus, spec.space);
  write_json(out / "ground_truth.json", ground_truth_json(world));
  write_json(out / "world.json", {{"spec", spec.to_json()}});
  return {json::object(), {"corpus.jsonl", "ground_truth.json", "world.json"}};
}

// --- train-offline ----------------------------------------------------------

Artifacts run_train_offline(const Invocation& inv) {
  const auto& s = inv.settings;
  Artifacts art;
  std::vector<DatasetGroup> corpus;
  ConfigSpace space = ConfigSpace::default_space();
  if (!s.at("world").get<std::string>().empty()) {
    auto lw = load_world(s["world"], art);
    space = lw.world.spec.space;
    corpus = std::move(lw.corpus);
  } else {
    const std::string path = s.at("corpus");
    if (!fs::exists(path)) throw UsageError("corpus " + path + " does not exist");
    space = load_space(s.at("space"));
    corpus = load_corpus(path, space);
    art.inputs[path] = digest(path);
  }
  auto settings = EvalSettings::from_json(s.at("eval"));
  settings.methods = {s.at("target_kind") == "absolute" ? Method::no_offline : Method::two_phase};

  auto splits = lodo_splits(corpus);
  const std::string heldout = s.at("heldout");
  if (!heldout.empty()) {
    auto it = std::find_if(splits.begin(), splits.end(), [&](const LodoSplit& x) { return x.heldout_id == heldout; });
    if (it == splits.end()) throw UsageError("dataset '" + heldout + "' is not in the corpus");
    splits = {*it};
  }
  for (const auto& split : splits) {
    const auto models = train_split(corpus, split, space, settings);
    const auto& predictor = models.residual ? *models.residual : *models.absolute;
    const fs::path dir = fs::path(inv.out_dir) / split.heldout_id;
    write_json(dir / "ranker.json", models.ranker.to_json());
    write_json(dir / "predictor.json", predictor.to_json());
    art.outputs.push_back(split.heldout_id + "/ranker.json");
    art.outputs.push_back(split.heldout_id + "/predictor.json");
  }
  return art;
}

// --- optimize ---------------------------------------------------------------

Method method_of(Strategy s) {
  switch (s) {
    case Strategy::two_phase: return Method::two_phase;
    case Strategy::no_residual: return Method::no_residual;
    case Strategy::no_offline: return Method::no_offline;
    case Strategy::no_bo: return Method::no_bo;
    case Strategy::random_search: return Method::random_search;
  }
  return Method::two_phase;
}

Artifacts run_optimize(const Invocation& inv) {
  const auto& s = inv.settings;
  Artifacts art;
  const auto lw = load_world(s.at("world"), art);
  const auto& space = lw.world.spec.space;
  const std::string target = s.at("target");
  const auto& dataset = lw.world.dataset(target);

  const fs::path bundle = fs::path(s.at("bundles").get<std::string>()) / target;
  const fs::path ranker_path = bundle / "ranker.json", predictor_path = bundle / "predictor.json";
  if (!fs::exists(ranker_path) || !fs::exists(predictor_path))
    throw UsageError("no bundles for '" + target + "' under " + s.at("bundles").get<std::string>());
  const auto ranker = RankingSurrogate::from_json(read_json(ranker_path));
  const auto predictor = ResidualPredictor::from_json(read_json(predictor_path));
  art.inputs[ranker_path.string()] = digest(ranker_path);
  art.inputs[predictor_path.string()] = digest(predictor_path);
  for (const auto* m : {&ranker.manifest, &predictor.manifest})
    for (const auto& id : m->value("datasets", json::array()))
      if (id == target) throw LeakageError("bundle for '" + target + "' was trained on it");

  auto os = OptimizerSettings::from_json(s.at("optimizer"));
  os.seed = method_seed(s.at("seed").get<std::uint64_t>(), target, method_of(os.strategy), os.budget);
  auto scored = ranker.score(dataset.meta(), enumerate(space), space);
  if (os.strategy == Strategy::no_offline) {
    std::fill(scored.raw.begin(), scored.raw.end(), 0.0);
    std::fill(scored.z.begin(), scored.z.end(), 0.0);
  }
  OnlineLoop loop(space, std::move(scored), predictor, dataset.meta(), os);
  SimEvaluator ev(dataset);
  loop.run(ev);
  const auto result = loop.finalize();

  const fs::path out(inv.out_dir);
  std::string trace;
  for (const auto& t : result.trace) trace += t.to_json(space).dump() + "\n";
  write_text(out / "trace.jsonl", trace);
  auto doc = result.to_json(space);
  doc["target"] = target;
  doc["final_score"] = dataset.true_score(result.chosen);
  doc["regret"] = regret(dataset.optimum_score(), dataset.true_score(result.chosen));
  write_json(out / "result.json", doc);
  art.outputs = {"trace.jsonl", "result.json"};
  return art;
}

// --- eval-lodo --------------------------------------------------------------

Artifacts run_eval_lodo(const Invocation& inv) {
  const auto& s = inv.settings;
  Artifacts art;
  const auto lw = load_world(s.at("world"), art);
  const auto settings = EvalSettings::from_json(s.at("eval"));
  const SimOracle oracle(lw.world);
  const auto reports = run_lodo(lw.corpus, lw.world.spec.space, oracle, settings);

  const fs::path out(inv.out_dir);
  std::ostringstream csv;
  write_report_csv(csv, reports);
  write_text(out / "report.csv", csv.str());
  std::string lines;
  for (const auto& r : reports) lines += r.to_json(lw.world.spec.space).dump() + "\n";
  write_text(out / "reports.jsonl", lines);
  write_json(out / "summary.json", summarize(reports));
  art.outputs = {"report.csv", "reports.jsonl", "summary.json"};
  return art;
}

Artifacts dispatch(const Invocation& inv) {
  if (inv.out_dir.empty()) throw UsageError("no output directory");
  if (inv.command == "simulate") return run_simulate(inv);
  if (inv.command == "train-offline") return run_train_offline(inv);
  if (inv.command == "optimize") return run_optimize(inv);
  if (inv.command == "eval-lodo") return run_eval_lodo(inv);
  throw UsageError("unknown command '" + inv.command + "'");
}

// Shared model-training flags.
struct ModelFlags {
  std::uint64_t seed = 0;
  double truncation = 0.5;
  int ranker_rounds = RankerParams{}.boost.rounds;
  int ranker_members = RankerParams{}.members;
  int pairs_per_row = 16;
  int predictor_rounds = PredictorParams{}.boost.rounds;
  int predictor_members = PredictorParams{}.members;

  void bind(CLI::App* app) {
    app->add_option("--seed", seed, "global seed")->envname("PIPETUNE_SEED");
    app->add_option("--truncation", truncation, "early-stop fraction of the SFT horizon")
        ->check(CLI::IsMember({0.25, 0.5, 0.75}));
    app->add_option("--ranker-rounds", ranker_rounds)->check(CLI::PositiveNumber);
    app->add_option("--ranker-members", ranker_members)->check(CLI::PositiveNumber);
    app->add_option("--pairs-per-row", pairs_per_row)->check(CLI::PositiveNumber);
    app->add_option("--predictor-rounds", predictor_rounds)->check(CLI::PositiveNumber);
    app->add_option("--predictor-members", predictor_members)->check(CLI::PositiveNumber);
  }

  EvalSettings eval() const {
    EvalSettings s;
    s.seed = seed;
    s.optimizer.truncation = truncation;
    s.ranker.boost.rounds = ranker_rounds;
    s.ranker.members = ranker_members;
    s.ranker.boost.pairs_per_row = pairs_per_row;
    s.predictor.boost.rounds = predictor_rounds;
    s.predictor.members = predictor_members;
    return s;
  }
};

std::string config_of(CLI::App* sub) {
  const auto* opt = sub->get_option("--config");
  return opt->count() > 0 ? opt->as<std::string>() : std::string();
}

std::string trim(const std::string& text) {
  const auto b = text.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return text.substr(b, text.find_last_not_of(" \t\r") - b + 1);
}

// Appends `--key value` for every key = value line of the subcommand's
// --config file whose flag is not on the command line, so flags win over the
// file and the file wins over environment fallbacks.
std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
  if (args.size() < 2) return args;
  CLI::App* sub = nullptr;
  for (auto* candidate : app.get_subcommands({}))
    if (candidate->get_name() == args[1]) sub = candidate;
  if (!sub) return args;
  std::string path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::istringstream in(read_text(path));
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    std::replace(key.begin(), key.end(), '_', '-');
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    const auto* opt = key == "config" ? nullptr : sub->get_option_no_throw("--" + key);
    if (!opt) throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    const bool given = std::any_of(args.begin() + 2, args.end(), [&](const std::string& a) {
      return a == "--" + key || a.rfind("--" + key + "=", 0) == 0;
    });
    if (given) continue;
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "1" || value == "yes") args.push_back("--" + key);
    } else {
      args.push_back("--" + key);
      args.push_back(value);
    }
  }
  return args;
}

int run(int argc, char** argv) {
  CLI::App app{"Budget-aware two-phase configuration selection for multi-stage pipelines"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  auto with_common = [](CLI::App* sub, std::string& out) {
    sub->add_option("--config", "key = value settings file; flags take precedence")->check(CLI::ExistingFile);
    sub->add_option("-o,--out", out, "output directory")->required();
  };

  Invocation inv;

  SimSpec spec;
  std::string sim_space;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic corpus and its ground truth");
  with_common(simulate, inv.out_dir);
  simulate->add_option("--datasets", spec.n_datasets, "training datasets");
  simulate->add_option("--records", spec.records_per_dataset, "records per dataset");
  simulate->add_option("--descriptor-dim", spec.descriptor_dim);
  simulate->add_option("--shared-weight", spec.shared_weight);
  simulate->add_option("--residual-weight", spec.residual_weight);
  simulate->add_option("--noise", spec.noise, "observation noise of full runs");
  simulate->add_option("--informativeness", spec.informativeness, "weight of the score in trajectories");
  simulate->add_option("--seed", spec.seed)->envname("PIPETUNE_SEED");
  simulate->add_option("--space", sim_space, "config space JSON (default: built-in space)")->check(CLI::ExistingFile);

  ModelFlags train_flags;
  std::string train_world, train_corpus, train_space, heldout, target_kind = "residual";
  bool all_splits = false;
  auto* train = app.add_subcommand("train-offline", "fit ranker and predictor bundles per LODO split");
  with_common(train, inv.out_dir);
  auto* w_opt = train->add_option("--world", train_world, "simulate output directory");
  auto* c_opt = train->add_option("--corpus", train_corpus, "corpus JSONL");
  w_opt->excludes(c_opt);
  train->add_option("--space", train_space, "config space JSON for --corpus")->needs(c_opt);
  auto* h_opt = train->add_option("--heldout", heldout, "train only the split holding out this dataset");
  train->add_flag("--lodo", all_splits, "train every split (default)")->excludes(h_opt);
  train->add_option("--predictor-target", target_kind)->check(CLI::IsMember({"residual", "absolute"}));
  train_flags.bind(train);

  std::uint64_t opt_seed = 0;
  std::string opt_world, bundles, target, strategy = "two_phase";
  OptimizerSettings opt_settings;
  auto* optimize = app.add_subcommand("optimize", "run the online loop on one held-out dataset");
  with_common(optimize, inv.out_dir);
  optimize->add_option("--world", opt_world, "simulate output directory")->required();
  optimize->add_option("--bundles", bundles, "train-offline output directory")->required();
  optimize->add_option("--target", target, "held-out dataset id")->required();
  optimize->add_option("--budget", opt_settings.budget, "early-stopped evaluations, warm start included");
  optimize->add_option("--warm-start", opt_settings.warm_start);
  optimize->add_option("--strategy", strategy)
      ->check(CLI::IsMember({"two_phase", "no_residual", "no_offline", "no_bo", "random_search"}));
  optimize->add_option("--seed", opt_seed, "global seed")->envname("PIPETUNE_SEED");
  optimize->add_option("--truncation", opt_settings.truncation)->check(CLI::IsMember({0.25, 0.5, 0.75}));

  ModelFlags eval_flags;
  std::string eval_world;
  std::vector<std::string> methods = {"two_phase", "offline_only", "global", "random_single"}, ablate;
  std::vector<int> budgets, ks = {1, 3, 5, 10};
  int eval_budget = 15, eval_warm = 5;
  auto* evaluate = app.add_subcommand("eval-lodo", "evaluate methods across all leave-one-dataset-out splits");
  with_common(evaluate, inv.out_dir);
  evaluate->add_option("--world", eval_world, "simulate output directory")->required();
  evaluate->add_option("--methods", methods, "comma-separated methods")->delimiter(',');
  evaluate->add_option("--ablate", ablate, "extra ablation variants")
      ->delimiter(',')
      ->check(CLI::IsMember({"no_residual", "no_bo", "no_offline"}));
  evaluate->add_option("--budgets", budgets, "budget sweep for online methods")->delimiter(',');
  evaluate->add_option("--budget", eval_budget);
  evaluate->add_option("--warm-start", eval_warm);
  evaluate->add_option("--ks", ks, "cutoffs for recall and nDCG")->delimiter(',');
  eval_flags.bind(evaluate);

  std::string manifest_path, rerun_out;
  auto* rerun = app.add_subcommand("rerun-from-manifest", "repeat a run from its manifest");
  rerun->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
  rerun->add_option("-o,--out", rerun_out, "output directory (default: the original one)");

  try {
    auto args = expand_config(app, std::vector<std::string>(argv, argv + argc));
    std::vector<char*> ptrs;
    for (auto& a : args) ptrs.push_back(a.data());
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  if (simulate->parsed()) {
    inv.command = "simulate";
    if (!sim_space.empty()) spec.space = load_space(sim_space);
    spec.validate();
    inv.config_file = config_of(simulate);
    inv.settings = {{"spec", spec.to_json()}, {"seed", spec.seed}};
  } else if (train->parsed()) {
    inv.command = "train-offline";
    if (train_world.empty() && train_corpus.empty()) throw UsageError("train-offline needs --world or --corpus");
    auto es = train_flags.eval();
    es.validate();
    inv.config_file = config_of(train);
    inv.settings = {{"world", train_world}, {"corpus", train_corpus}, {"space", train_space},
                    {"heldout", heldout},   {"target_kind", target_kind}, {"eval", es.to_json()},
                    {"seed", train_flags.seed}};
  } else if (optimize->parsed()) {
    inv.command = "optimize";
    opt_settings.strategy = strategy_from_string(strategy);
    opt_settings.validate();
    inv.config_file = config_of(optimize);
    inv.settings = {{"world", opt_world}, {"bundles", bundles}, {"target", target},
                    {"optimizer", opt_settings.to_json()}, {"seed", opt_seed}};
  } else if (evaluate->parsed()) {
    inv.command = "eval-lodo";
    auto es = eval_flags.eval();
    es.methods.clear();
    for (const auto& m : methods) es.methods.push_back(method_from_string(m));
    for (const auto& m : ablate) {
      const auto method = method_from_string(m);
      if (std::find(es.methods.begin(), es.methods.end(), method) == es.methods.end()) es.methods.push_back(method);
    }
    es.budgets = budgets;
    es.ks = ks;
    es.optimizer.budget = eval_budget;
    es.optimizer.warm_start = eval_warm;
    es.validate();
    inv.config_file = config_of(evaluate);
    inv.settings = {{"world", eval_world}, {"eval", es.to_json()}, {"seed", eval_flags.seed}};
  } else {
    const auto manifest = read_json(manifest_path);
    if (manifest.value("tool", "") != "pipetune") throw UsageError(manifest_path + " is not a pipetune manifest");
    inv.command = manifest.at("command");
    inv.settings = manifest.at("settings");
    inv.config_file = manifest.value("config_file", json()).is_string() ? manifest["config_file"].get<std::string>() : "";
    inv.out_dir = rerun_out.empty() ? manifest.at("out_dir").get<std::string>() : rerun_out;
  }

  const auto art = dispatch(inv);
  write_manifest(inv, art);
  std::cout << inv.command << ": wrote " << art.outputs.size() << " files to " << inv.out_dir << "\n";
  return 0;
}

int fail(const std::exception& e, int code) {
  std::cerr << (code == 1 ? "internal error: " : "error: ") << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    return fail(e, 2);
  } catch (const EvaluationError& e) {
    return fail(e, 1);
  } catch (const SingularKernel& e) {
    return fail(e, 1);
  } catch (const Error& e) {
    // Invalid inputs, unknown ids and leakage.
    return fail(e, 2);
  } catch (const std::exception& e) {
    return fail(e, 1);
  }
}
