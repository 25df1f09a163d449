#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include <nlohmann/json.hpp>

#include "pipetune/error.hpp"
#include "pipetune/eval.hpp"
#include "pipetune/gp.hpp"
#include "pipetune/metrics.hpp"
#include "pipetune/optimizer.hpp"

namespace py = pybind11;
using namespace pipetune;
using json = nlohmann::json;

namespace {

// Worlds are regenerated from their spec; the Python object owns both.
struct PyWorld {
  explicit PyWorld(const SimSpec& spec) : world(generate(spec)), oracle(world) {}
  SimWorld world;
  SimOracle oracle;
};

json parse(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

std::string run_lodo_json(const PyWorld& w, const std::string& settings_json) {
  const auto settings = EvalSettings::from_json(parse(settings_json));
  const auto reports = run_lodo(w.world.corpus, w.world.spec.space, w.oracle, settings);
  json out = json::array();
  for (const auto& r : reports) out.push_back(r.to_json(w.world.spec.space));
  return json{{"reports", out}, {"summary", summarize(reports)}}.dump();
}

std::string optimize_json(const PyWorld& w, const std::string& target, const std::string& settings_json) {
  const auto& space = w.world.spec.space;
  auto settings = EvalSettings::from_json(parse(settings_json));
  const auto strategy = settings.optimizer.strategy;
  settings.methods = {absolute_targets(strategy) ? Method::no_offline : Method::two_phase};
  LodoSplit split{target, {}};
  for (const auto& g : w.world.corpus)
    if (g.dataset_id != target) split.training_ids.push_back(g.dataset_id);
  const auto models = train_split(w.world.corpus, split, space, settings);
  const auto& dataset = w.world.dataset(target);
  auto scored = models.ranker.score(dataset.meta(), enumerate(space), space);
  if (strategy == Strategy::no_offline) {
    std::fill(scored.raw.begin(), scored.raw.end(), 0.0);
    std::fill(scored.z.begin(), scored.z.end(), 0.0);
  }
  auto os = settings.optimizer;
  os.seed = method_seed(settings.seed, target, settings.methods[0], os.budget);
  const auto& predictor = models.residual ? *models.residual : *models.absolute;
  OnlineLoop loop(space, std::move(scored), predictor, dataset.meta(), os);
  SimEvaluator ev(dataset);
  loop.run(ev);
  const auto result = loop.finalize();
  auto doc = result.to_json(space);
  doc["final_score"] = dataset.true_score(result.chosen);
  doc["regret"] = regret(dataset.optimum_score(), dataset.true_score(result.chosen));
  json trace = json::array();
  for (const auto& t : result.trace) trace.push_back(t.to_json(space));
  doc["trace"] = trace;
  return doc.dump();
}

}  // namespace

PYBIND11_MODULE(_pipetune, m) {
  m.doc() = "Two-phase configuration selection: offline ranker plus online residual search";

  // Later registrations are tried first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NotFound>(m, "NotFound", PyExc_KeyError);
  py::register_exception<LeakageError>(m, "LeakageError", PyExc_RuntimeError);

  py::class_<SimSpec>(m, "SimSpec")
      .def(py::init<>())
      .def_readwrite("n_datasets", &SimSpec::n_datasets)
      .def_readwrite("descriptor_dim", &SimSpec::descriptor_dim)
      .def_readwrite("shared_weight", &SimSpec::shared_weight)
      .def_readwrite("residual_weight", &SimSpec::residual_weight)
      .def_readwrite("noise", &SimSpec::noise)
      .def_readwrite("informativeness", &SimSpec::informativeness)
      .def_readwrite("seed", &SimSpec::seed)
      .def_readwrite("records_per_dataset", &SimSpec::records_per_dataset)
      .def("space_json", [](const SimSpec& s) { return s.space.to_json().dump(); })
      .def("set_space_json", [](SimSpec& s, const std::string& text) { s.space = ConfigSpace::from_json(parse(text)); })
      .def("validate", &SimSpec::validate)
      .def("to_json", [](const SimSpec& s) { return s.to_json().dump(); });

  py::class_<PyWorld, std::shared_ptr<PyWorld>>(m, "World")
      .def(py::init<const SimSpec&>(), py::arg("spec"))
      .def_property_readonly("dataset_ids",
                             [](const PyWorld& w) {
                               std::vector<std::string> ids;
                               for (const auto& d : w.world.datasets) ids.push_back(d.id());
                               return ids;
                             })
      .def_property_readonly("space_size", [](const PyWorld& w) { return w.world.spec.space.size(); })
      .def("score_table", [](const PyWorld& w, const std::string& id) { return w.world.dataset(id).score_table(); })
      .def("optimum_score", [](const PyWorld& w, const std::string& id) { return w.world.dataset(id).optimum_score(); })
      .def("save_corpus",
           [](const PyWorld& w, const std::string& path) { save_corpus(path, w.world.corpus, w.world.spec.space); })
      .def("run_lodo", &run_lodo_json, py::arg("settings_json") = "")
      .def("optimize", &optimize_json, py::arg("target"), py::arg("settings_json") = "");

  m.def("ndcg_at_k", [](const std::vector<double>& p, const std::vector<double>& t, std::size_t k) {
    return ndcg_at_k(p, t, k);
  });
  m.def("pairwise_accuracy",
        [](const std::vector<double>& p, const std::vector<double>& t) { return pairwise_accuracy(p, t); });
  m.def("spearman", [](const std::vector<double>& p, const std::vector<double>& t) { return spearman(p, t); });
  m.def("sign_test_less", [](const std::vector<double>& a, const std::vector<double>& b) {
    const auto r = sign_test_less(a, b);
    return py::dict(py::arg("wins") = r.wins, py::arg("losses") = r.losses, py::arg("ties") = r.ties,
                    py::arg("p_value") = r.p_value);
  });
  m.def("update_offset", [](const std::vector<double>& delta, const std::vector<double>& variance) {
    return update_offset(delta, variance);
  });
  m.def("matern52", [](const std::vector<double>& a, const std::vector<double>& b, double signal_variance,
                       const std::vector<double>& lengthscales) {
    return MaternKernel(signal_variance, lengthscales)(a, b);
  });
  m.def("reconstruct", &reconstruct, py::arg("s_z"), py::arg("r_hat"));
}
