// Python bindings for the core operations: dataset synthesis, meta-training,
// few-shot evaluation, the metric, and the collapse demo.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "shotfree/class_model.hpp"
#include "shotfree/dataset.hpp"
#include "shotfree/embedding.hpp"
#include "shotfree/fewshot.hpp"
#include "shotfree/gradcheck.hpp"
#include "shotfree/losses.hpp"
#include "shotfree/serialize.hpp"
#include "shotfree/training.hpp"
#include "shotfree/version.hpp"

namespace py = pybind11;
using namespace shotfree;

namespace {

Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeError("need at least one row");
  const std::size_t cols = rows.front().size();
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("ragged rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(flat));
}

std::vector<std::vector<double>> tensor_to_rows(const Tensor& t) {
  std::vector<std::vector<double>> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    out[i].resize(t.cols());
    for (std::size_t j = 0; j < t.cols(); ++j) out[i][j] = t.at(i, j);
  }
  return out;
}

py::dict report_to_dict(const EvalReport& r) {
  py::dict d;
  d["scenario"] = r.scenario;
  d["episodes"] = r.episodes;
  d["mean_accuracy"] = r.mean_accuracy;
  d["ci95"] = r.ci95;
  d["seed"] = r.seed;
  d["method"] = r.method;
  return d;
}

EvalScenario make_scenario(std::size_t ways, std::size_t shots, std::size_t queries,
                           std::size_t episodes, std::uint64_t seed, std::size_t workers,
                           const std::string& split) {
  EvalScenario sc;
  sc.ways = ways;
  sc.shots = shots;
  sc.queries = queries;
  sc.episodes = episodes;
  sc.seed = seed;
  sc.workers = workers;
  sc.split = parse_split_tag(split);
  return sc;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "shot-free few-shot classification core";
  m.attr("__version__") = kArtifactVersion;

  py::register_exception<Error>(m, "ShotfreeError");

  py::class_<SplitDataset>(m, "SplitDataset")
      .def_property_readonly("num_rows", &SplitDataset::num_rows)
      .def_property_readonly("dim", &SplitDataset::dim)
      .def_property_readonly("labels", [](const SplitDataset& ds) { return ds.labels; })
      .def("feature_row",
           [](const SplitDataset& ds, std::size_t i) {
             if (i >= ds.num_rows()) throw py::index_error();
             std::vector<double> row(ds.dim());
             for (std::size_t j = 0; j < ds.dim(); ++j) row[j] = ds.features.at(i, j);
             return row;
           })
      .def("classes_in_split",
           [](const SplitDataset& ds, const std::string& tag) {
             return ds.classes_in_split(parse_split_tag(tag));
           })
      .def("save_csv",
           [](const SplitDataset& ds, const std::string& path) { save_csv(ds, path); })
      .def_static("load_csv", [](const std::string& path) { return load_csv(path); });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_property(
          "optimizer", [](const TrainConfig& c) { return std::string(recipe_name(c.optimizer)); },
          [](TrainConfig& c, const std::string& v) { c.optimizer = parse_recipe(v); })
      .def_readwrite("ways", &TrainConfig::ways)
      .def_readwrite("per_class", &TrainConfig::per_class)
      .def_readwrite("episodes_per_iteration", &TrainConfig::episodes_per_iteration)
      .def_readwrite("max_iterations", &TrainConfig::max_iterations)
      .def_readwrite("lambda_", &TrainConfig::lambda)
      .def_readwrite("mu_factor", &TrainConfig::mu_factor)
      .def_readwrite("dropout_rate", &TrainConfig::dropout_rate)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("validation_interval", &TrainConfig::validation_interval)
      .def_readwrite("patience", &TrainConfig::patience)
      .def_readwrite("decay_every", &TrainConfig::decay_every)
      .def_readwrite("initial_lr", &TrainConfig::initial_lr)
      .def_readwrite("hidden_sizes", &TrainConfig::hidden_sizes)
      .def_readwrite("embed_dim", &TrainConfig::embed_dim)
      .def_readwrite("val_episodes", &TrainConfig::val_episodes)
      .def_readwrite("val_shots", &TrainConfig::val_shots)
      .def_readwrite("val_queries", &TrainConfig::val_queries)
      .def_readwrite("train_shots", &TrainConfig::train_shots)
      .def("to_json", [](const TrainConfig& c) { return config_to_json(c); })
      .def_static("from_json", [](const std::string& s) { return config_from_json(s); });

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("model_kind", [](const Checkpoint& c) { return c.model_kind; })
      .def_property_readonly("iteration", [](const Checkpoint& c) { return c.iteration; })
      .def_property_readonly("validation_score",
                             [](const Checkpoint& c) { return c.validation_score; })
      .def_property_readonly("id", [](const Checkpoint& c) { return checkpoint_id(c); })
      .def_property_readonly("config", [](const Checkpoint& c) { return c.config; })
      .def("save", [](const Checkpoint& c, const std::string& path) { save_checkpoint(c, path); })
      .def_static("load", [](const std::string& path) { return load_checkpoint(path); });

  m.def(
      "gen_synthetic",
      [](std::size_t num_classes, std::size_t dim, std::size_t samples_per_class,
         double intra_spread, std::uint64_t seed, bool heteroscedastic, double sigma_factor,
         double axis_factor) {
        SyntheticConfig cfg;
        cfg.num_classes = num_classes;
        cfg.dim = dim;
        cfg.samples_per_class = samples_per_class;
        cfg.intra_spread = intra_spread;
        cfg.seed = seed;
        cfg.heteroscedastic = heteroscedastic;
        cfg.sigma_factor = sigma_factor;
        cfg.axis_factor = axis_factor;
        return gen_synthetic(cfg);
      },
      py::arg("num_classes") = 100, py::arg("dim") = 16, py::arg("samples_per_class") = 50,
      py::arg("intra_spread") = 0.1, py::arg("seed") = 0, py::arg("heteroscedastic") = false,
      py::arg("sigma_factor") = 3.0, py::arg("axis_factor") = 2.0);

  m.def(
      "meta_train",
      [](const SplitDataset& ds, const TrainConfig& cfg) {
        TrainResult r = meta_train(ds, cfg);
        py::list log;
        for (const TrainLogRow& row : r.log.rows) {
          py::dict d;
          d["iteration"] = row.iteration;
          d["loss"] = row.loss;
          d["cross_entropy"] = row.cross_entropy;
          d["entropy"] = row.entropy;
          d["lr"] = row.lr;
          d["validation_accuracy"] = row.validation_accuracy;
          log.append(d);
        }
        py::dict out;
        out["checkpoint"] = r.best;
        out["final"] = r.final_state;
        out["log"] = log;
        return out;
      },
      py::arg("dataset"), py::arg("config"));

  m.def("protonet_train", &protonet_train, py::arg("dataset"), py::arg("config"));

  m.def(
      "evaluate",
      [](const Checkpoint& ckpt, const SplitDataset& ds, std::size_t ways, std::size_t shots,
         std::size_t queries, std::size_t episodes, std::uint64_t seed, std::size_t workers,
         const std::string& method, const std::string& split) {
        EvalScenario sc = make_scenario(ways, shots, queries, episodes, seed, workers, split);
        if (ckpt.model_kind == "protonet") return report_to_dict(protonet_eval(ckpt, ds, sc));
        return report_to_dict(evaluate(ckpt, ds, sc, parse_method(method)));
      },
      py::arg("checkpoint"), py::arg("dataset"), py::arg("ways") = 5, py::arg("shots") = 1,
      py::arg("queries") = 30, py::arg("episodes") = 2000, py::arg("seed") = 0,
      py::arg("workers") = 1, py::arg("method") = "mean", py::arg("split") = "NOVEL");

  m.def(
      "embed_rows",
      [](const Checkpoint& ckpt, const std::vector<std::vector<double>>& rows) {
        Rng rng = make_rng(0, 0);
        return tensor_to_rows(embed(ckpt.embedding, rows_to_tensor(rows), EmbedMode::kEval, rng));
      },
      py::arg("checkpoint"), py::arg("rows"), "Unit-sphere embeddings (eval mode).");

  m.def(
      "chi",
      [](const std::vector<double>& z, const std::vector<double>& c,
         const std::vector<std::vector<double>>& W, double s) {
        Tensor Wt = rows_to_tensor(W);
        MetricMap map{Wt, Wt.rows(), Wt.cols()};
        return chi(Tensor::vector(z), Tensor::vector(c), map, s);
      },
      py::arg("z"), py::arg("c"), py::arg("W"), py::arg("s") = 1.0,
      "Membership discriminant ||s*normalize(Wz) - s*c||^2.");

  m.def(
      "posterior",
      [](const std::vector<double>& z, const std::vector<std::vector<double>>& prototypes,
         const std::vector<std::vector<double>>& W, double s) {
        Tensor Wt = rows_to_tensor(W);
        MetricMap map{Wt, Wt.rows(), Wt.cols()};
        PrototypeTable table;
        table.vectors = rows_to_tensor(prototypes);
        table.class_ids.resize(prototypes.size());
        for (std::size_t i = 0; i < prototypes.size(); ++i)
          table.class_ids[i] = std::int64_t(i);
        table.normalized = true;
        return posterior(Tensor::vector(z), table, map, s);
      },
      py::arg("z"), py::arg("prototypes"), py::arg("W"), py::arg("s") = 1.0,
      "Softmax of -chi over the prototype rows.");

  m.def(
      "collapse_demo",
      [](std::size_t points, std::size_t dim, std::size_t steps, double lr, std::uint64_t seed) {
        CollapseTrajectory t = collapse_demo(points, dim, steps, lr, seed);
        py::dict d;
        std::vector<double> loss, spread;
        loss.reserve(t.steps.size());
        spread.reserve(t.steps.size());
        for (const CollapseStep& s : t.steps) {
          loss.push_back(s.loss);
          spread.push_back(s.spread);
        }
        d["loss"] = loss;
        d["spread"] = spread;
        d["diverged"] = t.diverged;
        d["final_loss"] = t.final_loss();
        d["final_spread"] = t.final_spread();
        return d;
      },
      py::arg("points") = 10, py::arg("dim") = 2, py::arg("steps") = 2000, py::arg("lr") = 0.1,
      py::arg("seed") = 0);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, double tol) {
        GradCheckReport r = gradcheck_suite(seed);
        py::dict d;
        d["max_rel_err"] = r.max_rel_err;
        d["checks"] = r.entries.size();
        d["ok"] = r.ok(tol);
        return d;
      },
      py::arg("seed") = 0, py::arg("tol") = 1e-4);
}
