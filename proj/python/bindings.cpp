#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "debias/config.hpp"
#include "debias/dataset.hpp"
#include "debias/error.hpp"
#include "debias/methods.hpp"
#include "debias/metrics.hpp"
#include "debias/runner.hpp"
#include "debias/som.hpp"

namespace py = pybind11;
using namespace debias;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor2 to_tensor(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Tensor2(rows, cols, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor2& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
  return out;
}

py::dict metrics_dict(const SubgroupMetrics& m) {
  py::dict d;
  d["values"] = m.values;
  d["counts"] = m.counts;
  d["average"] = m.average;
  d["worst"] = m.worst;
  d["best"] = m.best;
  d["worst_group"] = m.worst_group;
  d["best_group"] = m.best_group;
  return d;
}

py::dict dataset_dict(const Dataset& ds) {
  py::dict d;
  d["features"] = to_array(ds.features());
  d["labels"] = ds.labels();
  d["attributes"] = ds.attributes();
  d["groups"] = ds.groups();
  return d;
}

}  // namespace

PYBIND11_MODULE(_debias, m) {
  m.doc() = "Subgroup-robust training, representation analysis and metrics";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<SchemaError>(m, "SchemaError", base.ptr());

  m.def(
      "generate",
      [](std::vector<std::vector<std::size_t>> counts, std::size_t dim_core, std::size_t dim_spurious,
         std::uint64_t seed, double core_separation, double spurious_strength, double noise_sigma,
         double hard_fraction) {
        SubgroupSpec s;
        s.num_classes = static_cast<int>(counts.size());
        s.num_attributes = counts.empty() ? 0 : static_cast<int>(counts.front().size());
        s.counts = std::move(counts);
        s.core_separation = core_separation;
        s.spurious_strength = spurious_strength;
        s.noise_sigma = noise_sigma;
        s.hard_fraction = hard_fraction;
        return dataset_dict(generate(s, dim_core, dim_spurious, seed));
      },
      py::arg("counts"), py::arg("dim_core") = 4, py::arg("dim_spurious") = 4, py::arg("seed") = 0,
      py::arg("core_separation") = 2.0, py::arg("spurious_strength") = 4.0, py::arg("noise_sigma") = 1.0,
      py::arg("hard_fraction") = 0.0,
      "Synthetic dataset with counts[y][a] rows per subgroup.");

  m.def(
      "subgroup_accuracy",
      [](std::vector<int> pred, std::vector<int> labels, std::vector<int> groups, int num_groups) {
        return metrics_dict(subgroup_accuracy(pred, labels, groups, num_groups));
      },
      py::arg("predictions"), py::arg("labels"), py::arg("groups"), py::arg("num_groups"));

  m.def(
      "auc",
      [](std::vector<double> scores, std::vector<int> positive) {
        std::vector<std::uint8_t> p(positive.begin(), positive.end());
        return auc(scores, p);
      },
      py::arg("scores"), py::arg("positive"));

  m.def(
      "disparity",
      [](std::vector<std::optional<double>> values, std::vector<std::vector<int>> class_partition) {
        const DisparityReport r = disparity(summarize(std::move(values)), class_partition);
        py::dict d;
        d["delta_best_worst"] = r.delta_best_worst;
        d["delta_avg_worst"] = r.delta_avg_worst;
        d["per_class"] = r.per_class;
        d["class_mean"] = r.class_mean;
        return d;
      },
      py::arg("values"), py::arg("class_partition"));

  m.def(
      "gdro_weight_update",
      [](std::vector<double> q, std::vector<double> losses, double eta_q) {
        return gdro_weight_update(GroupWeights{std::move(q)}, losses, eta_q).q;
      },
      py::arg("q"), py::arg("losses"), py::arg("eta_q"));

  m.def(
      "som_fit",
      [](const Array& z, std::size_t height, std::size_t width, std::size_t epochs, double alpha0, double sigma0,
         std::uint64_t seed) {
        return to_array(som_fit(to_tensor(z), {height, width, epochs, alpha0, sigma0}, seed).prototypes);
      },
      py::arg("z"), py::arg("height") = 8, py::arg("width") = 8, py::arg("epochs") = 10, py::arg("alpha0") = 0.5,
      py::arg("sigma0") = 2.0, py::arg("seed") = 0, "Returns the (height*width, dim) prototype matrix.");

  m.def(
      "som_purity",
      [](const Array& prototypes, std::size_t height, std::size_t width, const Array& z, std::vector<int> groups,
         int num_groups) {
        SomGrid g{height, width, to_tensor(prototypes)};
        if (g.prototypes.rows() != g.nodes()) throw ShapeError("prototypes must have height*width rows");
        const Occupancy occ = som_assign(g, to_tensor(z), groups, num_groups);
        const PurityReport r = purity(occ);
        py::dict d;
        d["overall"] = r.overall;
        d["unweighted"] = r.unweighted;
        d["per_node"] = r.per_node;
        d["majority"] = r.majority;
        d["bmu"] = occ.bmu;
        return d;
      },
      py::arg("prototypes"), py::arg("height"), py::arg("width"), py::arg("z"), py::arg("groups"),
      py::arg("num_groups"));

  m.def(
      "run_cell",
      [](const std::string& config_json, const std::string& method, std::uint64_t seed) {
        const RunConfig cfg = parse_run_config(config_json);
        for (const auto& entry : cfg.methods) {
          if (entry.name != method) continue;
          CellArtifacts a;
          {
            py::gil_scoped_release release;
            a = run_cell(cfg, entry, seed);
          }
          if (!a.ok) throw Error(a.error);
          return a.cell_json;
        }
        throw ConfigError("method '" + method + "' not in config");
      },
      py::arg("config_json"), py::arg("method"), py::arg("seed"),
      "Trains and evaluates one cell in memory, returning its JSON document.");

  m.def(
      "run",
      [](const std::string& config_path) {
        std::ostringstream out;
        std::ostringstream err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_command(config_path, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("config_path"), "Same as `debias run`; returns (exit_code, stdout, stderr).");

  m.def("compare", &compare_records, py::arg("record_paths"));
  m.def("plot_data", &plot_data, py::arg("record_path"), py::arg("kind"), py::arg("method") = std::nullopt,
        py::arg("seed") = std::nullopt);
}
