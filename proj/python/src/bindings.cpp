#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "shapeformer/data_io.hpp"
#include "shapeformer/discovery.hpp"
#include "shapeformer/error.hpp"
#include "shapeformer/metrics.hpp"
#include "shapeformer/train.hpp"

namespace py = pybind11;
using namespace shapeformer;

namespace {

using Json = nlohmann::json;

// Python dicts cross the boundary as JSON text; the package wrapper does the dumps/loads.
TrainConfig config_from(const std::string& text) { return train_config_from_json(Json::parse(text)); }

py::array_t<double> values_of(const Dataset& d) {
  py::array_t<double> out({d.size(), d.num_variables, d.series_length});
  auto* p = out.mutable_data();
  for (const auto& inst : d.instances) p = std::copy(inst.series.values().begin(), inst.series.values().end(), p);
  return out;
}

Dataset dataset_from(py::array_t<double, py::array::c_style | py::array::forcecast> values,
                     const std::vector<std::size_t>& labels, const std::vector<std::string>& classes,
                     const std::string& name) {
  if (values.ndim() != 3) throw InputError("values must have shape (n, variables, length)");
  const std::size_t n = values.shape(0), V = values.shape(1), T = values.shape(2);
  if (labels.size() != n) throw InputError("labels must have one entry per instance");
  Dataset d;
  d.name = name;
  d.classes = classes;
  d.num_variables = V;
  d.series_length = T;
  const double* p = values.data();
  for (std::size_t i = 0; i < n; ++i, p += V * T)
    d.instances.push_back({TimeSeries(std::to_string(i), V, T, std::vector<double>(p, p + V * T)), labels[i]});
  d.validate();
  return d;
}

struct PyModel {
  Model<float> model;
  TrainConfig config;
  std::optional<NormalizationStats> normalization;
  std::string report;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Shapelet transformer core";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ArtifactMismatch>(m, "ArtifactMismatch", PyExc_RuntimeError);
  py::register_exception<VocabularyMismatch>(m, "VocabularyMismatch", PyExc_RuntimeError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_RuntimeError);

  py::enum_<SplitTag>(m, "SplitTag")
      .value("unspecified", SplitTag::unspecified)
      .value("train", SplitTag::train)
      .value("validation", SplitTag::validation)
      .value("test", SplitTag::test);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("name", &Dataset::name)
      .def_readonly("classes", &Dataset::classes)
      .def_readonly("num_variables", &Dataset::num_variables)
      .def_readonly("series_length", &Dataset::series_length)
      .def_readwrite("split", &Dataset::split)
      .def("__len__", &Dataset::size)
      .def_property_readonly("values", &values_of)
      .def_property_readonly("labels",
                             [](const Dataset& d) {
                               std::vector<std::size_t> y;
                               for (const auto& i : d.instances) y.push_back(i.label);
                               return y;
                             })
      .def("class_counts", &Dataset::class_counts);

  m.def("load_ts", &parse_ts_file, py::arg("path"));
  m.def("write_ts", &write_ts_file, py::arg("dataset"), py::arg("path"));
  m.def("dataset_from_array", &dataset_from, py::arg("values"), py::arg("labels"), py::arg("classes"),
        py::arg("name") = "array");
  m.def(
      "normalize",
      [](const Dataset& d) {
        auto [out, stats] = normalize(d);
        return py::make_tuple(out, stats.mean, stats.stddev);
      },
      py::arg("dataset"));
  m.def("split_train_val", &split_train_val, py::arg("dataset"), py::arg("fraction"), py::arg("seed"));

  m.def("cid", [](std::vector<double> a, std::vector<double> b) { return metrics::cid(a, b); });
  m.def("psd", [](std::vector<double> s, std::vector<double> sub) { return metrics::psd(s, sub); });
  m.def(
      "information_gain",
      [](std::vector<double> d, std::vector<bool> y) {
        auto r = metrics::information_gain(d, y);
        return py::make_tuple(r.gain, r.threshold);
      },
      py::arg("distances"), py::arg("labels"));
  m.def("extract_pips", [](std::vector<double> s, std::size_t npip) { return extract_pips(s, npip); });

  py::class_<ShapeletPool>(m, "ShapeletPool")
      .def("__len__", &ShapeletPool::size)
      .def_readonly("classes", &ShapeletPool::classes)
      .def_property_readonly("digest", [](const ShapeletPool& p) { return pool_digest(p); })
      .def("to_json", [](const ShapeletPool& p) { return pool_to_text(p); })
      .def("save", [](const ShapeletPool& p, const std::filesystem::path& path) { save_pool(p, path); });
  m.def("load_pool", &load_pool, py::arg("path"));
  m.def(
      "discover",
      [](const Dataset& d, const std::string& config) { return discover(d, config_from(config).discovery_config()).pool; },
      py::arg("dataset"), py::arg("config"));

  py::class_<PyModel>(m, "Model")
      .def_property_readonly("classes", [](const PyModel& pm) { return pm.model.pool().classes; })
      .def_property_readonly("parameter_count", [](const PyModel& pm) { return pm.model.parameter_count(); })
      .def_property_readonly("report", [](const PyModel& pm) { return pm.report; })
      .def(
          "predict",
          [](PyModel& pm, const Dataset& d) {
            std::vector<std::size_t> idx(d.size());
            std::iota(idx.begin(), idx.end(), 0);
            auto batch = batch_of(d, idx);
            return pm.model.predict(batch);
          },
          py::arg("dataset"))
      .def(
          "evaluate",
          [](PyModel& pm, const Dataset& d) { return to_json(evaluate(pm.model, d), d.classes).dump(); },
          py::arg("dataset"))
      .def(
          "save",
          [](const PyModel& pm, const std::filesystem::path& dir) {
            RunReport r = pm.report.empty() ? RunReport{} : run_report_from_json(Json::parse(pm.report));
            save_checkpoint(dir, pm.model, pm.config, pm.normalization.value_or(NormalizationStats{}), r);
          },
          py::arg("path"));

  m.def(
      "train",
      [](const Dataset& train_set, const Dataset* validation, const ShapeletPool& pool, const std::string& config) {
        py::gil_scoped_release release;
        auto cfg = config_from(config);
        auto r = train(train_set, validation, pool, cfg);
        return PyModel{std::move(r.model), cfg, std::nullopt, to_json(r.report).dump()};
      },
      py::arg("train"), py::arg("validation"), py::arg("pool"), py::arg("config"));
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& dir) {
        auto ck = load_checkpoint(dir);
        return PyModel{std::move(ck.model), ck.config, ck.normalization, to_json(ck.report).dump()};
      },
      py::arg("path"));
  m.def(
      "run_experiment",
      [](const Dataset& train_set, const Dataset& test_set, const std::string& config) {
        py::gil_scoped_release release;
        auto cfg = config_from(config);
        auto r = run_experiment(train_set, test_set, cfg);
        Json out{{"pool_digest", pool_digest(r.pool)},
                 {"report", to_json(r.training.report)},
                 {"test", to_json(r.test, test_set.classes)}};
        return out.dump();
      },
      py::arg("train"), py::arg("test"), py::arg("config"));
  m.def("default_config", [] { return to_json(TrainConfig{}).dump(); });
}
