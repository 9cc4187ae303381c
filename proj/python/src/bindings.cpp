#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <utility>
#include <vector>

#include "cretta/experiment.hpp"
#include "cretta/metrics.hpp"
#include "cretta/model.hpp"
#include "cretta/objectives.hpp"
#include "cretta/record.hpp"

namespace py = pybind11;
using namespace cretta;

namespace {

Tensor matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("expected at least one row");
  const std::size_t k = rows.front().size();
  std::vector<double> flat;
  flat.reserve(rows.size() * k);
  for (const auto& r : rows) {
    if (r.size() != k) throw std::invalid_argument("rows have different lengths");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor::from({rows.size(), k}, flat);
}

std::vector<std::string> record_lines(const ExperimentResult& r, const std::string& arm,
                                      const std::string& condition, std::uint64_t seed) {
  std::vector<std::string> out;
  for (const auto& rec : r.cell(arm, condition, seed).records)
    out.push_back(record_to_json_line(rec));
  return out;
}

}  // namespace

PYBIND11_MODULE(_cretta, m) {
  m.doc() = "Native core of the cretta package";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("preset", [](const std::string& kind) {
    return config_to_json(preset(parse_experiment_kind(kind)));
  });
  m.def("canonical_config", [](const std::string& text) {
    return config_to_json(parse_config(text));
  });

  py::class_<ExperimentResult>(m, "ExperimentResult")
      .def_property_readonly("config",
                             [](const ExperimentResult& r) { return config_to_json(r.config); })
      .def_property_readonly("arms",
                             [](const ExperimentResult& r) {
                               std::vector<std::string> names;
                               for (const auto& a : r.arms) names.push_back(a.name);
                               return names;
                             })
      .def_property_readonly("conditions",
                             [](const ExperimentResult& r) {
                               std::vector<std::string> labels;
                               for (const auto& c : r.conditions) labels.push_back(c.label());
                               return labels;
                             })
      .def_property_readonly("seeds", [](const ExperimentResult& r) { return r.config.seeds; })
      .def("any_failed", &ExperimentResult::any_failed)
      .def("record_lines", &record_lines, py::arg("arm"), py::arg("condition"), py::arg("seed"))
      .def("error",
           [](const ExperimentResult& r, const std::string& arm, const std::string& condition,
              std::uint64_t seed) { return r.cell(arm, condition, seed).error; },
           py::arg("arm"), py::arg("condition"), py::arg("seed"))
      .def("summary_tsv", &summary_tsv)
      .def("plot_tsv",
           [](const ExperimentResult& r, const std::vector<std::string>& metrics) {
             return plot_tsv(r, metrics.empty() ? plot_metrics() : metrics);
           },
           py::arg("metrics") = std::vector<std::string>{})
      .def("write",
           [](const ExperimentResult& r, const std::string& root, bool overwrite) {
             write_results(r, root, overwrite);
           },
           py::arg("root"), py::arg("overwrite") = false);

  m.def("run_experiment",
        [](const std::string& config_text, std::size_t threads) {
          ExperimentConfig c = parse_config(config_text);
          py::gil_scoped_release release;
          return run_experiment(c, threads);
        },
        py::arg("config"), py::arg("threads") = 1);
  m.def("verify_results", [](const std::string& dir) {
    std::string report;
    const bool ok = verify_results(dir, report);
    return std::make_pair(ok, report);
  });

  m.def("cretta_logit", &cretta_logit, py::arg("e_phi_s"), py::arg("e_phi_t"),
        py::arg("e_theta_s"), py::arg("e_theta_t"), py::arg("beta"));
  m.def("gradient_weight", &gradient_weight, py::arg("logit"));
  m.def("energy",
        [](const std::vector<std::vector<double>>& logits, double temperature) {
          const Tensor e = energy(matrix(logits), temperature);
          return std::vector<double>(e.data().begin(), e.data().end());
        },
        py::arg("logits"), py::arg("temperature") = 1.0);
  m.def("energy_logit_grad",
        [](const std::vector<double>& logits, double temperature) {
          return energy_logit_grad(logits, temperature);
        },
        py::arg("logits"), py::arg("temperature") = 1.0);
  m.def("ece",
        [](std::vector<double> confidences, std::vector<bool> correct, std::size_t bins) {
          return ece({std::move(confidences), std::move(correct), bins});
        },
        py::arg("confidences"), py::arg("correct"), py::arg("bins") = 10);
  m.def("mce",
        [](std::vector<std::vector<double>> model_error,
           std::vector<std::vector<double>> base_error) {
          return mce({std::move(model_error), std::move(base_error)});
        },
        py::arg("model_error"), py::arg("base_error"));
  m.def("spearman", [](const std::vector<double>& a, const std::vector<double>& b) {
    return spearman(a, b);
  });
}
