#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "twoscale/config.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/harness.hpp"
#include "twoscale/models.hpp"
#include "twoscale/parallel.hpp"

namespace py = pybind11;
using namespace twoscale;

namespace {

int field_variables(PresetId preset) { return preset == PresetId::kBeam ? 1 : 2; }

py::dict row_dict(const ReportRow& r) {
  py::dict d;
  d["preset"] = r.preset;
  d["K"] = r.K;
  d["eps"] = r.eps;
  d["norm"] = r.norm;
  d["error"] = r.error;
  d["slope_fit"] = r.slope;
  d["r_squared"] = r.r_squared;
  d["w_closure_residual"] = r.w_closure_residual;
  d["flow_residual"] = r.flow_residual;
  d["norm_drift"] = r.norm_drift;
  d["engine_seconds"] = r.engine_seconds;
  d["reference_seconds"] = r.reference_seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-scale expansion engine and convergence harness";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());
  py::register_exception<DegenerateFlowError>(m, "DegenerateFlowError", base.ptr());
  py::register_exception<SequencingError>(m, "SequencingError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("presets", [] {
    py::list out;
    for (const auto& p : preset_catalog()) {
      py::dict d;
      d["name"] = p.name;
      d["dims"] = p.dims;
      d["theta"] = p.theta;
      d["variables"] = p.variables;
      d["components"] = p.components;
      d["description"] = p.description;
      out.append(d);
    }
    return out;
  });
  m.def("default_fields", [](const std::string& preset) {
    std::vector<std::vector<std::string>> out;
    for (const auto& order : default_preset_fields(parse_preset(preset)).orders) {
      auto& comps = out.emplace_back();
      for (const auto& f : order) comps.push_back(f.describe());
    }
    return out;
  });
  m.def("set_workers", &set_default_workers, py::arg("workers"));
  m.def("parse_number", &parse_number, py::arg("text"));

  py::class_<SlopeFit>(m, "SlopeFit")
      .def_readonly("K", &SlopeFit::K)
      .def_readonly("slope", &SlopeFit::slope)
      .def_readonly("r_squared", &SlopeFit::r_squared)
      .def_readonly("points", &SlopeFit::points)
      .def_readonly("reliable", &SlopeFit::reliable)
      .def_readonly("dropped_largest", &SlopeFit::dropped_largest)
      .def("__repr__", [](const SlopeFit& f) {
        return "SlopeFit(K=" + std::to_string(f.K) + ", slope=" + std::to_string(f.slope) +
               ", r_squared=" + std::to_string(f.r_squared) + ")";
      });
  m.def("fit_slope", &fit_slope, py::arg("eps"), py::arg("errors"), py::arg("K") = 0);

  py::class_<SweepConfig>(m, "SweepConfig")
      .def(py::init<>())
      .def_property(
          "preset", [](const SweepConfig& c) { return preset_info(c.preset).name; },
          [](SweepConfig& c, const std::string& name) { c.preset = parse_preset(name); })
      .def_property(
          "fields",
          [](const SweepConfig& c) {
            std::vector<std::vector<std::string>> out;
            for (const auto& order : c.fields.orders) {
              auto& comps = out.emplace_back();
              for (const auto& f : order) comps.push_back(f.describe());
            }
            return out;
          },
          [](SweepConfig& c, const std::vector<std::vector<std::string>>& orders) {
            PresetFields fields;
            for (const auto& order : orders) {
              auto& comps = fields.orders.emplace_back();
              for (const auto& text : order) {
                comps.push_back(parse_field_form(text, field_variables(c.preset)));
              }
            }
            c.fields = std::move(fields);
          },
          "Field forms per order; empty means the preset default")
      .def_readwrite("order", &SweepConfig::order)
      .def_readwrite("eps", &SweepConfig::eps)
      .def_property(
          "norm", [](const SweepConfig& c) { return norm_name(c.norm); },
          [](SweepConfig& c, const std::string& n) { c.norm = parse_norm(n); })
      .def_readwrite("horizon", &SweepConfig::horizon)
      .def_readwrite("trace", &SweepConfig::trace)
      .def_readwrite("points", &SweepConfig::points)
      .def_readwrite("tau_points", &SweepConfig::tau_points)
      .def_readwrite("checkpoints", &SweepConfig::checkpoints)
      .def_readwrite("n_fast", &SweepConfig::n_fast)
      .def_property(
          "flow", [](const SweepConfig& c) { return c.flow_kind == FlowKind::kAnalytic ? "analytic" : "numeric"; },
          [](SweepConfig& c, const std::string& kind) {
            if (kind == "analytic") c.flow_kind = FlowKind::kAnalytic;
            else if (kind == "numeric") c.flow_kind = FlowKind::kNumeric;
            else throw ConfigError("flow must be 'analytic' or 'numeric', got '" + kind + "'");
          })
      .def_readwrite("substeps_per_unit", &SweepConfig::substeps_per_unit)
      .def_property(
          "initial_center", [](const SweepConfig& c) { return c.initial.center; },
          [](SweepConfig& c, const std::vector<double>& v) { c.initial.center = v; })
      .def_property(
          "initial_width", [](const SweepConfig& c) { return c.initial.width; },
          [](SweepConfig& c, double w) { c.initial.width = w; })
      .def_property(
          "initial_amplitude", [](const SweepConfig& c) { return c.initial.amplitude; },
          [](SweepConfig& c, double a) { c.initial.amplitude = a; })
      .def_readwrite("workers", &SweepConfig::workers)
      .def_readwrite("record_timings", &SweepConfig::record_timings)
      .def("validate", [](const SweepConfig& c) { validate(c); });

  m.def("load_config", [](const std::string& path) { return load_run_config(path).sweep; },
        py::arg("path"));
  m.def("parse_config",
        [](const std::string& text) { return parse_run_config(text, "<string>").sweep; },
        py::arg("text"));

  py::class_<ConvergenceReport>(m, "ConvergenceReport")
      .def_property_readonly("rows",
                             [](const ConvergenceReport& r) {
                               py::list out;
                               for (const auto& row : r.rows) out.append(row_dict(row));
                               return out;
                             })
      .def_readonly("fits", &ConvergenceReport::fits)
      .def_readonly("failures", &ConvergenceReport::failures)
      .def_readonly("engine_seconds", &ConvergenceReport::engine_seconds)
      .def("error", &ConvergenceReport::error, py::arg("K"), py::arg("eps"))
      .def("to_csv", [](const ConvergenceReport& r) { return format_report(r); })
      .def("write", [](const ConvergenceReport& r, const std::string& path) { write_report(r, path); },
           py::arg("path"));

  m.def("run_sweep", &run_sweep, py::arg("config"), py::call_guard<py::gil_scoped_release>());
  m.def("read_report", &read_report, py::arg("path"));

  m.def(
      "run_invariants",
      [](const std::string& preset, int points, int workers) {
        InvariantConfig ic;
        ic.preset = parse_preset(preset);
        ic.points = points;
        ic.workers = workers;
        InvariantLedger ledger;
        {
          py::gil_scoped_release release;
          ledger = run_invariants(ic);
        }
        py::list out;
        for (const auto& c : ledger.checks) {
          py::dict d;
          d["name"] = c.name;
          d["passed"] = c.passed;
          d["value"] = c.value;
          d["tolerance"] = c.tolerance;
          d["detail"] = c.detail;
          out.append(d);
        }
        return out;
      },
      py::arg("preset"), py::arg("points") = 0, py::arg("workers") = 0);
}
