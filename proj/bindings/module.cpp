#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hierbayes/errors.hpp"
#include "hierbayes/estimators.hpp"
#include "hierbayes/runner.hpp"

namespace py = pybind11;
using namespace hierbayes;

namespace {

ColumnSpec make_columns(const std::string& unit, const std::string& group,
                        const std::string& response,
                        const std::optional<std::string>& second,
                        const std::optional<std::string>& covariate,
                        const std::optional<std::string>& schema) {
  ColumnSpec columns;
  columns.unit = unit;
  columns.group = group;
  columns.response = response;
  if (second) columns.second = *second;
  if (covariate) columns.covariate = *covariate;
  if (schema) columns.schema_file = *schema;
  return columns;
}

}  // namespace

PYBIND11_MODULE(_hierbayes, m) {
  m.doc() = "Hierarchical Bayesian location/scale and regression models";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);

  m.def("known_model_tags", [] { return known_model_tags(); },
        "Model tags accepted by fit().");

  m.def(
      "fit",
      [](const std::string& data, const std::string& model, const std::string& out,
         std::uint64_t seed, int chains, long iterations, long burn_in, long thin,
         std::uint64_t stream_offset, const std::string& nu_strategy,
         const std::string& noise, bool drop_nonpositive, bool aggregate_units,
         bool force, const std::string& unit, const std::string& group,
         const std::string& response, const std::optional<std::string>& second,
         const std::optional<std::string>& covariate,
         const std::optional<std::string>& schema) {
        FitRequest request;
        request.data_path = data;
        request.model = model;
        request.out_dir = out;
        request.config.seed = seed;
        request.config.chains = chains;
        request.config.iterations = iterations;
        request.config.burn_in = burn_in;
        request.config.thin = thin;
        request.config.stream_offset = stream_offset;
        request.nu_strategy = nu_strategy;
        request.noise = noise;
        request.drop_nonpositive = drop_nonpositive;
        request.aggregate_by_unit = aggregate_units;
        request.force = force;
        request.columns = make_columns(unit, group, response, second, covariate, schema);
        request.command_line = "python fit";
        const FitOutcome outcome = run_fit(request);
        py::dict result;
        result["out_dir"] = outcome.out_dir;
        result["converged"] = outcome.converged;
        result["max_rhat"] = outcome.diagnostics.max_rhat;
        result["min_ess"] = outcome.diagnostics.min_ess;
        return result;
      },
      py::arg("data"), py::arg("model"), py::arg("out"), py::arg("seed"),
      py::kw_only(), py::arg("chains") = 4, py::arg("iterations") = 5000,
      py::arg("burn_in") = 2500, py::arg("thin") = 1, py::arg("stream_offset") = 0,
      py::arg("nu_strategy") = "fixed", py::arg("noise") = "laplace",
      py::arg("drop_nonpositive") = false, py::arg("aggregate_units") = false,
      py::arg("force") = false, py::arg("unit") = "unit", py::arg("group") = "group",
      py::arg("response") = "response", py::arg("second") = py::none(),
      py::arg("covariate") = py::none(), py::arg("schema") = py::none(),
      "Sample a model's posterior and write the fit artifacts into out/.");

  m.def(
      "estimate",
      [](const std::string& data, const std::string& out, bool drop_nonpositive,
         bool aggregate_units, const std::string& unit, const std::string& group,
         const std::string& response, const std::optional<std::string>& second,
         const std::optional<std::string>& covariate,
         const std::optional<std::string>& schema) {
        EstimateRequest request;
        request.data_path = data;
        request.out_dir = out;
        request.drop_nonpositive = drop_nonpositive;
        request.aggregate_by_unit = aggregate_units;
        request.columns = make_columns(unit, group, response, second, covariate, schema);
        request.command_line = "python estimate";
        run_estimate(request);
        return out;
      },
      py::arg("data"), py::arg("out"), py::kw_only(),
      py::arg("drop_nonpositive") = false, py::arg("aggregate_units") = false,
      py::arg("unit") = "unit", py::arg("group") = "group",
      py::arg("response") = "response", py::arg("second") = py::none(),
      py::arg("covariate") = py::none(), py::arg("schema") = py::none(),
      "Write closed-form group summaries and estimates into out/.");

  m.def(
      "simulate",
      [](const std::string& spec, const std::string& data_out,
         const std::string& truth_out, std::uint64_t seed) {
        SimulateRequest request;
        request.spec_path = spec;
        request.out_data = data_out;
        request.out_truth = truth_out;
        request.seed = seed;
        request.command_line = "python simulate";
        run_simulate(request);
      },
      py::arg("spec"), py::arg("data_out"), py::arg("truth_out"), py::arg("seed"),
      "Generate a synthetic dataset plus generating truth from a JSON spec.");

  m.def(
      "compare",
      [](const std::vector<std::string>& fit_dirs, const std::string& out,
         bool allow_incomparable, bool watanabe) {
        CompareRequest request;
        request.fit_dirs = fit_dirs;
        request.out_dir = out;
        request.allow_incomparable = allow_incomparable;
        request.watanabe_scale = watanabe;
        request.command_line = "python compare";
        return run_compare(request);
      },
      py::arg("fit_dirs"), py::arg("out"), py::kw_only(),
      py::arg("allow_incomparable") = false, py::arg("watanabe") = false,
      "Rank fit directories by WAIC; returns the comparison table text.");

  m.def(
      "report",
      [](const std::string& fit_dir, const std::string& out, int grid_points,
         double level) {
        ReportRequest request;
        request.fit_dir = fit_dir;
        request.out_dir = out;
        request.grid_points = grid_points;
        request.level = level;
        request.command_line = "python report";
        run_report(request);
        return out;
      },
      py::arg("fit_dir"), py::arg("out"), py::kw_only(), py::arg("grid_points") = 200,
      py::arg("level") = 0.95,
      "Write interval and curve CSVs for a fit directory into out/.");

  m.def(
      "moment_estimates",
      [](const std::vector<double>& s2_by_group) {
        const MomentEstimates est = moment_estimates(s2_by_group);
        py::dict result;
        result["mean_s2"] = est.mean_s2;
        result["var_s2"] = est.var_s2;
        result["nu_hat"] = est.nu_hat;
        result["rho2_hat"] = est.rho2_hat;
        return result;
      },
      py::arg("s2_by_group"),
      "Moment-match a scaled inverse chi-square to per-group sample variances.");
}
