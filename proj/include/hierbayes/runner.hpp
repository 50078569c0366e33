#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hierbayes/data.hpp"
#include "hierbayes/mcmc.hpp"
#include "hierbayes/model.hpp"

namespace hierbayes {

// Column declarations as they arrive from flags; resolve() turns them into a
// TableSchema, reading schema_file (a flat JSON object of column roles) when
// one is given.
struct ColumnSpec {
  std::string unit = "unit";
  std::string group = "group";
  std::string response = "response";
  std::string second;
  std::string covariate;
  std::string education;
  std::string schema_file;

  TableSchema resolve() const;
};

const std::vector<std::string>& known_model_tags();

struct FitRequest {
  std::string data_path;
  std::string model;
  std::string out_dir;
  ColumnSpec columns;
  ChainConfig config;
  std::string nu_strategy = "fixed";
  std::string noise = "laplace";  // regression:varying-both only
  double quantile = 0.5;
  bool drop_nonpositive = false;
  bool aggregate_by_unit = false;
  bool force = false;  // report convergence failures instead of throwing
  std::string command_line;
};

struct FitOutcome {
  std::string out_dir;
  Diagnostics diagnostics;
  bool converged = true;
};

// Loads, preprocesses, fits, gates on convergence and writes the artifact
// set: manifest.json, summary.json, diagnostics.json, waic.json and one
// draws_chain<i>.csv per chain.
FitOutcome run_fit(const FitRequest& request);

struct EstimateRequest {
  std::string data_path;
  std::string out_dir;
  ColumnSpec columns;
  bool drop_nonpositive = false;
  bool aggregate_by_unit = false;
  std::string command_line;
};

// Writes summaries.json (per-group moments) and estimates.json (variance
// decomposition, moment matching, tau profile).
void run_estimate(const EstimateRequest& request);

struct SimulateRequest {
  std::string spec_path;
  std::string out_data;
  std::string out_truth;
  std::uint64_t seed = 0;  // overrides the spec's seed
  std::string command_line;
};

void run_simulate(const SimulateRequest& request);

struct CompareRequest {
  std::vector<std::string> fit_dirs;
  std::string out_dir;
  bool allow_incomparable = false;
  bool watanabe_scale = false;
  std::string command_line;
};

// Loads each directory's waic.json, ranks them, writes waic_table.csv and
// waic_intervals.csv and returns the text table.
std::string run_compare(const CompareRequest& request);

struct ReportRequest {
  std::string fit_dir;
  std::string out_dir;
  int grid_points = 200;
  double level = 0.95;
  std::string command_line;
};

// Emits plot-ready CSVs for the fitted model's figure family.
void run_report(const ReportRequest& request);

// Rebuilds the draws and recorded constants of a fit directory; the manifest
// must be present and intact.
ModelFit load_fit_artifacts(const std::string& fit_dir);

}  // namespace hierbayes
