#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hierbayes/runner.hpp"

namespace {

// Flat JSON object as a config file: {"model": "hier-common", "chains": 4}.
// Keys are the long option names of the subcommand, without leading dashes.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(input);
    } catch (const nlohmann::json::parse_error& e) {
      throw CLI::ConfigError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.name = key;
      if (value.is_boolean()) {
        item.inputs = {value.get<bool>() ? "true" : "false"};
      } else if (value.is_string()) {
        item.inputs = {value.get<std::string>()};
      } else if (value.is_number()) {
        item.inputs = {value.dump()};
      } else if (value.is_array()) {
        for (const auto& e : value)
          item.inputs.push_back(e.is_string() ? e.get<std::string>() : e.dump());
      } else {
        throw CLI::ConfigError("config value for '" + key + "' must be a scalar or array");
      }
      items.push_back(std::move(item));
    }
    return items;
  }
};

std::string join_command(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    const std::string arg = argv[i];
    if (i) out += ' ';
    if (arg.empty() || arg.find_first_of(" \t\"'") != std::string::npos) {
      out += '\'';
      out += arg;
      out += '\'';
    } else {
      out += arg;
    }
  }
  return out;
}

std::string sanitize(const std::string& label) {
  std::string out;
  for (const char c : label) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '-';
    out += ok ? c : '_';
  }
  return out;
}

std::string stem_of(const std::string& path) {
  const std::string stem = std::filesystem::path(path).stem().string();
  return stem.empty() ? std::string("out") : stem;
}

void add_column_flags(CLI::App* cmd, hierbayes::ColumnSpec* columns) {
  cmd->add_option("--unit", columns->unit, "Unit (household) column name")
      ->capture_default_str();
  cmd->add_option("--group", columns->group, "Group (region) column name")
      ->capture_default_str();
  cmd->add_option("--response", columns->response, "Response column name")
      ->capture_default_str();
  cmd->add_option("--second", columns->second, "Second, non-nested cluster column name");
  cmd->add_option("--covariate", columns->covariate, "Numeric regressor column name");
  cmd->add_option("--education", columns->education,
                  "Education category column, expanded to years and level");
  cmd->add_option("--schema", columns->schema_file,
                  "JSON file mapping column roles to column names")
      ->check(CLI::ExistingFile);
}

// CLI11 only reads set_config files on the top-level app, so each subcommand
// carries a plain --config option that is applied after flag parsing; values
// given on the command line win because the config pass fills empty options
// only.
void add_config_file(CLI::App* cmd, std::string* path) {
  cmd->config_formatter(std::make_shared<JsonConfig>());
  cmd->allow_config_extras(false);  // typo'd keys are errors, not noise
  cmd->add_option("--config", *path, "JSON file of option values (long names as keys)")
      ->check(CLI::ExistingFile);
}

void apply_config_file(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  {
    std::ifstream peek(path);
    if (!peek) throw CLI::FileError::Missing(path);
    for (const auto& item : JsonConfig().from_config(peek))
      if (cmd->get_option_no_throw("--" + item.name) == nullptr)
        throw CLI::ConfigError("config key '" + item.name +
                               "' does not match any option of this subcommand");
  }
  std::ifstream in(path);
  cmd->parse_from_stream(in);
}

void add_preprocess_flags(CLI::App* cmd, bool* drop, bool* aggregate) {
  cmd->add_flag("--drop-nonpositive", *drop, "Drop rows with response <= 0");
  cmd->add_flag("--aggregate-units", *aggregate,
                "Collapse repeated unit rows to per-unit means");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Hierarchical Bayesian location/scale and regression models with WAIC "
      "comparison"};
  app.require_subcommand(1);
  const std::string command_line = join_command(argc, argv);

  hierbayes::FitRequest fit_req;
  fit_req.command_line = command_line;
  auto* fit = app.add_subcommand(
      "fit", "Sample a model's posterior and write the artifact directory");
  fit->add_option("data", fit_req.data_path, "CSV data table")
      ->required()
      ->check(CLI::ExistingFile);
  fit->add_option("--model", fit_req.model, "Model tag (required)")
      ->check(CLI::IsMember(hierbayes::known_model_tags()));
  fit->add_option("--seed", fit_req.config.seed,
                  "RNG seed (required; no silent nondeterminism)");
  fit->add_option("--out", fit_req.out_dir,
                  "Output directory (default <data>-<model>-fit)");
  fit->add_option("--chains", fit_req.config.chains, "Number of chains")
      ->capture_default_str();
  fit->add_option("--iterations", fit_req.config.iterations, "Sweeps per chain")
      ->capture_default_str();
  fit->add_option("--burn-in", fit_req.config.burn_in,
                  "Warmup sweeps discarded per chain")
      ->capture_default_str();
  fit->add_option("--thin", fit_req.config.thin, "Keep every thin-th sweep")
      ->capture_default_str();
  fit->add_option("--stream-offset", fit_req.config.stream_offset, "Base RNG stream id")
      ->capture_default_str();
  fit->add_option("--nu-strategy", fit_req.nu_strategy,
                  "hier-varying nu handling: fixed, fixed:<v>, power:<h>, exponential")
      ->capture_default_str();
  fit->add_option("--noise", fit_req.noise, "regression:varying-both noise family")
      ->check(CLI::IsMember(std::vector<std::string>{"laplace", "normal"}))
      ->capture_default_str();
  fit->add_option("--quantile", fit_req.quantile,
                  "Asymmetric-noise hook; only 0.5 is implemented")
      ->capture_default_str();
  fit->add_flag("--force", fit_req.force,
                "Write artifacts even when the convergence gate fails");
  add_preprocess_flags(fit, &fit_req.drop_nonpositive, &fit_req.aggregate_by_unit);
  add_column_flags(fit, &fit_req.columns);
  std::string fit_config;
  add_config_file(fit, &fit_config);

  hierbayes::EstimateRequest est_req;
  est_req.command_line = command_line;
  auto* estimate = app.add_subcommand(
      "estimate",
      "Group summaries, variance decomposition, moment matching and tau profile");
  estimate->add_option("data", est_req.data_path, "CSV data table")
      ->required()
      ->check(CLI::ExistingFile);
  estimate->add_option("--out", est_req.out_dir,
                       "Output directory (default <data>-estimate)");
  add_preprocess_flags(estimate, &est_req.drop_nonpositive, &est_req.aggregate_by_unit);
  add_column_flags(estimate, &est_req.columns);
  std::string est_config;
  add_config_file(estimate, &est_config);

  hierbayes::SimulateRequest sim_req;
  sim_req.command_line = command_line;
  auto* simulate =
      app.add_subcommand("simulate", "Draw a synthetic table from a generator spec");
  simulate->add_option("spec", sim_req.spec_path, "Generator spec JSON")
      ->required()
      ->check(CLI::ExistingFile);
  simulate->add_option("--seed", sim_req.seed, "RNG seed (required; overrides the spec)");
  simulate->add_option("--data-out", sim_req.out_data,
                       "Output CSV path (default <spec>-data.csv)");
  simulate->add_option("--truth-out", sim_req.out_truth,
                       "Output truth JSON path (default <spec>-truth.json)");
  std::string sim_config;
  add_config_file(simulate, &sim_config);

  hierbayes::CompareRequest cmp_req;
  cmp_req.command_line = command_line;
  auto* compare = app.add_subcommand("compare", "Rank fit directories by WAIC");
  compare->add_option("fits", cmp_req.fit_dirs, "Two or more fit output directories")
      ->required()
      ->expected(2, -1)
      ->check(CLI::ExistingDirectory);
  compare->add_option("--out", cmp_req.out_dir,
                      "Output directory (default waic-comparison)");
  compare->add_flag("--allow-incomparable", cmp_req.allow_incomparable,
                    "Rank fits even when their observation sets differ");
  compare->add_flag("--watanabe", cmp_req.watanabe_scale,
                    "Print the table on the unscaled elpd scale");
  std::string cmp_config;
  add_config_file(compare, &cmp_config);

  hierbayes::ReportRequest rep_req;
  rep_req.command_line = command_line;
  auto* report =
      app.add_subcommand("report", "Emit plot-ready CSVs for a fit directory");
  report->add_option("fit", rep_req.fit_dir, "Fit output directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  report->add_option("--out", rep_req.out_dir, "Output directory (default <fit>-report)");
  report->add_option("--grid-points", rep_req.grid_points, "Regression band grid size")
      ->capture_default_str();
  report->add_option("--level", rep_req.level, "Interval level")->capture_default_str();
  std::string rep_config;
  add_config_file(report, &rep_config);

  try {
    app.parse(argc, argv);
    apply_config_file(fit, fit_config);
    apply_config_file(estimate, est_config);
    apply_config_file(simulate, sim_config);
    apply_config_file(compare, cmp_config);
    apply_config_file(report, rep_config);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto usage_error = [](const std::string& msg) {
    std::cerr << msg << "\nRun with --help for more information.\n";
    return 2;
  };
  if (fit->parsed()) {
    if (fit_req.model.empty()) return usage_error("fit: --model is required");
    if (fit->count("--seed") == 0) return usage_error("fit: --seed is required");
  }
  if (simulate->parsed() && simulate->count("--seed") == 0)
    return usage_error("simulate: --seed is required");

  try {
    if (fit->parsed()) {
      if (fit_req.out_dir.empty())
        fit_req.out_dir =
            stem_of(fit_req.data_path) + "-" + sanitize(fit_req.model) + "-fit";
      const auto outcome = hierbayes::run_fit(fit_req);
      std::cout << "wrote " << outcome.out_dir << " (max rhat "
                << outcome.diagnostics.max_rhat << ", min ess "
                << outcome.diagnostics.min_ess << ")\n";
      if (!outcome.converged)
        std::cout << "warning: convergence gate failed; artifacts written under --force\n";
    } else if (estimate->parsed()) {
      if (est_req.out_dir.empty())
        est_req.out_dir = stem_of(est_req.data_path) + "-estimate";
      hierbayes::run_estimate(est_req);
      std::cout << "wrote " << est_req.out_dir << "\n";
    } else if (simulate->parsed()) {
      if (sim_req.out_data.empty())
        sim_req.out_data = stem_of(sim_req.spec_path) + "-data.csv";
      if (sim_req.out_truth.empty())
        sim_req.out_truth = stem_of(sim_req.spec_path) + "-truth.json";
      hierbayes::run_simulate(sim_req);
      std::cout << "wrote " << sim_req.out_data << " and " << sim_req.out_truth << "\n";
    } else if (compare->parsed()) {
      if (cmp_req.out_dir.empty()) cmp_req.out_dir = "waic-comparison";
      std::cout << hierbayes::run_compare(cmp_req);
      std::cout << "wrote " << cmp_req.out_dir << "\n";
    } else if (report->parsed()) {
      if (rep_req.out_dir.empty()) {
        std::string base = rep_req.fit_dir;
        while (!base.empty() && base.back() == '/') base.pop_back();
        rep_req.out_dir = (base.empty() ? "fit" : base) + "-report";
      }
      hierbayes::run_report(rep_req);
      std::cout << "wrote " << rep_req.out_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
