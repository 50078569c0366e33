#include "hierbayes/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "json.hpp"

#include "hierbayes/errors.hpp"
#include "hierbayes/estimators.hpp"
#include "hierbayes/generator.hpp"
#include "hierbayes/model_comparison.hpp"
#include "hierbayes/models_hier.hpp"
#include "hierbayes/models_pooling.hpp"
#include "hierbayes/models_regression.hpp"
#include "hierbayes/models_two_cluster.hpp"

namespace hierbayes {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + std::string(e.what()));
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// mirror of the table reader's dialect: quotes protect commas, doubled quotes
// escape a literal quote
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(s, &used, 16);
    if (used != s.size() || s.empty()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("malformed digest '" + s + "'; expected a hex value");
  }
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Canonical form of everything that steers sampling; a reader can rebuild it
// from the manifest's own fields and verify the recorded digest.
std::string config_canonical(const FitRequest& r) {
  std::string s = "model=" + r.model;
  s += ";chains=" + std::to_string(r.config.chains);
  s += ";iterations=" + std::to_string(r.config.iterations);
  s += ";burn_in=" + std::to_string(r.config.burn_in);
  s += ";thin=" + std::to_string(r.config.thin);
  s += ";seed=" + std::to_string(r.config.seed);
  s += ";stream_offset=" + std::to_string(r.config.stream_offset);
  s += ";nu_strategy=" + r.nu_strategy;
  s += ";noise=" + r.noise;
  s += ";quantile=" + format_double(r.quantile);
  s += ";drop_nonpositive=" + std::to_string(r.drop_nonpositive ? 1 : 0);
  s += ";aggregate_by_unit=" + std::to_string(r.aggregate_by_unit ? 1 : 0);
  return s;
}

json schema_json(const TableSchema& s) {
  json j = json::object();
  j["unit"] = s.unit;
  j["group"] = s.group;
  if (s.second) j["second"] = *s.second;
  if (s.covariate) j["covariate"] = *s.covariate;
  if (s.education) j["education"] = *s.education;
  j["response"] = s.response;
  return j;
}

TableSchema schema_from_json(const json& j) {
  TableSchema s;
  s.unit = j.value("unit", std::string("unit"));
  s.group = j.value("group", std::string("group"));
  s.response = j.value("response", std::string("response"));
  if (j.contains("second")) s.second = j.at("second").get<std::string>();
  if (j.contains("covariate")) s.covariate = j.at("covariate").get<std::string>();
  if (j.contains("education")) s.education = j.at("education").get<std::string>();
  return s;
}

ObservationTable load_input(const std::string& data_path, const TableSchema& schema,
                            bool drop_np, bool aggregate) {
  ObservationTable table = load_table(data_path, schema);
  if (drop_np) drop_nonpositive(table);
  if (aggregate) table = aggregate_by_unit(table);
  return table;
}

ModelFit dispatch_fit(const FitRequest& r, const ObservationTable& table) {
  const std::string& m = r.model;
  if (m == "no-pooling") return fit_no_pooling(table, r.config);
  if (m == "complete-pooling") return fit_complete_pooling(table, r.config);
  if (m == "hier-common") return fit_hier_common_sigma(table, r.config);
  if (m == "hier-varying")
    return fit_hier_varying_sigma(table, NuStrategy::parse(r.nu_strategy), r.config);
  if (m == "two-cluster")
    return fit_two_cluster(table, build_two_cluster_priors(table, r.config), r.config);
  if (m == "regression:national") return fit_national_regression(table, r.config);
  if (m == "regression:separate") return fit_separate_regressions(table, r.config);
  if (m == "regression:varying-intercepts")
    return fit_varying_intercepts(table, build_regression_priors(table, r.config),
                                  r.config);
  if (m == "regression:varying-both") {
    VaryingSlopesOptions options;
    options.quantile = r.quantile;
    if (r.noise == "laplace")
      options.noise = RegressionNoise::laplace;
    else if (r.noise == "normal")
      options.noise = RegressionNoise::normal;
    else
      throw ConfigError("unknown noise family '" + r.noise + "'; use laplace or normal");
    return fit_varying_intercepts_slopes(
        table, build_regression_priors(table, r.config), r.config, options);
  }
  throw ConfigError("unknown model tag '" + m + "'");
}

// "sigma2[g0]" -> ("sigma2", "[g0]"); bare names keep an empty bracket part
std::pair<std::string, std::string> split_bracket(const std::string& name) {
  const auto pos = name.find('[');
  if (pos == std::string::npos) return {name, ""};
  return {name.substr(0, pos), name.substr(pos)};
}

std::string bracket_label(const std::string& name, const std::string& bare) {
  const auto [base, bracket] = split_bracket(name);
  if (bracket.size() >= 2) return bracket.substr(1, bracket.size() - 2);
  return bare;
}

// Variance-scale parameters whose square roots are worth reporting alongside
// the raw draws; the trailing 2 drops from the name.
bool sd_scale_name(const std::string& base, std::string* sd) {
  static const std::map<std::string, std::string> kMap = {{"sigma2", "sigma"},
                                                          {"tau2", "tau"},
                                                          {"xi2", "xi"},
                                                          {"zeta2", "zeta"},
                                                          {"rho2", "rho"}};
  const auto it = kMap.find(base);
  if (it == kMap.end()) return false;
  *sd = it->second;
  return true;
}

json summary_entry(const std::string& name, double mean, double lo, double hi) {
  json e = json::object();
  e["name"] = name;
  e["mean"] = mean;
  e["lo"] = lo;
  e["hi"] = hi;
  return e;
}

double vec_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string sanitize_label(const std::string& label) {
  std::string out;
  for (const char c : label) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '-';
    out += ok ? c : '_';
  }
  return out;
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> xs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    xs[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return xs;
}

std::vector<double> log_spaced(double lo, double hi, int n) {
  std::vector<double> xs(static_cast<std::size_t>(n));
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < n; ++i)
    xs[static_cast<std::size_t>(i)] =
        std::exp(llo + (lhi - llo) * static_cast<double>(i) / static_cast<double>(n - 1));
  return xs;
}

}  // namespace

TableSchema ColumnSpec::resolve() const {
  if (!schema_file.empty()) {
    const json j = parse_json_file(schema_file);
    if (!j.is_object())
      throw ConfigError("'" + schema_file + "' must be a JSON object of column roles");
    static const std::set<std::string> kRoles = {"unit",      "group",     "second",
                                                 "covariate", "education", "response"};
    for (const auto& [key, value] : j.items()) {
      if (!kRoles.count(key))
        throw ConfigError("'" + schema_file + "' has unknown column role '" + key + "'");
      if (!value.is_string())
        throw ConfigError("'" + schema_file + "' role '" + key + "' must name a column");
    }
    return schema_from_json(j);
  }
  TableSchema s;
  s.unit = unit;
  s.group = group;
  s.response = response;
  if (!second.empty()) s.second = second;
  if (!covariate.empty()) s.covariate = covariate;
  if (!education.empty()) s.education = education;
  return s;
}

const std::vector<std::string>& known_model_tags() {
  static const std::vector<std::string> kTags = {"no-pooling",
                                                 "complete-pooling",
                                                 "hier-common",
                                                 "hier-varying",
                                                 "two-cluster",
                                                 "regression:national",
                                                 "regression:separate",
                                                 "regression:varying-intercepts",
                                                 "regression:varying-both"};
  return kTags;
}

FitOutcome run_fit(const FitRequest& request) {
  const auto t0 = std::chrono::steady_clock::now();
  request.config.validate();
  const TableSchema schema = request.columns.resolve();
  const ObservationTable table = load_input(request.data_path, schema,
                                            request.drop_nonpositive,
                                            request.aggregate_by_unit);

  const ModelFit fit = dispatch_fit(request, table);
  const Diagnostics diag = compute_diagnostics(fit.draws);

  fs::create_directories(request.out_dir);
  const auto artifact = [&](const std::string& name) {
    return (fs::path(request.out_dir) / name).string();
  };

  json dj = json::object();
  dj["model"] = fit.draws.model_tag;
  dj["max_rhat"] = diag.max_rhat;
  dj["min_ess"] = diag.min_ess;
  dj["rhat_defined"] = diag.rhat_defined;
  json dparams = json::array();
  for (const auto& p : diag.params) {
    json e = json::object();
    e["name"] = p.name;
    e["rhat"] = p.rhat;
    e["ess"] = p.ess;
    dparams.push_back(std::move(e));
  }
  dj["parameters"] = std::move(dparams);
  json rates = json::object();
  for (const auto& [label, rate] : diag.acceptance_rates) rates[label] = rate;
  dj["acceptance_rates"] = std::move(rates);
  write_json_file(artifact("diagnostics.json"), dj);

  const auto write_manifest = [&](bool ok) {
    json mj = json::object();
    mj["version"] = kVersion;
    mj["command"] = request.command_line;
    mj["model"] = request.model;
    mj["data_path"] = request.data_path;
    mj["data_digest"] = hex64(data_digest(table));
    mj["config_digest"] = hex64(fnv1a(config_canonical(request)));
    mj["seed"] = request.config.seed;
    json cj = json::object();
    cj["chains"] = request.config.chains;
    cj["iterations"] = request.config.iterations;
    cj["burn_in"] = request.config.burn_in;
    cj["thin"] = request.config.thin;
    cj["stream_offset"] = request.config.stream_offset;
    mj["config"] = std::move(cj);
    mj["columns"] = schema_json(schema);
    json fj = json::object();
    fj["nu_strategy"] = request.nu_strategy;
    fj["noise"] = request.noise;
    fj["quantile"] = request.quantile;
    fj["drop_nonpositive"] = request.drop_nonpositive;
    fj["aggregate_by_unit"] = request.aggregate_by_unit;
    fj["force"] = request.force;
    mj["flags"] = std::move(fj);
    mj["n_obs"] = fit.n_obs;
    mj["observation_unit"] = fit.obs_unit;
    json gj = json::object();
    gj["max_rhat"] = diag.max_rhat;
    gj["min_ess"] = diag.min_ess;
    gj["converged"] = ok;
    mj["diagnostics"] = std::move(gj);
    mj["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json_file(artifact("manifest.json"), mj);
  };

  bool converged = true;
  try {
    enforce_convergence(diag);
  } catch (const ConvergenceError& e) {
    converged = false;
    if (!request.force) {
      write_manifest(false);
      throw ConvergenceError(std::string(e.what()) + "; diagnostics written to " +
                             artifact("diagnostics.json"));
    }
  }

  for (int c = 0; c < request.config.chains; ++c) {
    std::string out;
    for (std::size_t p = 0; p < fit.draws.n_params(); ++p) {
      if (p) out += ',';
      out += csv_escape(fit.draws.params[p].name);
    }
    out += '\n';
    for (long t = 0; t < fit.draws.retained; ++t) {
      for (std::size_t p = 0; p < fit.draws.n_params(); ++p) {
        if (p) out += ',';
        out += format_double(fit.draws.at(c, t, static_cast<int>(p)));
      }
      out += '\n';
    }
    write_text_file(artifact("draws_chain" + std::to_string(c) + ".csv"), out);
  }

  const double level = 0.95;
  json sj = json::object();
  sj["model"] = fit.draws.model_tag;
  sj["level"] = level;
  json pj = json::array();
  for (const auto& s : summarize_draws(fit.draws, level))
    pj.push_back(summary_entry(s.name, s.mean, s.lo, s.hi));
  sj["parameters"] = std::move(pj);
  json derived = json::array();
  for (std::size_t p = 0; p < fit.draws.n_params(); ++p) {
    const auto [base, bracket] = split_bracket(fit.draws.params[p].name);
    std::string sd;
    if (!sd_scale_name(base, &sd)) continue;
    auto values = fit.draws.column(static_cast<int>(p));
    for (double& v : values) v = std::sqrt(std::max(v, 0.0));
    derived.push_back(summary_entry(sd + bracket, vec_mean(values),
                                    quantile(values, (1.0 - level) / 2.0),
                                    quantile(values, (1.0 + level) / 2.0)));
  }
  sj["derived"] = std::move(derived);
  json kj = json::object();
  for (const auto& [name, value] : fit.constants) kj[name] = value;
  sj["constants"] = std::move(kj);
  sj["n_obs"] = fit.n_obs;
  sj["observation_unit"] = fit.obs_unit;
  write_json_file(artifact("summary.json"), sj);

  const WaicReport waic = compute_waic(fit);
  json wj = json::object();
  wj["model"] = waic.model_tag;
  wj["waic"] = waic.waic;
  wj["lppd"] = waic.lppd;
  wj["p_waic"] = waic.p_waic;
  wj["se"] = waic.se_waic;
  wj["lo"] = waic.lo;
  wj["hi"] = waic.hi;
  wj["elpd_waic"] = waic.elpd();
  wj["n_obs"] = waic.n_obs;
  wj["draws_used"] = waic.draws_used;
  wj["observation_unit"] = waic.obs_unit;
  wj["data_digest"] = hex64(waic.data_digest);
  write_json_file(artifact("waic.json"), wj);

  write_manifest(converged);
  return FitOutcome{request.out_dir, diag, converged};
}

void run_estimate(const EstimateRequest& request) {
  const TableSchema schema = request.columns.resolve();
  const ObservationTable table = load_input(request.data_path, schema,
                                            request.drop_nonpositive,
                                            request.aggregate_by_unit);
  const GroupSummaries summaries = summarize(table, GroupBy::group);

  fs::create_directories(request.out_dir);
  const auto artifact = [&](const std::string& name) {
    return (fs::path(request.out_dir) / name).string();
  };

  json sj = json::object();
  json gj = json::array();
  for (const auto& g : summaries.groups) {
    json e = json::object();
    e["group"] = g.label;
    e["n"] = g.n;
    e["mean"] = g.mean;
    e["variance"] = g.variance;
    if (summaries.has_covariate) e["covariate_mean"] = g.covariate_mean;
    gj.push_back(std::move(e));
  }
  sj["groups"] = std::move(gj);
  sj["n_total"] = summaries.n_total;
  sj["grand_mean"] = summaries.grand_mean;
  if (summaries.has_covariate)
    sj["covariate_grand_mean"] = summaries.covariate_grand_mean;
  write_json_file(artifact("summaries.json"), sj);

  const AnovaEstimates anova = anova_estimates(summaries);
  const MomentEstimates moments = moment_estimates(summaries);
  const TauProfile profile = tau_profile(summaries, anova.sigma2);

  json ej = json::object();
  json aj = json::object();
  aj["ms_within"] = anova.ms_within;
  aj["ms_between"] = anova.ms_between;
  aj["n_bar"] = anova.n_bar;
  aj["sigma2"] = anova.sigma2;
  aj["tau2"] = anova.tau2;
  aj["tau2_truncated"] = anova.tau2_truncated;
  ej["anova"] = std::move(aj);
  json mj = json::object();
  mj["mean_s2"] = moments.mean_s2;
  mj["var_s2"] = moments.var_s2;
  mj["nu_hat"] = moments.nu_hat;
  mj["rho2_hat"] = moments.rho2_hat;
  ej["moments"] = std::move(mj);
  json tj = json::object();
  tj["tau"] = profile.tau;
  tj["log_posterior"] = profile.log_posterior;
  tj["tau_map"] = profile.tau_map;
  tj["interval_lo"] = profile.interval_lo;
  tj["interval_hi"] = profile.interval_hi;
  tj["widened"] = profile.widened;
  tj["open_lo"] = profile.open_lo;
  tj["open_hi"] = profile.open_hi;
  ej["tau_profile"] = std::move(tj);
  write_json_file(artifact("estimates.json"), ej);

  json mf = json::object();
  mf["version"] = kVersion;
  mf["command"] = request.command_line;
  mf["data_path"] = request.data_path;
  mf["data_digest"] = hex64(data_digest(table));
  mf["columns"] = schema_json(schema);
  json fj = json::object();
  fj["drop_nonpositive"] = request.drop_nonpositive;
  fj["aggregate_by_unit"] = request.aggregate_by_unit;
  mf["flags"] = std::move(fj);
  mf["n_obs"] = table.rows.size();
  write_json_file(artifact("manifest.json"), mf);
}

void run_simulate(const SimulateRequest& request) {
  GeneratorSpec spec = parse_generator_spec(read_text_file(request.spec_path));
  spec.seed = request.seed;
  const GeneratedData data = generate(spec);
  const auto ensure_parent = [](const std::string& p) {
    const fs::path dir = fs::path(p).parent_path();
    if (!dir.empty()) fs::create_directories(dir);
  };
  ensure_parent(request.out_data);
  ensure_parent(request.out_truth);
  save_table(data.table, request.out_data);
  write_text_file(request.out_truth, truth_to_json(data));
}

std::string run_compare(const CompareRequest& request) {
  if (request.fit_dirs.size() < 2)
    throw ConfigError("compare needs at least two fit directories");
  std::vector<WaicReport> reports;
  for (const auto& dir : request.fit_dirs) {
    const std::string path = (fs::path(dir) / "waic.json").string();
    if (!fs::exists(path))
      throw ConfigError("'" + dir + "' has no waic.json; run fit on it first");
    const json j = parse_json_file(path);
    WaicReport r;
    r.model_tag = j.at("model").get<std::string>();
    r.obs_unit = j.at("observation_unit").get<std::string>();
    r.data_digest = parse_hex64(j.at("data_digest").get<std::string>());
    r.n_obs = j.at("n_obs").get<std::size_t>();
    r.draws_used = j.at("draws_used").get<long>();
    r.lppd = j.at("lppd").get<double>();
    r.p_waic = j.at("p_waic").get<double>();
    r.waic = j.at("waic").get<double>();
    r.se_waic = j.at("se").get<double>();
    r.lo = j.at("lo").get<double>();
    r.hi = j.at("hi").get<double>();
    reports.push_back(std::move(r));
  }
  const auto rows = compare(reports, request.allow_incomparable);
  const std::string text = comparison_table(rows, request.watanabe_scale);

  fs::create_directories(request.out_dir);
  const auto artifact = [&](const std::string& name) {
    return (fs::path(request.out_dir) / name).string();
  };

  std::string tbl = "model,lppd,p_waic,waic,se,lo,hi,delta,overlaps_best\n";
  std::string ivl = "model,waic,lo,hi\n";
  for (const auto& row : rows) {
    tbl += csv_escape(row.model_tag);
    tbl += ',' + format_double(row.lppd) + ',' + format_double(row.p_waic);
    tbl += ',' + format_double(row.waic) + ',' + format_double(row.se_waic);
    tbl += ',' + format_double(row.lo) + ',' + format_double(row.hi);
    tbl += ',' + format_double(row.delta);
    tbl += row.overlaps_best ? ",1\n" : ",0\n";
    ivl += csv_escape(row.model_tag) + ',' + format_double(row.waic) + ',' +
           format_double(row.lo) + ',' + format_double(row.hi) + '\n';
  }
  write_text_file(artifact("waic_table.csv"), tbl);
  write_text_file(artifact("waic_intervals.csv"), ivl);
  write_text_file(artifact("comparison.txt"), text);

  json mf = json::object();
  mf["version"] = kVersion;
  mf["command"] = request.command_line;
  json in = json::array();
  for (const auto& dir : request.fit_dirs) in.push_back(dir);
  mf["inputs"] = std::move(in);
  mf["allow_incomparable"] = request.allow_incomparable;
  mf["watanabe_scale"] = request.watanabe_scale;
  write_json_file(artifact("manifest.json"), mf);
  return text;
}

ModelFit load_fit_artifacts(const std::string& fit_dir) {
  const fs::path dir(fit_dir);
  std::vector<std::string> missing;
  for (const char* name : {"manifest.json", "summary.json", "diagnostics.json", "waic.json"})
    if (!fs::exists(dir / name)) missing.emplace_back(name);

  int chains = 0;
  json manifest;
  if (missing.empty() || fs::exists(dir / "manifest.json")) {
    manifest = parse_json_file((dir / "manifest.json").string());
    chains = manifest.at("config").at("chains").get<int>();
    for (int c = 0; c < chains; ++c) {
      const std::string name = "draws_chain" + std::to_string(c) + ".csv";
      if (!fs::exists(dir / name)) missing.push_back(name);
    }
  } else if (!fs::exists(dir / "draws_chain0.csv")) {
    missing.emplace_back("draws_chain0.csv");
  }
  if (!missing.empty()) {
    std::string what = "'" + fit_dir + "' is missing expected artifacts:";
    for (const auto& name : missing) what += " " + name;
    throw ConfigError(what);
  }

  const json summary = parse_json_file((dir / "summary.json").string());
  const json waic = parse_json_file((dir / "waic.json").string());

  ModelFit fit;
  fit.draws.model_tag = summary.at("model").get<std::string>();
  const json& cj = manifest.at("config");
  fit.draws.config.chains = chains;
  fit.draws.config.iterations = cj.at("iterations").get<long>();
  fit.draws.config.burn_in = cj.at("burn_in").get<long>();
  fit.draws.config.thin = cj.at("thin").get<long>();
  fit.draws.config.seed = manifest.at("seed").get<std::uint64_t>();
  fit.draws.config.stream_offset = cj.at("stream_offset").get<std::uint64_t>();

  for (int c = 0; c < chains; ++c) {
    const std::string path = (dir / ("draws_chain" + std::to_string(c) + ".csv")).string();
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line))
      throw ConfigError("'" + path + "' is empty");
    const auto header = split_csv_line(line);
    if (c == 0) {
      for (const auto& name : header) {
        ParamSpec spec;
        spec.name = name;
        const auto [base, bracket] = split_bracket(name);
        std::string sd;
        if (sd_scale_name(base, &sd))
          spec.domain = Domain::positive;
        else if (base == "rho_ab")
          spec.domain = Domain::correlation;
        fit.draws.params.push_back(std::move(spec));
      }
    } else if (header.size() != fit.draws.n_params()) {
      throw ConfigError("'" + path + "' does not match the first chain's columns");
    }
    std::vector<double> values;
    long rows = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != fit.draws.n_params())
        throw ConfigError("'" + path + "' line " + std::to_string(line_no) +
                          " has " + std::to_string(cells.size()) + " cells; expected " +
                          std::to_string(fit.draws.n_params()));
      for (const auto& cell : cells) {
        char* end = nullptr;
        const double v = std::strtod(cell.c_str(), &end);
        if (end == cell.c_str())
          throw ConfigError("'" + path + "' line " + std::to_string(line_no) +
                            ": '" + cell + "' is not a number");
        values.push_back(v);
      }
      ++rows;
    }
    if (c == 0)
      fit.draws.retained = rows;
    else if (rows != fit.draws.retained)
      throw ConfigError("'" + path + "' does not match the first chain's length");
    fit.draws.chains.push_back(std::move(values));
  }

  if (summary.contains("constants"))
    for (const auto& [name, value] : summary.at("constants").items())
      fit.constants.emplace_back(name, value.get<double>());
  fit.n_obs = summary.at("n_obs").get<std::size_t>();
  fit.obs_unit = summary.at("observation_unit").get<std::string>();
  fit.data_digest = parse_hex64(waic.at("data_digest").get<std::string>());
  return fit;
}

void run_report(const ReportRequest& request) {
  if (request.grid_points < 2)
    throw ConfigError("report needs at least 2 grid points");
  if (!(request.level > 0.0 && request.level < 1.0))
    throw ConfigError("interval level must lie in (0, 1)");

  const ModelFit fit = load_fit_artifacts(request.fit_dir);
  const json manifest =
      parse_json_file((fs::path(request.fit_dir) / "manifest.json").string());
  const std::string& tag = fit.draws.model_tag;
  const double plo = (1.0 - request.level) / 2.0;
  const double phi = (1.0 + request.level) / 2.0;

  fs::create_directories(request.out_dir);
  const auto artifact = [&](const std::string& name) {
    return (fs::path(request.out_dir) / name).string();
  };
  std::vector<std::string> written;
  const auto emit = [&](const std::string& name, const std::string& text) {
    write_text_file(artifact(name), text);
    written.push_back(name);
  };

  // the source table, reloaded exactly as the fit saw it
  const auto reload_table = [&]() {
    const json& flags = manifest.at("flags");
    return load_input(manifest.at("data_path").get<std::string>(),
                      schema_from_json(manifest.at("columns")),
                      flags.at("drop_nonpositive").get<bool>(),
                      flags.at("aggregate_by_unit").get<bool>());
  };

  const auto summaries = summarize_draws(fit.draws, request.level);
  const auto interval_csv = [&](const std::string& head, const std::string& prefix,
                                const std::string& bare) {
    std::string out = head + ",mean,lo,hi\n";
    for (const auto& s : summaries) {
      const auto [base, bracket] = split_bracket(s.name);
      if (base != prefix) continue;
      out += csv_escape(bracket_label(s.name, bare));
      out += ',' + format_double(s.mean) + ',' + format_double(s.lo) + ',' +
             format_double(s.hi) + '\n';
    }
    return out;
  };

  if (tag.rfind("regression:", 0) == 0) {
    const ObservationTable table = reload_table();
    double xlo = table.rows.front().covariate, xhi = xlo;
    for (const auto& row : table.rows) {
      xlo = std::min(xlo, row.covariate);
      xhi = std::max(xhi, row.covariate);
    }
    const auto grid = linspace(xlo, xhi, request.grid_points);
    const RegressionReport report = regression_report(fit, grid, request.level);

    const auto coef_csv = [&](const std::vector<ParamSummary>& coefs) {
      std::string out = "parameter,group,mean,lo,hi\n";
      for (const auto& s : coefs) {
        out += csv_escape(s.name) + ',' + csv_escape(bracket_label(s.name, ""));
        out += ',' + format_double(s.mean) + ',' + format_double(s.lo) + ',' +
               format_double(s.hi) + '\n';
      }
      return out;
    };
    emit("intercepts.csv", coef_csv(report.intercepts));
    emit("slopes.csv", coef_csv(report.slopes));
    for (const auto& gb : report.bands) {
      std::string out = "x,line_mean,line_lo,line_hi,pred_lo,pred_hi\n";
      for (const auto& pt : gb.points) {
        out += format_double(pt.x);
        out += ',' + format_double(pt.line_mean) + ',' + format_double(pt.line_lo) +
               ',' + format_double(pt.line_hi);
        out += ',' + format_double(pt.pred_lo) + ',' + format_double(pt.pred_hi) + '\n';
      }
      emit("bands_" + sanitize_label(gb.label) + ".csv", out);
    }
  } else if (tag == "two-cluster") {
    emit("theta_intervals.csv", interval_csv("group", "theta", "all"));
    emit("level_means.csv", interval_csv("level", "lambda", "all"));

    std::vector<std::string> groups, levels;
    for (const auto& p : fit.draws.params) {
      const auto [base, bracket] = split_bracket(p.name);
      if (base == "theta") groups.push_back(bracket_label(p.name, "all"));
      if (base == "lambda") levels.push_back(bracket_label(p.name, "all"));
    }

    std::string contrasts = "level_a,level_b,mean,lo,hi\n";
    for (std::size_t a = 0; a < levels.size(); ++a) {
      const auto da = fit.draws.column(fit.draws.param_index("lambda[" + levels[a] + "]"));
      for (std::size_t b = a + 1; b < levels.size(); ++b) {
        const auto db =
            fit.draws.column(fit.draws.param_index("lambda[" + levels[b] + "]"));
        std::vector<double> diff(da.size());
        for (std::size_t i = 0; i < da.size(); ++i) diff[i] = da[i] - db[i];
        contrasts += csv_escape(levels[a]) + ',' + csv_escape(levels[b]);
        contrasts += ',' + format_double(vec_mean(diff)) + ',' +
                     format_double(quantile(diff, plo)) + ',' +
                     format_double(quantile(diff, phi)) + '\n';
      }
    }
    emit("level_contrasts.csv", contrasts);

    std::string cells = "group,level,mean,lo,hi\n";
    for (const auto& g : groups) {
      const auto dg = fit.draws.column(fit.draws.param_index("theta[" + g + "]"));
      for (const auto& l : levels) {
        const auto dl = fit.draws.column(fit.draws.param_index("lambda[" + l + "]"));
        std::vector<double> sum(dg.size());
        for (std::size_t i = 0; i < dg.size(); ++i) sum[i] = dg[i] + dl[i];
        cells += csv_escape(g) + ',' + csv_escape(l);
        cells += ',' + format_double(vec_mean(sum)) + ',' +
                 format_double(quantile(sum, plo)) + ',' +
                 format_double(quantile(sum, phi)) + '\n';
      }
    }
    emit("cell_summaries.csv", cells);
  } else {
    emit("theta_intervals.csv", interval_csv("group", "theta", "all"));

    const bool varying = tag.rfind("hier-varying", 0) == 0;
    if (tag == "hier-common" || varying) {
      const ObservationTable table = reload_table();
      const GroupSummaries gs = summarize(table, GroupBy::group);
      const AnovaEstimates anova = anova_estimates(gs);
      const TauProfile profile = tau_profile(gs, anova.sigma2);

      // tidy curve files: curve rows trace (x, y) per label, marker rows pin
      // vertical reference lines (x set) or horizontal asymptotes (y set)
      std::string prof = "kind,label,x,y\n";
      for (std::size_t i = 0; i < profile.tau.size(); ++i)
        prof += "curve,profile," + format_double(profile.tau[i]) + ',' +
                format_double(profile.log_posterior[i]) + '\n';
      prof += "marker,tau_map," + format_double(profile.tau_map) + ",0\n";
      prof += "marker,interval_lo," + format_double(profile.interval_lo) + ",0\n";
      prof += "marker,interval_hi," + format_double(profile.interval_hi) + ",0\n";
      emit("tau_profile.csv", prof);

      const ShrinkageCurve tc = theta_shrinkage_curve(gs, anova.sigma2, profile.tau);
      std::string theta = "kind,label,x,y\n";
      for (std::size_t g = 0; g < tc.labels.size(); ++g)
        for (std::size_t i = 0; i < tc.x.size(); ++i)
          theta += "curve," + csv_escape(tc.labels[g]) + ',' +
                   format_double(tc.x[i]) + ',' + format_double(tc.value[g][i]) + '\n';
      theta += "marker,tau_map," + format_double(profile.tau_map) + ",0\n";
      emit("shrinkage_theta.csv", theta);

      if (varying) {
        const MomentEstimates moments = moment_estimates(gs);
        std::vector<std::size_t> n;
        std::vector<double> v;
        std::vector<std::string> labels;
        for (const auto& g : gs.groups) {
          n.push_back(g.n);
          v.push_back(g.variance);
          labels.push_back(g.label);
        }
        const auto nu_grid = log_spaced(0.1, 1e4, std::max(request.grid_points, 2));
        const ShrinkageCurve sc =
            sigma_shrinkage_curve(n, v, labels, moments.rho2_hat, nu_grid);
        std::string sigma = "kind,label,x,y\n";
        for (std::size_t g = 0; g < sc.labels.size(); ++g)
          for (std::size_t i = 0; i < sc.x.size(); ++i)
            sigma += "curve," + csv_escape(sc.labels[g]) + ',' +
                     format_double(sc.x[i]) + ',' + format_double(sc.value[g][i]) + '\n';
        sigma += "marker,nu_hat," + format_double(moments.nu_hat) + ",0\n";
        sigma += "marker,rho2_hat,0," + format_double(moments.rho2_hat) + '\n';
        emit("shrinkage_sigma.csv", sigma);
      }
    }
  }

  json mf = json::object();
  mf["version"] = kVersion;
  mf["command"] = request.command_line;
  mf["fit_dir"] = request.fit_dir;
  mf["model"] = tag;
  mf["grid_points"] = request.grid_points;
  mf["level"] = request.level;
  json art = json::array();
  for (const auto& name : written) art.push_back(name);
  mf["artifacts"] = std::move(art);
  write_json_file(artifact("manifest.json"), mf);
}

}  // namespace hierbayes
