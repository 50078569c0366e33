#include "hierbayes/generator.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hierbayes/distributions.hpp"
#include "hierbayes/errors.hpp"
#include "hierbayes/random.hpp"

namespace hierbayes {

namespace {

struct Lookup {
  const GeneratorSpec& spec;

  std::optional<double> maybe(const std::string& symbol) const {
    const auto it = spec.parameters.find(symbol);
    if (it == spec.parameters.end()) return std::nullopt;
    return it->second;
  }
  double need(const std::string& symbol) const {
    const auto v = maybe(symbol);
    if (!v)
      throw ConfigError("generator spec for '" + spec.model_tag +
                        "' is missing parameter '" + symbol + "'");
    return *v;
  }
  // pinned per label, pinned for all, or absent
  std::optional<double> pinned(const std::string& name, const std::string& label) const {
    if (const auto v = maybe(name + "[" + label + "]")) return v;
    return maybe(name);
  }
};

double sample_laplace_noise(double scale, RandomStream& rng) {
  const double u = rng.uniform() - 0.5;
  return -scale * (u < 0.0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(u));
}

struct RowDraft {
  std::string group;
  std::string second;
  double covariate = 0.0;
  double response = 0.0;
};

std::vector<std::string> make_labels(const char* prefix, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(prefix + std::to_string(i));
  return out;
}

std::vector<double> years_pool() {
  std::vector<double> pool;
  for (const auto& cat : education_categories())
    pool.push_back(static_cast<double>(education_years(cat)));
  return pool;
}

double draw_covariate(const CovariateDesign& design, const std::vector<double>& pool,
                      long i, RandomStream& rng) {
  if (design.kind == CovariateDesign::Kind::grid)
    return design.grid[static_cast<std::size_t>(i) % design.grid.size()];
  const auto idx = static_cast<std::size_t>(rng.uniform() * static_cast<double>(pool.size()));
  return pool[std::min(idx, pool.size() - 1)];
}

}  // namespace

GeneratedData generate(const GeneratorSpec& spec) {
  if (spec.group_sizes.empty())
    throw ConfigError("generator spec needs at least one group size");
  for (const long n : spec.group_sizes)
    if (n < 1) throw ConfigError("group sizes must be at least 1");
  for (const long n : spec.second_sizes)
    if (n < 1) throw ConfigError("second-cluster sizes must be at least 1");

  const Lookup look{spec};
  const auto& tag = spec.model_tag;
  const std::size_t J = spec.group_sizes.size();
  const auto groups = make_labels("g", J);
  RandomStream rng(spec.seed, 0);

  GeneratedData out;
  out.model_tag = tag;
  out.seed = spec.seed;
  auto note = [&](const std::string& name, double v) { out.truth.emplace_back(name, v); };

  const bool regression = tag.rfind("regression:", 0) == 0;
  const bool two_cluster = tag == "two-cluster";
  if (regression && spec.covariate.kind == CovariateDesign::Kind::none)
    throw ConfigError("regression generation needs a covariate design");
  if (spec.covariate.kind == CovariateDesign::Kind::grid && spec.covariate.grid.empty())
    throw ConfigError("a grid covariate design needs at least one value");
  if (!two_cluster && !spec.second_sizes.empty())
    throw ConfigError("second-cluster sizes only apply to the two-cluster model");

  std::vector<RowDraft> rows;

  if (tag == "complete-pooling" || tag == "no-pooling" || tag == "hier-common" ||
      tag == "hier-varying") {
    // shared ladder: Y_ij ~ N(theta_j, sigma2_j); what varies is where theta_j
    // and sigma2_j come from
    std::vector<double> theta(J), sigma2(J);
    for (std::size_t j = 0; j < J; ++j) {
      if (tag == "complete-pooling") {
        theta[j] = look.need("theta");
      } else if (const auto v = look.pinned("theta", groups[j])) {
        theta[j] = *v;
      } else if (tag == "no-pooling") {
        throw ConfigError("generator spec for 'no-pooling' is missing parameter 'theta[" +
                          groups[j] + "]'");
      } else {
        theta[j] = sample_normal(look.need("mu"), look.need("tau2"), rng);
      }
      note("theta[" + groups[j] + "]", theta[j]);
    }
    for (std::size_t j = 0; j < J; ++j) {
      if (tag == "hier-varying") {
        if (const auto v = look.pinned("sigma2", groups[j]))
          sigma2[j] = *v;
        else
          sigma2[j] = sample_scaled_inv_chi2(look.need("nu"), look.need("rho2"), rng);
        note("sigma2[" + groups[j] + "]", sigma2[j]);
      } else if (tag == "no-pooling") {
        const auto v = look.pinned("sigma2", groups[j]);
        sigma2[j] = v ? *v : look.need("sigma2[" + groups[j] + "]");
        note("sigma2[" + groups[j] + "]", sigma2[j]);
      } else {
        sigma2[j] = look.need("sigma2");
      }
    }
    if (tag == "complete-pooling" || tag == "hier-common") note("sigma2", sigma2[0]);
    for (const auto& name : {"mu", "tau2", "nu", "rho2"})
      if (const auto v = look.maybe(name)) note(name, *v);

    for (std::size_t j = 0; j < J; ++j)
      for (long i = 0; i < spec.group_sizes[j]; ++i)
        rows.push_back({groups[j], "", 0.0,
                        sample_normal(theta[j], sigma2[j], rng)});
  } else if (two_cluster) {
    const std::size_t K = spec.second_sizes.size();
    if (K < 2)
      throw ConfigError(
          "two-cluster generation needs second-cluster sizes for at least two levels");
    const auto seconds = make_labels("s", K);

    std::vector<double> theta(J), lambda(K);
    for (std::size_t j = 0; j < J; ++j) {
      if (const auto v = look.pinned("theta", groups[j]))
        theta[j] = *v;
      else
        theta[j] = sample_normal(look.need("mu"), look.need("tau2"), rng);
      note("theta[" + groups[j] + "]", theta[j]);
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (const auto v = look.maybe("lambda[" + seconds[k] + "]"))
        lambda[k] = *v;
      else
        lambda[k] = sample_normal(0.0, look.need("xi2"), rng);
      note("lambda[" + seconds[k] + "]", lambda[k]);
    }
    std::vector<double> sigma2(J * K);
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t k = 0; k < K; ++k) {
        const std::string cell = groups[j] + "|" + seconds[k];
        double v;
        if (const auto pin = look.pinned("sigma2", cell)) {
          v = *pin;
        } else {
          const auto nu = look.maybe("nu[" + seconds[k] + "]");
          const auto rho2 = look.maybe("rho2[" + seconds[k] + "]");
          v = sample_scaled_inv_chi2(nu ? *nu : look.need("nu"),
                                     rho2 ? *rho2 : look.need("rho2"), rng);
        }
        sigma2[j * K + k] = v;
        note("sigma2[" + cell + "]", v);
      }

    for (const auto& name : {"mu", "tau2", "xi2", "nu", "rho2"})
      if (const auto v = look.maybe(name)) note(name, *v);
    for (std::size_t k = 0; k < K; ++k)
      for (const std::string base : {"nu", "rho2"})
        if (const auto v = look.maybe(base + "[" + seconds[k] + "]"))
          note(base + "[" + seconds[k] + "]", *v);

    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t k = 0; k < K; ++k)
        for (long i = 0; i < spec.second_sizes[k]; ++i)
          rows.push_back({groups[j], seconds[k], 0.0,
                          sample_normal(theta[j] + lambda[k], sigma2[j * K + k], rng)});
  } else if (regression) {
    const bool national = tag == "regression:national";
    const bool separate = tag == "regression:separate";
    const bool varying_int = tag == "regression:varying-intercepts";
    const bool varying_both = tag.rfind("regression:varying-both", 0) == 0;
    const bool laplace = tag == "regression:varying-both";
    if (!national && !separate && !varying_int && !varying_both)
      throw ConfigError("unknown model tag '" + tag + "'");

    // covariates first so the centering the likelihood uses is known before
    // any response is drawn
    const auto pool = years_pool();
    std::vector<std::vector<double>> x(J);
    for (std::size_t j = 0; j < J; ++j)
      for (long i = 0; i < spec.group_sizes[j]; ++i)
        x[j].push_back(draw_covariate(spec.covariate, pool, i, rng));
    std::vector<double> xbar(J, 0.0);
    double grand = 0.0;
    long total = 0;
    for (std::size_t j = 0; j < J; ++j) {
      for (const double v : x[j]) xbar[j] += v;
      grand += xbar[j];
      total += spec.group_sizes[j];
      xbar[j] /= static_cast<double>(x[j].size());
    }
    grand /= static_cast<double>(total);

    std::vector<double> alpha(J), beta(J), sigma2(J);
    for (std::size_t j = 0; j < J; ++j) {
      const auto pa = look.pinned("alpha", groups[j]);
      const auto pb = look.pinned("beta", groups[j]);
      if (national) {
        alpha[j] = look.need("alpha");
        beta[j] = look.need("beta");
      } else if (varying_both && (!pa || !pb)) {
        // joint draw keeps the generating correlation honest even when one
        // coordinate is pinned afterwards
        const auto [a, b] = sample_bivariate_normal(
            look.need("mu"), look.need("gamma"), look.need("tau2"), look.need("zeta2"),
            look.need("rho_ab"), rng);
        alpha[j] = pa ? *pa : a;
        beta[j] = pb ? *pb : b;
      } else if (varying_int && !pa) {
        alpha[j] = sample_normal(look.need("mu"), look.need("tau2"), rng);
        beta[j] = look.need("beta");
      } else {
        if (!pa)
          throw ConfigError("generator spec for '" + tag +
                            "' is missing parameter 'alpha[" + groups[j] + "]'");
        alpha[j] = *pa;
        beta[j] = varying_int ? look.need("beta")
                  : pb        ? *pb
                              : look.need("beta[" + groups[j] + "]");
      }
      if (!national || j == 0) {
        note(national ? "alpha" : "alpha[" + groups[j] + "]", alpha[j]);
        note(national ? "beta" : "beta[" + groups[j] + "]", beta[j]);
      }
    }
    for (std::size_t j = 0; j < J; ++j) {
      if (national) {
        sigma2[j] = look.need("sigma2");
      } else if (const auto v = look.pinned("sigma2", groups[j])) {
        sigma2[j] = *v;
      } else if (varying_int || varying_both) {
        sigma2[j] = sample_scaled_inv_chi2(look.need("nu"), look.need("rho2"), rng);
      } else {
        throw ConfigError("generator spec for '" + tag +
                          "' is missing parameter 'sigma2[" + groups[j] + "]'");
      }
      if (!national) note("sigma2[" + groups[j] + "]", sigma2[j]);
    }
    if (national) note("sigma2", sigma2[0]);
    for (const auto& name : {"mu", "gamma", "tau2", "zeta2", "rho_ab", "nu", "rho2"})
      if (const auto v = look.maybe(name)) note(name, *v);

    for (std::size_t j = 0; j < J; ++j)
      for (long i = 0; i < spec.group_sizes[j]; ++i) {
        const double center = national ? grand : xbar[j];
        const double m = alpha[j] + beta[j] * (x[j][i] - center);
        const double y = laplace ? m + sample_laplace_noise(std::sqrt(sigma2[j]), rng)
                                 : sample_normal(m, sigma2[j], rng);
        rows.push_back({groups[j], "", x[j][i], y});
      }
  } else {
    throw ConfigError("unknown model tag '" + tag + "'");
  }

  const bool has_second = two_cluster;
  const bool has_covariate = regression;
  std::string csv = "unit,group";
  if (has_second) csv += ",second";
  if (has_covariate) csv += ",covariate";
  csv += ",response\n";
  long unit = 0;
  for (const auto& r : rows) {
    csv += "u" + std::to_string(unit++) + "," + r.group;
    if (has_second) csv += "," + r.second;
    if (has_covariate) csv += "," + format_double(r.covariate);
    csv += "," + format_double(r.response) + "\n";
  }
  TableSchema schema;
  schema.unit = "unit";
  schema.group = "group";
  schema.response = "response";
  if (has_second) schema.second = "second";
  if (has_covariate) schema.covariate = "covariate";
  out.table = load_table_text(csv, schema, "<generated>");
  return out;
}

GeneratorSpec parse_generator_spec(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("generator spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("generator spec must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "model" && key != "seed" && key != "group_sizes" &&
        key != "second_sizes" && key != "parameters" && key != "covariate")
      throw ConfigError("unknown generator spec key '" + key + "'");
  }

  GeneratorSpec spec;
  if (!j.contains("model") || !j["model"].is_string())
    throw ConfigError("generator spec needs a 'model' tag");
  spec.model_tag = j["model"].get<std::string>();
  if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
  if (!j.contains("group_sizes") || !j["group_sizes"].is_array() ||
      j["group_sizes"].empty())
    throw ConfigError("generator spec needs a non-empty 'group_sizes' array");
  for (const auto& v : j["group_sizes"]) spec.group_sizes.push_back(v.get<long>());
  if (j.contains("second_sizes"))
    for (const auto& v : j["second_sizes"]) spec.second_sizes.push_back(v.get<long>());
  if (j.contains("parameters")) {
    if (!j["parameters"].is_object())
      throw ConfigError("'parameters' must map symbol names to numbers");
    for (const auto& [key, value] : j["parameters"].items()) {
      if (!value.is_number())
        throw ConfigError("parameter '" + key + "' must be a number");
      spec.parameters[key] = value.get<double>();
    }
  }
  if (j.contains("covariate")) {
    const auto& c = j["covariate"];
    if (!c.is_object() || !c.contains("kind"))
      throw ConfigError("'covariate' needs a 'kind' of grid or years");
    const auto kind = c["kind"].get<std::string>();
    if (kind == "grid") {
      spec.covariate.kind = CovariateDesign::Kind::grid;
      if (!c.contains("values") || !c["values"].is_array() || c["values"].empty())
        throw ConfigError("a grid covariate design needs a non-empty 'values' array");
      for (const auto& v : c["values"]) spec.covariate.grid.push_back(v.get<double>());
    } else if (kind == "years") {
      spec.covariate.kind = CovariateDesign::Kind::years;
    } else {
      throw ConfigError("unknown covariate kind '" + kind + "'");
    }
  }
  return spec;
}

std::string truth_to_json(const GeneratedData& data) {
  nlohmann::ordered_json j;
  j["model"] = data.model_tag;
  j["seed"] = data.seed;
  nlohmann::ordered_json params;
  for (const auto& [name, value] : data.truth) params[name] = value;
  j["parameters"] = params;
  return j.dump(2) + "\n";
}

}  // namespace hierbayes
