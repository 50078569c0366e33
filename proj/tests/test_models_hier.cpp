#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "hierbayes/data.hpp"
#include "hierbayes/distributions.hpp"
#include "hierbayes/errors.hpp"
#include "hierbayes/models_hier.hpp"
#include "support/ks.hpp"
#include "support/quadrature.hpp"
#include "support/stats.hpp"

using namespace hierbayes;

namespace {

ObservationTable table_from(const std::vector<std::vector<double>>& groups,
                            const std::vector<std::string>& labels = {}) {
  std::string csv = "unit,region,income\n";
  int unit = 0;
  for (std::size_t j = 0; j < groups.size(); ++j) {
    const std::string label = labels.empty() ? "g" + std::to_string(j) : labels[j];
    for (const double y : groups[j])
      csv += "u" + std::to_string(unit++) + "," + label + "," + format_double(y) + "\n";
  }
  TableSchema schema;
  schema.unit = "unit";
  schema.group = "region";
  schema.response = "income";
  return load_table_text(csv, schema);
}

// groups drawn around pinned centers with pinned within-group variances
std::vector<std::vector<double>> draw_groups(const std::vector<double>& centers,
                                             const std::vector<double>& vars,
                                             std::size_t n_per, std::uint64_t seed) {
  RandomStream rng(seed, 0);
  std::vector<std::vector<double>> out;
  for (std::size_t j = 0; j < centers.size(); ++j) {
    std::vector<double> g(n_per);
    for (auto& y : g) y = sample_normal(centers[j], vars[j], rng);
    out.push_back(std::move(g));
  }
  return out;
}

ChainConfig config_for(std::uint64_t seed, int chains = 2, long iters = 4000,
                       long burn = 1500) {
  ChainConfig c;
  c.chains = chains;
  c.iterations = iters;
  c.burn_in = burn;
  c.seed = seed;
  return c;
}

double column_mean(const ModelFit& fit, const std::string& name) {
  const int k = fit.draws.param_index(name);
  return testsupport::mean(fit.draws.column(k));
}

}  // namespace

TEST_CASE("common-variance fit recovers pinned truth") {
  // mu = 50, tau = 10, sigma = 5; group centers drawn once and pinned
  RandomStream prior(101, 0);
  std::vector<double> centers(6);
  for (auto& c : centers) c = sample_normal(50.0, 100.0, prior);
  const auto groups = draw_groups(centers, std::vector<double>(6, 25.0), 40, 102);
  auto fit = fit_hier_common_sigma(table_from(groups), config_for(1, 2, 5000, 2000));

  CHECK(std::abs(column_mean(fit, "mu") - 50.0) < 4.0);
  const double tau = std::sqrt(column_mean(fit, "tau2"));
  CHECK(tau > 5.0);
  CHECK(tau < 20.0);
  CHECK(std::abs(std::sqrt(column_mean(fit, "sigma2")) - 5.0) < 0.6);
}

TEST_CASE("kernel means shrink every group toward the hyper-mean") {
  const auto groups =
      draw_groups({10.0, 20.0, 30.0, 40.0}, std::vector<double>(4, 9.0), 12, 103);
  auto table = table_from(groups);
  const auto s = summarize(table);
  auto fit = fit_hier_common_sigma(table, config_for(2, 1, 1600, 600));

  const int iMu = fit.draws.param_index("mu");
  const int iSigma2 = fit.draws.param_index("sigma2");
  const int iTau2 = fit.draws.param_index("tau2");
  for (long r = 0; r < fit.draws.retained; ++r) {
    const double mu = fit.draws.at(0, r, iMu);
    const double sigma2 = fit.draws.at(0, r, iSigma2);
    const double tau2 = fit.draws.at(0, r, iTau2);
    for (std::size_t j = 0; j < s.groups.size(); ++j) {
      const double ybar = s.groups[j].mean;
      const double sbar2 = sigma2 / static_cast<double>(s.groups[j].n);
      const double m = (ybar / sbar2 + mu / tau2) / (1.0 / sbar2 + 1.0 / tau2);
      // strictly between the group mean and the hyper-mean
      CHECK((m - ybar) * (m - mu) < 0.0);
    }
  }
}

TEST_CASE("identical groups collapse onto a common location") {
  std::vector<std::vector<double>> groups(5, {4.0, 5.0, 6.0, 5.5, 4.5, 5.2});
  auto fit = fit_hier_common_sigma(table_from(groups), config_for(3));
  std::vector<double> means;
  double sd_sum = 0.0;
  for (int j = 0; j < 5; ++j) {
    auto col = fit.draws.column(j);
    means.push_back(testsupport::mean(col));
    sd_sum += std::sqrt(testsupport::variance(col));
  }
  const double spread = *std::max_element(means.begin(), means.end()) -
                        *std::min_element(means.begin(), means.end());
  CHECK(spread < sd_sum / 5.0);
}

TEST_CASE("hierarchical fits demand at least three groups") {
  const auto groups = draw_groups({0.0, 1.0}, {1.0, 1.0}, 10, 104);
  CHECK_THROWS_WITH_AS(fit_hier_common_sigma(table_from(groups), config_for(4)),
                       "hierarchical model needs at least 3 groups (got 2); use the "
                       "pooling models instead",
                       DataError);
  CHECK_THROWS_AS(
      fit_hier_varying_sigma(table_from(groups), NuStrategy::parse("fixed"), config_for(4)),
      DataError);
}

TEST_CASE("tau2 conditional matches quadrature") {
  const std::vector<double> theta{1.0, 3.0, 4.5, 7.0, 9.0};
  const double mu = 5.0;
  double sq = 0.0;
  for (const double t : theta) sq += (t - mu) * (t - mu);
  const double J = 5.0;
  const double s2 = sq / (J - 1.0);

  RandomStream rng(201, 0);
  std::vector<double> draws(100000);
  for (auto& d : draws) d = draw_tau2_conditional(theta, mu, rng);

  testsupport::NumericCdf cdf(
      [&](double v) { return std::exp(log_scaled_inv_chi2_pdf(v, J - 1.0, s2)); },
      s2 / 512.0, s2 * 512.0, 8192, true);
  CHECK(testsupport::ks_statistic(draws, cdf) <
        testsupport::ks_critical(draws.size(), 0.001));
}

TEST_CASE("rho2 conditional matches quadrature of its gamma density") {
  const std::vector<double> sigma2{2.0, 3.0, 5.0, 8.0, 1.5, 4.0};
  const double nu = 7.0;
  const double J = 6.0;
  double sum_inv = 0.0;
  for (const double s : sigma2) sum_inv += 1.0 / s;
  const double rho2_hat = J / sum_inv;

  RandomStream rng(202, 0);
  std::vector<double> draws(100000);
  for (auto& d : draws) d = draw_rho2_conditional(sigma2, nu, rng);

  // density written exactly as displayed: x^(J nu/2 - 1) exp(-J nu x / (2 rho2_hat))
  testsupport::NumericCdf cdf(
      [&](double x) {
        return std::pow(x, J * nu / 2.0 - 1.0) * std::exp(-J * nu * x / (2.0 * rho2_hat));
      },
      rho2_hat / 256.0, rho2_hat * 64.0, 8192, true);
  CHECK(testsupport::ks_statistic(draws, cdf) <
        testsupport::ks_critical(draws.size(), 0.001));
}

TEST_CASE("varying-variance fixed strategy recovers group variances") {
  // sigma_j^2 drawn once from the nu = 8, rho2 = 4 prior and pinned
  RandomStream prior(301, 0);
  std::vector<double> vars(6);
  for (auto& v : vars) v = sample_scaled_inv_chi2(8.0, 4.0, prior);
  RandomStream centers_rng(302, 0);
  std::vector<double> centers(6);
  for (auto& c : centers) c = sample_normal(20.0, 25.0, centers_rng);

  const auto groups = draw_groups(centers, vars, 40, 303);
  auto fit = fit_hier_varying_sigma(table_from(groups), NuStrategy::parse("fixed"),
                                    config_for(5, 2, 5000, 2000));
  REQUIRE(fit.constants.size() == 1);
  CHECK(fit.constants[0].first == "nu");
  for (int j = 0; j < 6; ++j) {
    const double est = column_mean(fit, "sigma2[g" + std::to_string(j) + "]");
    CHECK(est > 0.5 * vars[j]);
    CHECK(est < 2.0 * vars[j]);
  }
}

TEST_CASE("huge pinned nu collapses the group variances") {
  const auto groups = draw_groups({0.0, 2.0, 4.0, 6.0, 8.0, 10.0},
                                  {2.0, 3.0, 4.0, 5.0, 6.0, 2.5}, 40, 304);
  auto fit = fit_hier_varying_sigma(table_from(groups), NuStrategy::parse("fixed:1e6"),
                                    config_for(6));
  std::vector<double> means;
  for (int j = 0; j < 6; ++j)
    means.push_back(column_mean(fit, "sigma2[g" + std::to_string(j) + "]"));
  const double lo = *std::min_element(means.begin(), means.end());
  const double hi = *std::max_element(means.begin(), means.end());
  CHECK((hi - lo) / lo < 0.02);
}

TEST_CASE("relabeling groups permutes summaries without changing draws") {
  const auto groups = draw_groups({1.0, 5.0, 9.0}, {2.0, 2.0, 2.0}, 15, 305);
  auto base = fit_hier_varying_sigma(table_from(groups, {"north", "south", "east"}),
                                     NuStrategy::parse("exponential"), config_for(7));
  auto renamed = fit_hier_varying_sigma(table_from(groups, {"south", "north", "west"}),
                                        NuStrategy::parse("exponential"), config_for(7));
  CHECK(base.draws.chains == renamed.draws.chains);
  CHECK(base.draws.param_index("theta[north]") == renamed.draws.param_index("theta[south]"));
  CHECK(renamed.draws.params[2].name == "theta[west]");
}

TEST_CASE("flatter power priors pool the variances harder") {
  const auto groups = draw_groups({0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
                                  {1.0, 2.0, 3.0, 4.0, 6.0, 8.0}, 30, 306);
  auto table = table_from(groups);
  auto soft = fit_hier_varying_sigma(table, NuStrategy::parse("power:0.1"), config_for(8));
  auto hard = fit_hier_varying_sigma(table, NuStrategy::parse("power:3"), config_for(8));
  auto spread = [](const ModelFit& fit) {
    std::vector<double> means;
    for (int j = 0; j < 6; ++j)
      means.push_back(testsupport::mean(
          fit.draws.column(fit.draws.param_index("sigma2[g" + std::to_string(j) + "]"))));
    return testsupport::variance(means);
  };
  CHECK(spread(soft) < spread(hard));
}

TEST_CASE("power grid widens when the conditional escapes the window") {
  // nearly equal sample variances push nu far beyond its moment estimate
  const auto groups = draw_groups({0.0, 1.0, 2.0, 3.0, 4.0, 5.0},
                                  std::vector<double>(6, 4.0), 400, 307);
  auto fit = fit_hier_varying_sigma(table_from(groups), NuStrategy::parse("power:0.5"),
                                    config_for(9));
  CHECK(fit.grid_widened);

  const auto tame = draw_groups({0.0, 1.0, 2.0}, {1.0, 4.0, 16.0}, 40, 308);
  auto tame_fit = fit_hier_varying_sigma(table_from(tame), NuStrategy::parse("power:3"),
                                         config_for(10));
  CHECK_FALSE(tame_fit.grid_widened);
}

TEST_CASE("exponential strategy samples nu with a healthy walk") {
  RandomStream prior(309, 0);
  std::vector<double> vars(8);
  for (auto& v : vars) v = sample_scaled_inv_chi2(6.0, 3.0, prior);
  const auto groups = draw_groups(std::vector<double>(8, 0.0), vars, 30, 310);
  auto fit = fit_hier_varying_sigma(table_from(groups), NuStrategy::parse("exponential"),
                                    config_for(11));
  const int iNu = fit.draws.param_index("nu");
  const auto nu = fit.draws.column(iNu);
  CHECK(*std::min_element(nu.begin(), nu.end()) > 0.0);
  const double rate = fit.draws.acceptance_rates.at("nu");
  CHECK(rate > 0.2);
  CHECK(rate < 0.7);
}

TEST_CASE("strategies expose the right parameter sets") {
  const auto groups = draw_groups({0.0, 3.0, 6.0}, {1.0, 2.0, 4.0}, 20, 311);
  auto table = table_from(groups);
  auto fixed = fit_hier_varying_sigma(table, NuStrategy::parse("fixed"), config_for(12));
  CHECK(fixed.draws.param_index("nu") == -1);
  bool recorded = false;
  for (const auto& [key, value] : fixed.constants)
    if (key == "nu" && value > 0.0) recorded = true;
  CHECK(recorded);
  auto power = fit_hier_varying_sigma(table, NuStrategy::parse("power:2"), config_for(12));
  CHECK(power.draws.param_index("nu") >= 0);
  CHECK(power.draws.model_tag == "hier-varying-power:2");
}

TEST_CASE("degenerate variance spread points to the common-variance model") {
  std::vector<std::vector<double>> groups;
  for (int j = 0; j < 4; ++j) groups.push_back({0.0 + j, 1.0 + j, 2.0 + j});
  auto table = table_from(groups);
  CHECK_THROWS_AS(fit_hier_varying_sigma(table, NuStrategy::parse("fixed"), config_for(13)),
                  DataError);
  CHECK_THROWS_AS(
      fit_hier_varying_sigma(table, NuStrategy::parse("exponential"), config_for(13)),
      DataError);
  // the power strategy falls back to a default window instead
  auto fit = fit_hier_varying_sigma(table, NuStrategy::parse("power:1"), config_for(13));
  CHECK(fit.draws.param_index("nu") >= 0);
}

TEST_CASE("nu strategy parsing validates its arguments") {
  CHECK(NuStrategy::parse("fixed").kind == NuStrategy::Kind::fixed);
  CHECK(NuStrategy::parse("fixed:12.5").fixed_nu == 12.5);
  CHECK(NuStrategy::parse("power:2").h == 2.0);
  CHECK(NuStrategy::parse("exponential").tag() == "exponential");
  CHECK_THROWS_AS(NuStrategy::parse("power"), ConfigError);
  CHECK_THROWS_AS(NuStrategy::parse("power:-1"), ConfigError);
  CHECK_THROWS_AS(NuStrategy::parse("gamma"), ConfigError);
  CHECK_THROWS_AS(NuStrategy::parse("fixed:abc"), ConfigError);
}

TEST_CASE("varying-variance fits are deterministic") {
  const auto groups = draw_groups({0.0, 4.0, 8.0}, {1.0, 3.0, 2.0}, 25, 312);
  auto table = table_from(groups);
  auto a = fit_hier_varying_sigma(table, NuStrategy::parse("exponential"), config_for(21));
  auto b = fit_hier_varying_sigma(table, NuStrategy::parse("exponential"), config_for(21));
  CHECK(a.draws.chains == b.draws.chains);
}
