#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "hierbayes/data.hpp"
#include "hierbayes/distributions.hpp"
#include "hierbayes/errors.hpp"
#include "hierbayes/models_two_cluster.hpp"
#include "support/ks.hpp"
#include "support/quadrature.hpp"
#include "support/stats.hpp"

using namespace hierbayes;

namespace {

// cells[j][k] -> CSV with a second-cluster column; labels follow index order
ObservationTable table_from_cells(const std::vector<std::vector<std::vector<double>>>& cells,
                                  const std::vector<std::string>& levels) {
  std::string csv = "unit,region,edu,income\n";
  int unit = 0;
  for (std::size_t j = 0; j < cells.size(); ++j)
    for (std::size_t k = 0; k < cells[j].size(); ++k)
      for (const double y : cells[j][k])
        csv += "u" + std::to_string(unit++) + ",g" + std::to_string(j) + "," + levels[k] +
               "," + format_double(y) + "\n";
  TableSchema schema;
  schema.unit = "unit";
  schema.group = "region";
  schema.response = "income";
  schema.second = "edu";
  return load_table_text(csv, schema);
}

// additive truth: y = theta_j + lambda_k + noise
std::vector<std::vector<std::vector<double>>> draw_cells(const std::vector<double>& theta,
                                                         const std::vector<double>& lambda,
                                                         double var, std::size_t n_per,
                                                         std::uint64_t seed) {
  RandomStream rng(seed, 0);
  std::vector<std::vector<std::vector<double>>> cells(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    cells[j].resize(lambda.size());
    for (std::size_t k = 0; k < lambda.size(); ++k) {
      cells[j][k].resize(n_per);
      for (auto& y : cells[j][k]) y = sample_normal(theta[j] + lambda[k], var, rng);
    }
  }
  return cells;
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
  return testsupport::mean(fit.draws.column(fit.draws.param_index(name)));
}

const std::vector<std::string> kLevels{"low", "mid", "high"};

}  // namespace

TEST_CASE("prior pack recovers pinned level offsets") {
  const std::vector<double> theta{42.0, 55.0, 49.0, 61.0, 47.0, 52.0};
  const std::vector<double> lambda{-5.0, 0.0, 5.0};
  auto table = table_from_cells(draw_cells(theta, lambda, 4.0, 40, 71), kLevels);
  const auto priors = build_two_cluster_priors(table, config_for(1));

  REQUIRE(priors.lambda_hat.size() == 3);
  double sum = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(std::abs(priors.lambda_hat[k] - lambda[k]) < 1.5);
    sum += priors.lambda_hat[k];
    CHECK(priors.nu_hat[k] > 0.0);
  }
  CHECK(std::abs(sum) < 2.0);
  CHECK(priors.xi2_hat > 0.0);
  CHECK(priors.tau2_hat > 0.0);
  CHECK(priors.sigma2_mu_hat > 0.0);
  CHECK(priors.second_labels == kLevels);
  // the all-rows fit centers mu on the overall location
  CHECK(std::abs(priors.mu_hat - 51.0) < 4.0);
}

TEST_CASE("identical levels give offsets within MC error of zero") {
  const std::vector<double> theta{10.0, 14.0, 12.0, 16.0};
  const std::vector<double> lambda{0.0, 0.0};
  auto table = table_from_cells(draw_cells(theta, lambda, 4.0, 40, 72),
                                {"low", "high"});
  const auto priors = build_two_cluster_priors(table, config_for(2));
  for (const double l : priors.lambda_hat) CHECK(std::abs(l) < 0.5);
}

TEST_CASE("partition validation names the offending cells") {
  const std::vector<double> theta{1.0, 2.0, 3.0};

  SUBCASE("no second-cluster column") {
    std::string csv = "unit,region,income\nu0,a,1\nu1,b,2\n";
    TableSchema schema;
    schema.unit = "unit";
    schema.group = "region";
    schema.response = "income";
    auto table = load_table_text(csv, schema);
    CHECK_THROWS_AS(build_two_cluster_priors(table, config_for(3)), SchemaError);
  }

  SUBCASE("a single level points to the one-cluster model") {
    auto table = table_from_cells(draw_cells(theta, {0.0}, 1.0, 5, 73), {"only"});
    try {
      build_two_cluster_priors(table, config_for(3));
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("one-cluster") != std::string::npos);
    }
  }

  SUBCASE("an empty cell is named") {
    // g2 never appears at level high
    std::string csv = "unit,region,edu,income\n";
    int unit = 0;
    for (int j = 0; j < 3; ++j)
      for (const char* level : {"low", "high"}) {
        if (j == 2 && std::string(level) == "high") continue;
        for (int i = 0; i < 4; ++i)
          csv += "u" + std::to_string(unit++) + ",g" + std::to_string(j) + "," + level +
                 "," + std::to_string(10 * j + i) + "\n";
      }
    TableSchema schema;
    schema.unit = "unit";
    schema.group = "region";
    schema.response = "income";
    schema.second = "edu";
    auto table = load_table_text(csv, schema);
    try {
      build_two_cluster_priors(table, config_for(3));
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("g2|high") != std::string::npos);
    }
  }

  SUBCASE("a one-row cell is too small for prior construction") {
    auto cells = draw_cells(theta, {0.0, 1.0}, 1.0, 5, 74);
    cells[1][0].resize(1);
    auto table = table_from_cells(cells, {"low", "high"});
    try {
      build_two_cluster_priors(table, config_for(3));
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("g1|low") != std::string::npos);
    }
  }
}

TEST_CASE("posterior level contrast recovers the generating gap") {
  const std::vector<double> theta{25000.0, 32000.0, 28000.0, 35000.0, 30000.0, 27000.0};
  const std::vector<double> lambda{-7500.0, 0.0, 7500.0};
  auto table = table_from_cells(draw_cells(theta, lambda, 9e6, 30, 75), kLevels);
  const auto priors = build_two_cluster_priors(table, config_for(4));
  const auto fit = fit_two_cluster(table, priors, config_for(4));

  CHECK(fit.n_obs == 18);
  CHECK(fit.obs_unit == "cell");
  CHECK(fit.draws.model_tag == "two-cluster");

  const auto hi = fit.draws.column(fit.draws.param_index("lambda[high]"));
  const auto lo = fit.draws.column(fit.draws.param_index("lambda[low]"));
  double contrast = 0.0;
  for (std::size_t s = 0; s < hi.size(); ++s) contrast += hi[s] - lo[s];
  contrast /= static_cast<double>(hi.size());
  CHECK(contrast == doctest::Approx(15000.0).epsilon(0.2));
}

TEST_CASE("group-plus-level means are seed invariant even though the split is soft") {
  const std::vector<double> theta{40.0, 55.0, 45.0, 60.0, 50.0};
  const std::vector<double> lambda{-6.0, 1.0, 5.0};
  auto table = table_from_cells(draw_cells(theta, lambda, 9.0, 25, 76), kLevels);
  const auto priors = build_two_cluster_priors(table, config_for(5));
  const auto a = fit_two_cluster(table, priors, config_for(11, 2, 6000, 2000));
  const auto b = fit_two_cluster(table, priors, config_for(12, 2, 6000, 2000));

  // thinning tames autocorrelation so the iid KS critical value applies
  auto cell_mean_draws = [](const ModelFit& fit, const std::string& g, const std::string& l) {
    const auto th = fit.draws.column(fit.draws.param_index("theta[" + g + "]"));
    const auto la = fit.draws.column(fit.draws.param_index("lambda[" + l + "]"));
    std::vector<double> out;
    for (std::size_t s = 0; s < th.size(); s += 5) out.push_back(th[s] + la[s]);
    return out;
  };
  for (const auto& [g, l] : std::vector<std::pair<std::string, std::string>>{
           {"g0", "low"}, {"g2", "mid"}, {"g4", "high"}}) {
    const auto da = cell_mean_draws(a, g, l);
    const auto db = cell_mean_draws(b, g, l);
    const double d = testsupport::ks_statistic_two_sample(da, db);
    CHECK(d < testsupport::ks_critical_two_sample(da.size(), db.size(), 0.001));
  }
}

TEST_CASE("offsets stay near zero when the data carry no level effect") {
  const std::vector<double> theta{5.0, 9.0, 7.0, 11.0};
  const std::vector<double> lambda{0.0, 0.0, 0.0};
  auto table = table_from_cells(draw_cells(theta, lambda, 4.0, 40, 77), kLevels);
  const auto priors = build_two_cluster_priors(table, config_for(6));
  const auto fit = fit_two_cluster(table, priors, config_for(6));
  for (const auto& level : kLevels)
    CHECK(std::abs(column_mean(fit, "lambda[" + level + "]")) < 0.5);
}

TEST_CASE("cell variance conditional matches its density") {
  const double nu = 5.0, rho2 = 4.0, n = 12.0, v = 7.0;
  const double dof = nu + n;
  const double s2 = (nu * rho2 + n * v) / dof;

  RandomStream rng(404, 0);
  const std::size_t N = 100000;
  std::vector<double> draws(N);
  for (auto& x : draws) x = draw_cell_variance_conditional(nu, rho2, n, v, rng);

  testsupport::NumericCdf cdf([dof, s2](double x) {
    return std::exp(log_scaled_inv_chi2_pdf(x, dof, s2));
  }, 1e-6, 400.0);
  CHECK(testsupport::ks_statistic(draws, cdf) < 0.01);
}

TEST_CASE("location trades off between mu and the offsets") {
  // unbalanced cells make the soft split visible as negative correlation
  const std::vector<double> theta{30.0, 40.0, 35.0, 45.0};
  const std::vector<double> lambda{-4.0, 4.0};
  auto cells = draw_cells(theta, lambda, 9.0, 60, 78);
  for (std::size_t j = 0; j < cells.size(); ++j)
    cells[j][j % 2].resize(6 + 2 * j);
  auto table = table_from_cells(cells, {"low", "high"});
  const auto priors = build_two_cluster_priors(table, config_for(7));
  const auto fit = fit_two_cluster(table, priors, config_for(7));

  const auto mu = fit.draws.column(fit.draws.param_index("mu"));
  const auto lo = fit.draws.column(fit.draws.param_index("lambda[low]"));
  const auto hi = fit.draws.column(fit.draws.param_index("lambda[high]"));
  std::vector<double> lbar(mu.size());
  for (std::size_t s = 0; s < mu.size(); ++s) lbar[s] = 0.5 * (lo[s] + hi[s]);
  CHECK(testsupport::correlation(mu, lbar) < -0.1);
}

TEST_CASE("prior construction and fitting are deterministic") {
  const std::vector<double> theta{3.0, 6.0, 9.0};
  const std::vector<double> lambda{-1.0, 1.0};
  auto table = table_from_cells(draw_cells(theta, lambda, 1.0, 12, 79), {"low", "high"});
  const auto p1 = build_two_cluster_priors(table, config_for(8));
  const auto p2 = build_two_cluster_priors(table, config_for(8));
  CHECK(p1.mu_hat == p2.mu_hat);
  CHECK(p1.xi2_hat == p2.xi2_hat);
  CHECK(p1.lambda_hat == p2.lambda_hat);
  CHECK(p1.nu_hat == p2.nu_hat);

  const auto f1 = fit_two_cluster(table, p1, config_for(8));
  const auto f2 = fit_two_cluster(table, p2, config_for(8));
  CHECK(f1.draws.chains == f2.draws.chains);
}

TEST_CASE("priors from a different partition are rejected") {
  const std::vector<double> theta{3.0, 6.0, 9.0};
  auto table = table_from_cells(draw_cells(theta, {-1.0, 1.0}, 1.0, 12, 80),
                                {"low", "high"});
  auto priors = build_two_cluster_priors(table, config_for(9));

  auto shuffled = priors;
  std::swap(shuffled.second_labels[0], shuffled.second_labels[1]);
  CHECK_THROWS_AS(fit_two_cluster(table, shuffled, config_for(9)), ConfigError);

  auto truncated = priors;
  truncated.lambda_hat.pop_back();
  CHECK_THROWS_AS(fit_two_cluster(table, truncated, config_for(9)), ConfigError);

  auto negative = priors;
  negative.xi2_hat = -1.0;
  CHECK_THROWS_AS(fit_two_cluster(table, negative, config_for(9)), ConfigError);
}

TEST_CASE("pointwise likelihood sums the cell series") {
  const std::vector<double> theta{3.0, 6.0, 9.0};
  const std::vector<double> lambda{-1.0, 1.0};
  auto cells = draw_cells(theta, lambda, 1.0, 8, 81);
  auto table = table_from_cells(cells, {"low", "high"});
  const auto priors = build_two_cluster_priors(table, config_for(10));
  const auto fit = fit_two_cluster(table, priors, config_for(10));

  const auto& chain = fit.draws.chains[0];
  const std::span<const double> row{chain.data(), fit.draws.n_params()};
  std::vector<double> out;
  fit.pointwise(row, out);
  REQUIRE(out.size() == 6);

  const int iLam0 = fit.draws.param_index("lambda[low]");
  const int iSig0 = fit.draws.param_index("sigma2[g0|low]");
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 2; ++k) {
      const double m = row[j] + row[iLam0 + k];
      const double s2 = row[iSig0 + j * 2 + k];
      double direct = 0.0;
      for (const double y : cells[j][k]) direct += log_normal_pdf(y, m, s2);
      CHECK(out[j * 2 + k] == doctest::Approx(direct).epsilon(1e-9));
    }
}
