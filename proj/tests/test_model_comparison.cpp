#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "hierbayes/data.hpp"
#include "hierbayes/errors.hpp"
#include "hierbayes/model_comparison.hpp"
#include "hierbayes/models_hier.hpp"
#include "hierbayes/models_pooling.hpp"

using namespace hierbayes;

namespace {

// A fit whose single parameter indexes a prepared log-likelihood row, so the
// WAIC inputs are fully under test control.
ModelFit fake_fit(const std::vector<std::vector<double>>& loglik_by_draw,
                  std::uint64_t digest = 42, const std::string& unit = "row") {
  ModelFit fit;
  fit.draws.model_tag = "fake";
  fit.draws.params = {{"s", Domain::real}};
  fit.draws.retained = static_cast<long>(loglik_by_draw.size());
  fit.draws.chains.resize(1);
  for (std::size_t s = 0; s < loglik_by_draw.size(); ++s)
    fit.draws.chains[0].push_back(static_cast<double>(s));
  fit.n_obs = loglik_by_draw.front().size();
  fit.data_digest = digest;
  fit.obs_unit = unit;
  fit.pointwise = [loglik_by_draw](std::span<const double> row, std::vector<double>& out) {
    out = loglik_by_draw[static_cast<std::size_t>(row[0])];
  };
  return fit;
}

ObservationTable table_from(const std::vector<std::vector<double>>& groups) {
  std::string csv = "unit,region,income\n";
  int unit = 0;
  for (std::size_t j = 0; j < groups.size(); ++j)
    for (const double y : groups[j])
      csv += "u" + std::to_string(unit++) + ",g" + std::to_string(j) + "," +
             format_double(y) + "\n";
  TableSchema schema;
  schema.unit = "unit";
  schema.group = "region";
  schema.response = "income";
  return load_table_text(csv, schema);
}

ChainConfig config_for(unsigned long long seed, long iters = 3000, long burn = 1000) {
  ChainConfig c;
  c.seed = seed;
  c.chains = 2;
  c.iterations = iters;
  c.burn_in = burn;
  return c;
}

// Direct double loop over a materialized draws-by-observations matrix.
WaicReport brute_force_waic(const ModelFit& fit) {
  std::vector<std::vector<double>> L;
  std::vector<double> row(fit.draws.n_params()), ll;
  for (std::size_t c = 0; c < fit.draws.chains.size(); ++c)
    for (long t = 0; t < fit.draws.retained; ++t) {
      for (std::size_t k = 0; k < row.size(); ++k)
        row[k] = fit.draws.at(static_cast<int>(c), t, static_cast<int>(k));
      fit.pointwise(row, ll);
      L.push_back(ll);
    }
  const std::size_t S = L.size(), n = fit.n_obs;
  WaicReport rep;
  rep.lppd_i.resize(n);
  rep.p_waic_i.resize(n);
  std::vector<double> waic_i(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = L[0][i];
    for (std::size_t s = 1; s < S; ++s) mx = std::max(mx, L[s][i]);
    double se = 0.0, mean = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      se += std::exp(L[s][i] - mx);
      mean += L[s][i];
    }
    mean /= static_cast<double>(S);
    double var = 0.0;
    for (std::size_t s = 0; s < S; ++s) var += (L[s][i] - mean) * (L[s][i] - mean);
    rep.lppd_i[i] = mx + std::log(se / static_cast<double>(S));
    rep.p_waic_i[i] = var / static_cast<double>(S - 1);
    rep.lppd += rep.lppd_i[i];
    rep.p_waic += rep.p_waic_i[i];
    waic_i[i] = -2.0 * rep.lppd_i[i] + 2.0 * rep.p_waic_i[i];
  }
  rep.waic = -2.0 * rep.lppd + 2.0 * rep.p_waic;
  double wm = 0.0;
  for (const double w : waic_i) wm += w;
  wm /= static_cast<double>(n);
  double var = 0.0;
  for (const double w : waic_i) var += (w - wm) * (w - wm);
  rep.se_waic = n > 1 ? std::sqrt(static_cast<double>(n) * var / (static_cast<double>(n) - 1.0))
                      : 0.0;
  return rep;
}

bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

WaicReport synthetic_report(const std::string& tag, double waic, double se,
                            std::uint64_t digest = 7, std::size_t n = 10,
                            const std::string& unit = "row") {
  WaicReport r;
  r.model_tag = tag;
  r.waic = waic;
  r.se_waic = se;
  r.lo = waic - 1.96 * se;
  r.hi = waic + 1.96 * se;
  r.data_digest = digest;
  r.n_obs = n;
  r.obs_unit = unit;
  return r;
}

}  // namespace

TEST_CASE("equal densities collapse the penalty") {
  const double l = std::log(0.5);
  const auto rep = compute_waic(fake_fit({{l}, {l}}));
  CHECK(rep.lppd == doctest::Approx(l).epsilon(1e-14));
  CHECK(rep.p_waic == 0.0);
  CHECK(rep.waic == doctest::Approx(1.3862943611198906).epsilon(1e-12));
  CHECK(rep.se_waic == 0.0);
  CHECK(rep.draws_used == 2);
  CHECK(rep.elpd() == doctest::Approx(l).epsilon(1e-14));
}

TEST_CASE("the two-point oracle values are reproduced") {
  const auto rep = compute_waic(fake_fit({{-1.0}, {-3.0}}));
  CHECK(rep.lppd == doctest::Approx(-1.5662191695169727).epsilon(1e-13));
  CHECK(rep.p_waic == doctest::Approx(2.0).epsilon(1e-13));
  CHECK(rep.waic == doctest::Approx(7.1324383390339456).epsilon(1e-13));
}

TEST_CASE("streaming WAIC matches the brute force on a real fit") {
  std::mt19937_64 g(31);
  std::normal_distribution<double> e(20.0, 3.0);
  std::vector<double> a, b;
  for (int i = 0; i < 25; ++i) a.push_back(e(g));
  for (int i = 0; i < 25; ++i) b.push_back(e(g));
  const auto fit = fit_complete_pooling(table_from({a, b}), config_for(8, 1500, 500));
  REQUIRE(fit.draws.retained * 2 == 2000);

  const auto fast = compute_waic(fit);
  const auto slow = brute_force_waic(fit);
  CHECK(close(fast.lppd, slow.lppd, 1e-10));
  CHECK(close(fast.p_waic, slow.p_waic, 1e-10));
  CHECK(close(fast.waic, slow.waic, 1e-10));
  CHECK(close(fast.se_waic, slow.se_waic, 1e-10));
  for (std::size_t i = 0; i < fast.lppd_i.size(); ++i) {
    CHECK(close(fast.lppd_i[i], slow.lppd_i[i], 1e-10));
    CHECK(close(fast.p_waic_i[i], slow.p_waic_i[i], 1e-10));
  }
  CHECK(fast.waic == doctest::Approx(-2.0 * fast.lppd + 2.0 * fast.p_waic));
  for (const double p : fast.p_waic_i) CHECK(p >= 0.0);
}

TEST_CASE("WAIC is invariant to chain concatenation order") {
  std::mt19937_64 g(32);
  std::normal_distribution<double> e(5.0, 1.0);
  std::vector<double> a;
  for (int i = 0; i < 30; ++i) a.push_back(e(g));
  auto fit = fit_complete_pooling(table_from({a}), config_for(9, 1200, 400));
  const auto before = compute_waic(fit);
  std::swap(fit.draws.chains[0], fit.draws.chains[1]);
  const auto after = compute_waic(fit);
  CHECK(close(before.lppd, after.lppd, 1e-12));
  CHECK(close(before.p_waic, after.p_waic, 1e-12));
  CHECK(close(before.waic, after.waic, 1e-12));
}

TEST_CASE("duplicating every draw keeps lppd and rescales the variance divisor") {
  std::mt19937_64 g(33);
  std::normal_distribution<double> e(5.0, 1.0);
  std::vector<double> a;
  for (int i = 0; i < 30; ++i) a.push_back(e(g));
  auto fit = fit_complete_pooling(table_from({a}), config_for(10, 1200, 400));
  const auto base = compute_waic(fit);
  const double S = static_cast<double>(base.draws_used);

  auto doubled = fit;
  doubled.draws.chains.push_back(fit.draws.chains[0]);
  doubled.draws.chains.push_back(fit.draws.chains[1]);
  const auto rep = compute_waic(doubled);
  const auto oracle = brute_force_waic(doubled);

  CHECK(close(rep.lppd, base.lppd, 1e-12));
  CHECK(close(rep.p_waic, oracle.p_waic, 1e-10));
  // duplicated values double the squared deviations while the divisor moves
  // from S-1 to 2S-1
  CHECK(close(rep.p_waic, base.p_waic * 2.0 * (S - 1.0) / (2.0 * S - 1.0), 1e-10));
}

TEST_CASE("a non-finite term is refused naming the observation and draw") {
  std::vector<std::vector<double>> L{{-1.0, -2.0, -1.5, -0.5},
                                     {-1.1, -2.1, -std::numeric_limits<double>::infinity(), -0.4}};
  try {
    compute_waic(fake_fit(L));
    REQUIRE(false);
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("observation 2") != std::string::npos);
    CHECK(msg.find("draw 1") != std::string::npos);
  }
}

TEST_CASE("fewer than two draws is refused") {
  CHECK_THROWS_AS(compute_waic(fake_fit({{-1.0}})), ConfigError);
  ModelFit no_eval;
  no_eval.draws.retained = 5;
  no_eval.draws.chains.resize(1, std::vector<double>(5, 0.0));
  CHECK_THROWS_AS(compute_waic(no_eval), ConfigError);
}

TEST_CASE("comparison ranks, separates and flags overlap") {
  const auto a = synthetic_report("model-a", 100.0, 2.0);
  const auto b = synthetic_report("model-b", 110.0, 2.0);
  const auto rows = compare({b, a});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].model_tag == "model-a");
  CHECK(rows[0].delta == 0.0);
  CHECK(rows[1].delta == doctest::Approx(10.0));
  CHECK(rows[0].overlaps_best);
  CHECK_FALSE(rows[1].overlaps_best);

  const auto close_rows = compare({synthetic_report("x", 100.0, 4.0),
                                   synthetic_report("y", 103.0, 4.0)});
  CHECK(close_rows[1].overlaps_best);
}

TEST_CASE("ties fall back to lexical tag order") {
  const auto rows = compare({synthetic_report("zeta", 50.0, 1.0),
                             synthetic_report("alpha", 50.0, 1.0)});
  CHECK(rows[0].model_tag == "alpha");
  CHECK(rows[1].model_tag == "zeta");
  CHECK(rows[1].delta == 0.0);
  CHECK(rows[1].overlaps_best);
}

TEST_CASE("incomparable reports are refused with the reason") {
  const auto a = synthetic_report("one-cluster", 10.0, 1.0, 7, 10, "row");
  const auto b = synthetic_report("two-cluster", 12.0, 1.0, 9, 6, "cell");
  CHECK_THROWS_AS(compare({a, b}), ConfigError);
  try {
    compare({a, b});
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'row' vs 'cell'") != std::string::npos);
  }

  const auto c = synthetic_report("other", 12.0, 1.0, 9, 10, "row");
  CHECK_THROWS_AS(compare({a, c}), ConfigError);

  const auto rows = compare({a, b}, true);
  CHECK(rows.size() == 2);
  CHECK_THROWS_AS(compare({a}), ConfigError);
}

TEST_CASE("the text table bolds the winner and can switch scales") {
  const auto rows = compare({synthetic_report("model-a", 100.0, 2.0),
                             synthetic_report("model-b", 110.0, 2.0)});
  const auto text = comparison_table(rows);
  CHECK(text.find("**model-a**") != std::string::npos);
  CHECK(text.find("waic") != std::string::npos);
  const auto unscaled = comparison_table(rows, true);
  CHECK(unscaled.find("elpd_waic") != std::string::npos);
  CHECK(unscaled.find("-50.00") != std::string::npos);
}

TEST_CASE("strong between-group spread prefers the hierarchical model") {
  int hier_wins = 0;
  for (int rep = 0; rep < 20; ++rep) {
    std::mt19937_64 g(900 + rep);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<std::vector<double>> groups;
    for (int j = 0; j < 6; ++j) {
      const double theta = 50.0 + 15.0 * z(g);
      std::vector<double> y;
      for (int i = 0; i < 40; ++i) y.push_back(theta + 5.0 * z(g));
      groups.push_back(y);
    }
    const auto table = table_from(groups);
    const auto pooled = fit_complete_pooling(table, config_for(100 + rep, 2500, 1000));
    const auto hier = fit_hier_varying_sigma(table, NuStrategy::parse("fixed"),
                                             config_for(200 + rep, 2500, 1000));
    const auto rows = compare({compute_waic(pooled), compute_waic(hier)});
    if (rows[0].model_tag == hier.draws.model_tag) ++hier_wins;
  }
  CHECK(hier_wins >= 18);
}
