#include "hierbayes/model_comparison.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "hierbayes/errors.hpp"

namespace hierbayes {

WaicReport compute_waic(const ModelFit& fit) {
  if (!fit.pointwise)
    throw ConfigError("fit carries no pointwise likelihood evaluator");
  const auto& d = fit.draws;
  const long chains = static_cast<long>(d.chains.size());
  const long S = chains * d.retained;
  if (S < 2)
    throw ConfigError("WAIC needs at least 2 retained draws (got " +
                      std::to_string(S) + "); the pointwise variance is undefined");

  const std::size_t n = fit.n_obs;
  // one pass over the draws: streaming log-sum-exp for lppd_i and Welford
  // moments for p_waic_i
  std::vector<double> maxl(n, -std::numeric_limits<double>::infinity());
  std::vector<double> sumexp(n, 0.0), mean(n, 0.0), m2(n, 0.0);
  std::vector<double> row(d.n_params()), ll;
  long seen = 0;
  for (long c = 0; c < chains; ++c) {
    for (long t = 0; t < d.retained; ++t) {
      for (std::size_t k = 0; k < row.size(); ++k)
        row[k] = d.at(static_cast<int>(c), t, static_cast<int>(k));
      fit.pointwise(row, ll);
      if (ll.size() != n)
        throw ConfigError("pointwise evaluator returned " + std::to_string(ll.size()) +
                          " terms for " + std::to_string(n) + " observations");
      ++seen;
      for (std::size_t i = 0; i < n; ++i) {
        const double l = ll[i];
        if (!std::isfinite(l))
          throw DataError("non-finite log-likelihood at observation " +
                          std::to_string(i) + ", chain " + std::to_string(c) +
                          ", draw " + std::to_string(t));
        if (l > maxl[i]) {
          sumexp[i] = sumexp[i] * std::exp(maxl[i] - l) + 1.0;
          maxl[i] = l;
        } else {
          sumexp[i] += std::exp(l - maxl[i]);
        }
        const double delta = l - mean[i];
        mean[i] += delta / static_cast<double>(seen);
        m2[i] += delta * (l - mean[i]);
      }
    }
  }

  WaicReport rep;
  rep.model_tag = d.model_tag;
  rep.obs_unit = fit.obs_unit;
  rep.data_digest = fit.data_digest;
  rep.n_obs = n;
  rep.draws_used = S;
  rep.lppd_i.resize(n);
  rep.p_waic_i.resize(n);
  std::vector<double> waic_i(n);
  for (std::size_t i = 0; i < n; ++i) {
    rep.lppd_i[i] = maxl[i] + std::log(sumexp[i] / static_cast<double>(S));
    rep.p_waic_i[i] = m2[i] / static_cast<double>(S - 1);
    rep.lppd += rep.lppd_i[i];
    rep.p_waic += rep.p_waic_i[i];
    waic_i[i] = -2.0 * rep.lppd_i[i] + 2.0 * rep.p_waic_i[i];
  }
  rep.waic = -2.0 * rep.lppd + 2.0 * rep.p_waic;
  if (n > 1) {
    double wm = 0.0;
    for (const double w : waic_i) wm += w;
    wm /= static_cast<double>(n);
    double var = 0.0;
    for (const double w : waic_i) var += (w - wm) * (w - wm);
    var /= static_cast<double>(n - 1);
    rep.se_waic = std::sqrt(static_cast<double>(n) * var);
  }
  rep.lo = rep.waic - 1.96 * rep.se_waic;
  rep.hi = rep.waic + 1.96 * rep.se_waic;
  return rep;
}

std::vector<ComparisonRow> compare(const std::vector<WaicReport>& reports,
                                   bool allow_incomparable) {
  if (reports.size() < 2)
    throw ConfigError("a comparison needs at least two WAIC reports");
  if (!allow_incomparable) {
    const auto& a = reports.front();
    for (const auto& b : reports) {
      if (b.obs_unit != a.obs_unit)
        throw ConfigError(
            "fits '" + a.model_tag + "' and '" + b.model_tag +
            "' define the observation differently ('" + a.obs_unit + "' vs '" +
            b.obs_unit +
            "'), so their criteria score different sets and cannot be compared; "
            "pass allow_incomparable to tabulate anyway");
      if (b.data_digest != a.data_digest || b.n_obs != a.n_obs)
        throw ConfigError(
            "fits '" + a.model_tag + "' and '" + b.model_tag +
            "' were scored on different observation sets; comparing their "
            "criteria is meaningless; pass allow_incomparable to tabulate anyway");
    }
  }

  std::vector<ComparisonRow> rows;
  for (const auto& r : reports) {
    ComparisonRow row;
    row.model_tag = r.model_tag;
    row.lppd = r.lppd;
    row.p_waic = r.p_waic;
    row.waic = r.waic;
    row.se_waic = r.se_waic;
    row.lo = r.lo;
    row.hi = r.hi;
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const ComparisonRow& x, const ComparisonRow& y) {
    if (x.waic != y.waic) return x.waic < y.waic;
    return x.model_tag < y.model_tag;
  });
  const auto& best = rows.front();
  for (auto& row : rows) {
    row.delta = row.waic - best.waic;
    row.overlaps_best = row.lo <= best.hi && best.lo <= row.hi;
  }
  return rows;
}

std::string comparison_table(const std::vector<ComparisonRow>& rows, bool watanabe_scale) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-34s %12s %10s %12s %10s %12s  %s\n",
                "model", "lppd", "p_waic", watanabe_scale ? "elpd_waic" : "waic",
                "se", "delta", "interval");
  out += buf;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    const double scale = watanabe_scale ? -0.5 : 1.0;
    const std::string name = k == 0 ? "**" + r.model_tag + "**" : r.model_tag;
    std::snprintf(buf, sizeof(buf), "%-34s %12.2f %10.2f %12.2f %10.2f %12.2f  %s\n",
                  name.c_str(), r.lppd, r.p_waic, scale * r.waic,
                  std::abs(scale) * r.se_waic, std::abs(scale) * r.delta,
                  r.overlaps_best && k > 0 ? "overlaps best" : "");
    out += buf;
  }
  return out;
}

}  // namespace hierbayes
