#include "hierbayes/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hierbayes/distributions.hpp"
#include "hierbayes/errors.hpp"

namespace hierbayes {

namespace {

void check_group_sizes(const GroupSummaries& s, std::size_t min_n, const char* who) {
  if (s.groups.size() < 2)
    throw DataError(std::string(who) + ": need at least two groups");
  for (const auto& g : s.groups)
    if (g.n < min_n)
      throw DataError(std::string(who) + ": group '" + g.label + "' has " +
                      std::to_string(g.n) + " rows, need at least " +
                      std::to_string(min_n));
}

}  // namespace

AnovaEstimates anova_estimates(const GroupSummaries& s) {
  check_group_sizes(s, 2, "anova_estimates");
  const double J = static_cast<double>(s.groups.size());
  const double n = static_cast<double>(s.n_total);
  AnovaEstimates out;
  out.n_bar = n / J;

  // The row-weighted grand mean; with weights sigma2/n_j the precision
  // weighting reduces to n_j weighting, and sigma2 cancels.
  double ssw = 0.0, ssb = 0.0;
  for (const auto& g : s.groups) {
    ssw += static_cast<double>(g.n - 1) * g.variance;
    const double d = g.mean - s.grand_mean;
    ssb += static_cast<double>(g.n) * d * d;
  }
  out.ms_within = ssw / (J * (out.n_bar - 1.0));
  out.ms_between = ssb / (J - 1.0);
  out.sigma2 = out.ms_within;
  out.tau2 = (out.ms_between - out.ms_within) / out.n_bar;
  out.tau2_truncated = std::max(out.tau2, 0.0);
  return out;
}

MomentEstimates moment_estimates(std::span<const double> s2_by_group) {
  if (s2_by_group.size() < 2)
    throw DataError("moment_estimates: need variances from at least two groups");
  MomentEstimates out;
  const double J = static_cast<double>(s2_by_group.size());
  for (double v : s2_by_group) {
    if (!(v >= 0.0))
      throw DataError("moment_estimates: negative group variance");
    out.mean_s2 += v;
  }
  out.mean_s2 /= J;
  for (double v : s2_by_group) {
    const double d = v - out.mean_s2;
    out.var_s2 += d * d;
  }
  out.var_s2 /= J;  // population variance: the derivation matches raw moments
  if (!(out.var_s2 > 0.0))
    throw DataError(
        "moment_estimates: group variances have zero spread, cannot match moments");
  const double e2 = out.mean_s2 * out.mean_s2;
  out.nu_hat = 2.0 * e2 / out.var_s2 + 4.0;
  out.rho2_hat = (2.0 * e2 + 2.0 * out.var_s2) / (2.0 * e2 + 4.0 * out.var_s2) * out.mean_s2;
  return out;
}

MomentEstimates moment_estimates(const GroupSummaries& summaries) {
  check_group_sizes(summaries, 2, "moment_estimates");
  std::vector<double> s2;
  s2.reserve(summaries.groups.size());
  for (const auto& g : summaries.groups) s2.push_back(g.variance);
  return moment_estimates(s2);
}

namespace {

struct ProfileTerms {
  double mu_hat;
  double v_mu;
};

ProfileTerms profile_mu(const GroupSummaries& s, double sigma2, double tau) {
  double wsum = 0.0, wmean = 0.0;
  for (const auto& g : s.groups) {
    const double v = sigma2 / static_cast<double>(g.n) + tau * tau;
    wsum += 1.0 / v;
    wmean += g.mean / v;
  }
  return {wmean / wsum, 1.0 / wsum};
}

}  // namespace

double log_tau_profile(const GroupSummaries& s, double sigma2, double tau,
                       TauPrior prior) {
  if (!(sigma2 > 0.0)) throw DataError("log_tau_profile: sigma2 must be positive");
  if (!(tau > 0.0)) throw DataError("log_tau_profile: tau must be positive");
  const auto [mu_hat, v_mu] = profile_mu(s, sigma2, tau);
  double lp = prior == TauPrior::flat ? 0.0 : -std::log(tau);
  lp += 0.5 * std::log(v_mu);
  for (const auto& g : s.groups) {
    const double v = sigma2 / static_cast<double>(g.n) + tau * tau;
    const double d = g.mean - mu_hat;
    lp += -0.5 * std::log(v) - d * d / (2.0 * v);
  }
  return lp;
}

namespace {

std::vector<double> log_spaced(double lo, double hi, int points) {
  std::vector<double> g(points);
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < points; ++i)
    g[i] = std::exp(llo + (lhi - llo) * i / static_cast<double>(points - 1));
  return g;
}

// Linear interpolation of the tau value where logp crosses `thr` between
// grid indices i-1 and i.
double cross_at(const std::vector<double>& tau, const std::vector<double>& lp,
                std::size_t i, double thr) {
  const double t = (thr - lp[i - 1]) / (lp[i] - lp[i - 1]);
  return tau[i - 1] + t * (tau[i] - tau[i - 1]);
}

}  // namespace

TauProfile tau_profile(const GroupSummaries& s, double sigma2,
                       const TauProfileOptions& options) {
  check_group_sizes(s, 2, "tau_profile");
  if (options.grid_points < 16) throw ConfigError("tau_profile: grid too coarse");
  if (!(options.alpha > 0.0 && options.alpha < 1.0))
    throw ConfigError("tau_profile: alpha must lie in (0, 1)");

  double lo = options.lo, hi = options.hi;
  if (!(lo > 0.0) || !(hi > lo)) {
    const auto anova = anova_estimates(s);
    // Fall back to the sampling-noise scale sigma2/n_bar when the moment
    // estimate of tau2 is non-positive.
    const double t2 = std::max(anova.tau2, anova.sigma2 / (100.0 * anova.n_bar));
    const double t = std::sqrt(std::max(t2, 1e-300));
    lo = t / 100.0;
    hi = t * 10.0;
  }

  TauProfile out;
  const double q = chi2_quantile_1df(1.0 - options.alpha);
  for (int attempt = 0;; ++attempt) {
    out.tau = log_spaced(lo, hi, options.grid_points);
    out.log_posterior.resize(out.tau.size());
    for (std::size_t i = 0; i < out.tau.size(); ++i)
      out.log_posterior[i] = log_tau_profile(s, sigma2, out.tau[i], options.prior);
    const auto max_it =
        std::max_element(out.log_posterior.begin(), out.log_posterior.end());
    const double max_lp = *max_it;
    for (auto& lp : out.log_posterior) lp -= max_lp;
    const std::size_t imax = static_cast<std::size_t>(
        std::distance(out.log_posterior.begin(),
                      std::max_element(out.log_posterior.begin(), out.log_posterior.end())));
    out.tau_map = out.tau[imax];

    const double thr = -0.5 * q;
    const bool lo_open = out.log_posterior.front() >= thr;
    const bool hi_open = out.log_posterior.back() >= thr;
    if ((lo_open || hi_open) && attempt == 0) {
      // The interval runs off the window; widen once and retry.
      if (lo_open) lo /= 100.0;
      if (hi_open) hi *= 100.0;
      out.widened = true;
      continue;
    }
    out.open_lo = lo_open;
    out.open_hi = hi_open;
    if (lo_open) {
      out.interval_lo = out.tau.front();
    } else {
      std::size_t i = imax;
      while (i > 0 && out.log_posterior[i - 1] >= thr) --i;
      out.interval_lo = i == 0 ? out.tau.front() : cross_at(out.tau, out.log_posterior, i, thr);
    }
    if (hi_open) {
      out.interval_hi = out.tau.back();
    } else {
      std::size_t i = imax;
      while (i + 1 < out.log_posterior.size() && out.log_posterior[i + 1] >= thr) ++i;
      out.interval_hi = i + 1 >= out.tau.size()
                            ? out.tau.back()
                            : cross_at(out.tau, out.log_posterior, i + 1, thr);
    }
    break;
  }
  return out;
}

ShrinkageCurve theta_shrinkage_curve(const GroupSummaries& s, double sigma2,
                                     std::span<const double> tau_grid) {
  check_group_sizes(s, 1, "theta_shrinkage_curve");
  if (!(sigma2 > 0.0)) throw DataError("theta_shrinkage_curve: sigma2 must be positive");
  ShrinkageCurve out;
  out.x.assign(tau_grid.begin(), tau_grid.end());
  out.value.assign(s.groups.size(), std::vector<double>(tau_grid.size()));
  for (const auto& g : s.groups) out.labels.push_back(g.label);
  for (std::size_t t = 0; t < tau_grid.size(); ++t) {
    const double tau = tau_grid[t];
    if (!(tau > 0.0)) throw DataError("theta_shrinkage_curve: tau must be positive");
    const auto [mu_hat, v_mu] = profile_mu(s, sigma2, tau);
    (void)v_mu;
    const double inv_t2 = 1.0 / (tau * tau);
    for (std::size_t j = 0; j < s.groups.size(); ++j) {
      const double inv_v = static_cast<double>(s.groups[j].n) / sigma2;
      out.value[j][t] = (s.groups[j].mean * inv_v + mu_hat * inv_t2) / (inv_v + inv_t2);
    }
  }
  return out;
}

ShrinkageCurve sigma_shrinkage_curve(std::span<const std::size_t> n,
                                     std::span<const double> v,
                                     std::span<const std::string> labels,
                                     double rho2, std::span<const double> nu_grid) {
  if (n.size() != v.size() || (labels.size() != n.size() && !labels.empty()))
    throw DataError("sigma_shrinkage_curve: mismatched inputs");
  if (!(rho2 > 0.0)) throw DataError("sigma_shrinkage_curve: rho2 must be positive");
  ShrinkageCurve out;
  out.x.assign(nu_grid.begin(), nu_grid.end());
  out.value.assign(n.size(), std::vector<double>(nu_grid.size()));
  for (std::size_t j = 0; j < n.size(); ++j) {
    if (n[j] < 3)
      throw DataError("sigma_shrinkage_curve: group sizes below 3 leave the nu = 0 "
                      "endpoint undefined");
    out.labels.push_back(labels.empty() ? std::to_string(j) : labels[j]);
    for (std::size_t t = 0; t < nu_grid.size(); ++t) {
      const double nu = nu_grid[t];
      if (!(nu >= 0.0)) throw DataError("sigma_shrinkage_curve: nu must be nonnegative");
      out.value[j][t] = (nu * rho2 + static_cast<double>(n[j]) * v[j]) /
                        (nu + static_cast<double>(n[j]) - 2.0);
    }
  }
  return out;
}

}  // namespace hierbayes
