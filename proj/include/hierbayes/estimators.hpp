#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hierbayes/data.hpp"

namespace hierbayes {

// Classical variance decomposition.  With n_bar the average group size,
//   MS_W = (1/(J(n_bar-1))) sum_j sum_i (Y_ij - Ybar_j)^2
//   MS_B = (1/(J-1)) sum_j n_j (Ybar_j - Ybar)^2
// the moment estimates are sigma2 = MS_W and tau2 = (MS_B - MS_W)/n_bar.
// tau2 may come out negative and is reported as computed; tau2_truncated
// clamps it at zero.
struct AnovaEstimates {
  double ms_within = 0.0;
  double ms_between = 0.0;
  double n_bar = 0.0;
  double sigma2 = 0.0;
  double tau2 = 0.0;
  double tau2_truncated = 0.0;
};

// Requires at least two groups and every group size >= 2.
AnovaEstimates anova_estimates(const GroupSummaries& summaries);

// Moment-matching of a scaled inverse chi-square to the spread of per-group
// sample variances.  With E the mean and V the population variance (divisor J)
// of the s2 values:
//   nu_hat   = 2 E^2 / V + 4
//   rho2_hat = ((2 E^2 + 2 V) / (2 E^2 + 4 V)) E
struct MomentEstimates {
  double mean_s2 = 0.0;
  double var_s2 = 0.0;
  double nu_hat = 0.0;
  double rho2_hat = 0.0;
};

// Requires at least two values and strictly positive spread; throws DataError
// when the variances carry no spread to match against.
MomentEstimates moment_estimates(std::span<const double> s2_by_group);
MomentEstimates moment_estimates(const GroupSummaries& summaries);

enum class TauPrior { flat, reciprocal };

// Log of the marginal posterior profile p(tau | sigma2, Y) up to a constant,
// integrating the group means out analytically:
//   log p = log prior + 0.5 log V_mu
//           - 0.5 sum_j [ log(vbar_j + tau^2) + (Ybar_j - mu_hat)^2/(vbar_j + tau^2) ]
// where vbar_j = sigma2/n_j, mu_hat is the precision-weighted mean of the
// group means and V_mu the corresponding variance.  The reciprocal prior is
// kept for demonstrating its divergence at tau -> 0.
double log_tau_profile(const GroupSummaries& summaries, double sigma2, double tau,
                       TauPrior prior = TauPrior::flat);

struct TauProfileOptions {
  int grid_points = 400;
  double lo = 0.0;   // <= 0 selects the automatic window
  double hi = 0.0;
  double alpha = 0.05;
  TauPrior prior = TauPrior::flat;
};

struct TauProfile {
  std::vector<double> tau;            // log-spaced grid
  std::vector<double> log_posterior;  // normalized so the maximum is zero
  double tau_map = 0.0;
  double interval_lo = 0.0;  // likelihood-ratio interval at level 1 - alpha
  double interval_hi = 0.0;
  bool widened = false;       // automatic window had to be extended
  bool open_lo = false;       // interval still touched the grid edge
  bool open_hi = false;
};

TauProfile tau_profile(const GroupSummaries& summaries, double sigma2,
                       const TauProfileOptions& options = {});

// Conditional posterior mean of each group mean given tau:
//   E(theta_j | tau, sigma2, Y) = (Ybar_j/vbar_j + mu_hat/tau^2)
//                                 / (1/vbar_j + 1/tau^2)
// As tau -> 0 every group collapses to the precision-weighted grand mean; as
// tau -> infinity each returns to its own sample mean.
struct ShrinkageCurve {
  std::vector<std::string> labels;
  std::vector<double> x;                      // tau or nu grid
  std::vector<std::vector<double>> value;     // [group][grid point]
};

ShrinkageCurve theta_shrinkage_curve(const GroupSummaries& summaries, double sigma2,
                                     std::span<const double> tau_grid);

// Conditional posterior mean of each group variance given nu:
//   E(sigma_j^2 | nu, rho2, Y) = (nu rho2 + n_j v_j) / (nu + n_j - 2)
// moving from the unpooled estimate at nu = 0 to rho2 as nu -> infinity.
// Requires every n_j >= 3.
ShrinkageCurve sigma_shrinkage_curve(std::span<const std::size_t> n,
                                     std::span<const double> v,
                                     std::span<const std::string> labels,
                                     double rho2, std::span<const double> nu_grid);

}  // namespace hierbayes
