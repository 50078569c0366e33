#pragma once

#include <span>
#include <string>
#include <vector>

#include "hierbayes/data.hpp"
#include "hierbayes/model.hpp"

namespace hierbayes {

// Hyperparameters for the hierarchical regressions, estimated from the
// national and per-group fits used as building blocks.  The per-group
// coefficient means and covariances also seed the joint (alpha_j, beta_j)
// proposals and the chain initial states.
struct RegressionPriors {
  double mu_hat = 0.0;           // national intercept draws: mean
  double sigma2_mu_hat = 1.0;    // and variance
  double gamma_hat = 0.0;        // national slope draws: mean
  double sigma2_gamma_hat = 1.0; // and variance
  double tau2_hat = 1.0;         // spread of per-group intercept estimates
  double zeta2_hat = 1.0;        // spread of per-group slope estimates
  double nu_hat = 1.0;           // moment-matched from per-group residual variances
  std::vector<std::string> group_labels;  // pins the per-group vectors' order
  std::vector<double> alpha_mean, beta_mean;
  std::vector<double> alpha_var, beta_var, ab_cov;
  std::vector<double> sigma2_mean;
};

// Noise family for the varying-slopes model.  Laplace is the robust default;
// the normal variant runs the same machinery (same draw sequence) so paired
// runs isolate the likelihood's effect on outlier sensitivity.
enum class RegressionNoise { laplace, normal };

struct VaryingSlopesOptions {
  RegressionNoise noise = RegressionNoise::laplace;
  // Hook for asymmetric-Laplace quantile regression; only the symmetric
  // median case is implemented, anything else is rejected.
  double quantile = 0.5;
};

// Y ~ N(alpha + beta (X - Xbar), sigma2) on all rows pooled, flat prior on
// (alpha, beta) and 1/sigma2 on the variance; plain conjugate Gibbs.
ModelFit fit_national_regression(const ObservationTable& table, const ChainConfig& config);

// The national model per group, centered at each group's covariate mean,
// with independent streams per group.
ModelFit fit_separate_regressions(const ObservationTable& table, const ChainConfig& config);

// Runs the national and per-group fits on disjoint stream ranges and
// assembles the prior pack.
RegressionPriors build_regression_priors(const ObservationTable& table,
                                         const ChainConfig& config);

// Varying intercepts, common slope: alpha_j ~ N(mu, tau2), flat prior on
// beta, sigma2_j ~ Inv-chi2(nu, rho2), exponential priors on tau2 and nu at
// the estimated rates.
ModelFit fit_varying_intercepts(const ObservationTable& table, const RegressionPriors& priors,
                                const ChainConfig& config);

// Varying intercepts and slopes with correlated coefficients:
// (alpha_j, beta_j) ~ MVN((mu, gamma), S) with S = D(tau, zeta) R D(tau, zeta)
// and R ~ LKJ(2), noise Laplace(alpha_j + beta_j (X - Xbar_j), sqrt(sigma2_j))
// by default.  Coefficients move jointly per group through a bivariate
// random-walk shaped like the separate-fit posterior covariance.
ModelFit fit_varying_intercepts_slopes(const ObservationTable& table,
                                       const RegressionPriors& priors,
                                       const ChainConfig& config,
                                       const VaryingSlopesOptions& options = {});

// Credible bands on a covariate grid: the regression line from the draws of
// alpha + beta (x - xbar), the predictive interval from the draw-mixture of
// the noise distribution (bisected on its CDF, no extra randomness).
struct BandPoint {
  double x = 0.0;
  double line_mean = 0.0, line_lo = 0.0, line_hi = 0.0;
  double pred_lo = 0.0, pred_hi = 0.0;
};

struct GroupBands {
  std::string label;  // group label, or "national"
  std::vector<BandPoint> points;
};

struct RegressionReport {
  std::vector<ParamSummary> intercepts;
  std::vector<ParamSummary> slopes;
  std::vector<GroupBands> bands;
};

// Summary table plus bands for any regression fit; the grid is sorted
// ascending before evaluation.
RegressionReport regression_report(const ModelFit& fit, std::span<const double> grid,
                                   double level = 0.95);

}  // namespace hierbayes
