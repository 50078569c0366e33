#pragma once

#include <string>
#include <vector>

#include "hierbayes/data.hpp"
#include "hierbayes/model.hpp"

namespace hierbayes {

// Hyperparameters for the two-cluster model, estimated from simpler fits
// used as building blocks: a one-cluster fit on all rows anchors the group
// center prior, and one fit per second-cluster level anchors the level
// offsets lambda_k.
struct TwoClusterPriors {
  double mu_hat = 0.0;
  double sigma2_mu_hat = 1.0;
  double tau2_hat = 1.0;
  double xi2_hat = 1.0;
  std::vector<std::string> second_labels;  // pins the lambda_hat / nu_hat order
  std::vector<double> lambda_hat;
  std::vector<double> nu_hat;
};

// Runs the building-block fits (1 + K one-cluster fits on disjoint stream
// ranges) and assembles the prior pack.  Requires a second-cluster column
// with K >= 2 levels, every (group, level) cell non-empty, and at least 2
// rows per cell so the per-level fits have within-cell variances to work
// with.
TwoClusterPriors build_two_cluster_priors(const ObservationTable& table,
                                          const ChainConfig& config);

// Two non-nested clusters: Y in cell (j, k) ~ N(theta_j + lambda_k, sigma2_jk)
// with theta_j ~ N(mu, tau2), lambda_k ~ N(0, xi2) (zero mean keeps the sum
// identifiable), sigma2_jk ~ Inv-chi2(nu_k, rho2_k) and exponential priors on
// tau2, xi2 and nu_k at the estimated rates.  Each draw row carries
// theta[group], lambda[level], mu, tau2, xi2, sigma2[group|level],
// rho2[level] and nu[level].  The likelihood unit for this model is the
// per-cell response series, so fit.n_obs counts cells, not rows.
ModelFit fit_two_cluster(const ObservationTable& table, const TwoClusterPriors& priors,
                         const ChainConfig& config);

// Conditional for one cell variance given the rest: n observations with mean
// squared residual v about theta_j + lambda_k blend with the level prior into
// Inv-chi2(nu + n, (nu rho2 + n v) / (nu + n)).
double draw_cell_variance_conditional(double nu, double rho2, double n, double v,
                                      RandomStream& rng);

}  // namespace hierbayes
