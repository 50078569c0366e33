#pragma once

#include <span>
#include <utility>

#include "hierbayes/random.hpp"

namespace hierbayes {

// Samplers.  All throw std::domain_error on invalid parameters.  The normal
// family is parameterized by (mean, variance), gamma by (shape, rate), the
// scaled inverse chi-square by (degrees of freedom nu, scale s2) so that
// x ~ nu * s2 / chisq(nu), and the Laplace by (location, scale).

double sample_normal(double mean, double var, RandomStream& rng);
double sample_gamma(double shape, double rate, RandomStream& rng);
double sample_exponential(double rate, RandomStream& rng);
double sample_beta(double a, double b, RandomStream& rng);
double sample_scaled_inv_chi2(double nu, double s2, RandomStream& rng);

// Bivariate normal with marginal variances v1, v2 and correlation corr.
std::pair<double, double> sample_bivariate_normal(double mean1, double mean2,
                                                  double v1, double v2,
                                                  double corr,
                                                  RandomStream& rng);

// Correlation of a 2x2 LKJ(eta) correlation matrix, drawn through the Beta
// representation rho = 2 * Beta(eta, eta) - 1.
double sample_lkj_corr_2x2(double eta, RandomStream& rng);

// Log densities.  Points outside the support evaluate to -infinity; invalid
// parameters throw std::domain_error.

double log_normal_pdf(double x, double mean, double var);
double log_gamma_pdf(double x, double shape, double rate);
double log_exponential_pdf(double x, double rate);
double log_scaled_inv_chi2_pdf(double x, double nu, double s2);
double log_laplace_pdf(double x, double mu, double sigma);
double log_lkj_corr_2x2_pdf(double corr, double eta);
double log_bivariate_normal_pdf(double x1, double x2, double mean1,
                                double mean2, double v1, double v2,
                                double corr);

// Tagged dispatch for callers that carry the family as data (bindings, CLI).
enum class Family { normal, gamma, exponential, scaled_inv_chi2, laplace };

// Parameter order matches the function signatures above, e.g.
// log_density(Family::normal, {mean, var}, x).
double log_density(Family family, std::span<const double> params, double x);

// Numeric helpers shared across modules.
double log_sum_exp(std::span<const double> v);
double normal_cdf(double z);
double normal_quantile(double p);
// Quantile of the chi-square distribution with one degree of freedom.
double chi2_quantile_1df(double p);

}  // namespace hierbayes
