#include "hierbayes/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace hierbayes {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require(bool ok, const char* what) {
  if (!ok) throw std::domain_error(what);
}

}  // namespace

double sample_normal(double mean, double var, RandomStream& rng) {
  require(std::isfinite(mean) && var > 0.0, "sample_normal: variance must be positive");
  std::normal_distribution<double> d(mean, std::sqrt(var));
  return d(rng.engine());
}

double sample_gamma(double shape, double rate, RandomStream& rng) {
  require(shape > 0.0 && rate > 0.0, "sample_gamma: shape and rate must be positive");
  std::gamma_distribution<double> d(shape, 1.0 / rate);
  return d(rng.engine());
}

double sample_exponential(double rate, RandomStream& rng) {
  require(rate > 0.0, "sample_exponential: rate must be positive");
  std::exponential_distribution<double> d(rate);
  return d(rng.engine());
}

double sample_beta(double a, double b, RandomStream& rng) {
  require(a > 0.0 && b > 0.0, "sample_beta: both shapes must be positive");
  const double g1 = sample_gamma(a, 1.0, rng);
  const double g2 = sample_gamma(b, 1.0, rng);
  return g1 / (g1 + g2);
}

double sample_scaled_inv_chi2(double nu, double s2, RandomStream& rng) {
  require(nu > 0.0 && s2 > 0.0, "sample_scaled_inv_chi2: nu and s2 must be positive");
  std::chi_squared_distribution<double> chisq(nu);
  return nu * s2 / chisq(rng.engine());
}

std::pair<double, double> sample_bivariate_normal(double mean1, double mean2,
                                                  double v1, double v2,
                                                  double corr,
                                                  RandomStream& rng) {
  require(v1 > 0.0 && v2 > 0.0, "sample_bivariate_normal: variances must be positive");
  require(corr > -1.0 && corr < 1.0, "sample_bivariate_normal: |corr| must be < 1");
  const double z1 = sample_normal(0.0, 1.0, rng);
  const double z2 = sample_normal(0.0, 1.0, rng);
  const double x1 = mean1 + std::sqrt(v1) * z1;
  const double x2 = mean2 + std::sqrt(v2) * (corr * z1 + std::sqrt(1.0 - corr * corr) * z2);
  return {x1, x2};
}

double sample_lkj_corr_2x2(double eta, RandomStream& rng) {
  require(eta > 0.0, "sample_lkj_corr_2x2: eta must be positive");
  return 2.0 * sample_beta(eta, eta, rng) - 1.0;
}

double log_normal_pdf(double x, double mean, double var) {
  require(std::isfinite(mean) && var > 0.0, "log_normal_pdf: variance must be positive");
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var)) - d * d / (2.0 * var);
}

double log_gamma_pdf(double x, double shape, double rate) {
  require(shape > 0.0 && rate > 0.0, "log_gamma_pdf: shape and rate must be positive");
  if (x <= 0.0) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_exponential_pdf(double x, double rate) {
  require(rate > 0.0, "log_exponential_pdf: rate must be positive");
  if (x < 0.0) return kNegInf;
  return std::log(rate) - rate * x;
}

double log_scaled_inv_chi2_pdf(double x, double nu, double s2) {
  require(nu > 0.0 && s2 > 0.0, "log_scaled_inv_chi2_pdf: nu and s2 must be positive");
  if (x <= 0.0) return kNegInf;
  const double h = 0.5 * nu;
  return h * std::log(h) + h * std::log(s2) - std::lgamma(h) -
         (h + 1.0) * std::log(x) - nu * s2 / (2.0 * x);
}

double log_laplace_pdf(double x, double mu, double sigma) {
  require(std::isfinite(mu) && sigma > 0.0, "log_laplace_pdf: scale must be positive");
  return -std::log(2.0 * sigma) - std::abs(x - mu) / sigma;
}

double log_lkj_corr_2x2_pdf(double corr, double eta) {
  require(eta > 0.0, "log_lkj_corr_2x2_pdf: eta must be positive");
  if (corr <= -1.0 || corr >= 1.0) return kNegInf;
  // Normalizer from rho = 2u - 1 with u ~ Beta(eta, eta):
  // integral of (1 - rho^2)^(eta-1) over (-1, 1) equals 2 * 4^(eta-1) * B(eta, eta).
  const double log_norm = std::log(2.0) + (eta - 1.0) * std::log(4.0) +
                          2.0 * std::lgamma(eta) - std::lgamma(2.0 * eta);
  return (eta - 1.0) * std::log1p(-corr * corr) - log_norm;
}

double log_bivariate_normal_pdf(double x1, double x2, double mean1,
                                double mean2, double v1, double v2,
                                double corr) {
  require(v1 > 0.0 && v2 > 0.0, "log_bivariate_normal_pdf: variances must be positive");
  require(corr > -1.0 && corr < 1.0, "log_bivariate_normal_pdf: |corr| must be < 1");
  const double u = (x1 - mean1) / std::sqrt(v1);
  const double w = (x2 - mean2) / std::sqrt(v2);
  const double one_m_r2 = 1.0 - corr * corr;
  const double quad = (u * u - 2.0 * corr * u * w + w * w) / one_m_r2;
  return -kLog2Pi - 0.5 * (std::log(v1) + std::log(v2) + std::log(one_m_r2)) - 0.5 * quad;
}

double log_density(Family family, std::span<const double> params, double x) {
  const auto need = [&](std::size_t n) {
    if (params.size() != n)
      throw std::domain_error("log_density: wrong parameter count for family");
  };
  switch (family) {
    case Family::normal:
      need(2);
      return log_normal_pdf(x, params[0], params[1]);
    case Family::gamma:
      need(2);
      return log_gamma_pdf(x, params[0], params[1]);
    case Family::exponential:
      need(1);
      return log_exponential_pdf(x, params[0]);
    case Family::scaled_inv_chi2:
      need(2);
      return log_scaled_inv_chi2_pdf(x, params[0], params[1]);
    case Family::laplace:
      need(2);
      return log_laplace_pdf(x, params[0], params[1]);
  }
  throw std::domain_error("log_density: unknown family");
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return kNegInf;
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

double normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "normal_quantile: p must lie in (0, 1)");
  // Acklam's rational approximation, then one Newton step against erfc-based
  // normal_cdf to push the result to full double accuracy.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  if (pdf > 0.0) x -= e / pdf;
  return x;
}

double chi2_quantile_1df(double p) {
  require(p > 0.0 && p < 1.0, "chi2_quantile_1df: p must lie in (0, 1)");
  // For one degree of freedom, P(chi2 <= q) = 2 Phi(sqrt(q)) - 1.
  const double z = normal_quantile(0.5 * (1.0 + p));
  return z * z;
}

}  // namespace hierbayes
