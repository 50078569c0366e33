#pragma once

#include <optional>
#include <span>
#include <string>

#include "hierbayes/data.hpp"
#include "hierbayes/model.hpp"
#include "hierbayes/random.hpp"

namespace hierbayes {

// How the tail-weight parameter nu of the group-variance prior is handled:
// held at a moment-matched value, given a power prior nu^-h and sampled on an
// adaptive log grid, or given an exponential prior and sampled by Metropolis.
struct NuStrategy {
  enum class Kind { fixed, power, exponential };
  Kind kind = Kind::fixed;
  double h = 3.0;  // exponent of the power prior
  // Pins nu directly instead of moment-matching it (fixed kind only); used by
  // limit-behavior rigs and exposed as fixed:<value>.
  std::optional<double> fixed_nu;

  // Accepts "fixed", "fixed:<value>", "power:<h>", "exponential".
  static NuStrategy parse(const std::string& text);
  std::string tag() const;
};

// Hierarchical one-cluster model with a common within-group variance.
// Requires at least 3 groups.
ModelFit fit_hier_common_sigma(const ObservationTable& table, const ChainConfig& config);

// Hierarchical one-cluster model with per-group variances tied together by a
// scaled inverse-chi^2 prior with hyperparameters (nu, rho^2).
ModelFit fit_hier_varying_sigma(const ObservationTable& table, const NuStrategy& strategy,
                                const ChainConfig& config);

// Conditional building blocks, exposed for direct distributional checks.
double draw_tau2_conditional(std::span<const double> theta, double mu, RandomStream& rng);
double draw_rho2_conditional(std::span<const double> sigma2, double nu, RandomStream& rng);
// The nu-dependent part of the log joint: the J scaled inverse-chi^2 terms of
// the group variances given (nu, rho^2).
double log_nu_loglik(double nu, std::span<const double> sigma2, double rho2);

}  // namespace hierbayes
