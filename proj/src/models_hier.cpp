#include "hierbayes/models_hier.hpp"

#include <atomic>
#include <cmath>
#include <cstddef>
#include <memory>
#include <utility>
#include <vector>

#include "hierbayes/distributions.hpp"
#include "hierbayes/errors.hpp"
#include "hierbayes/estimators.hpp"

namespace hierbayes {

NuStrategy NuStrategy::parse(const std::string& text) {
  NuStrategy s;
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  auto numeric_arg = [&](const char* what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(arg, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != arg.size() || !(v > 0.0))
      throw ConfigError("nu strategy '" + text + "': " + what + " must be a positive number");
    return v;
  };
  if (head == "fixed") {
    s.kind = Kind::fixed;
    if (!arg.empty()) s.fixed_nu = numeric_arg("pinned nu");
  } else if (head == "power") {
    s.kind = Kind::power;
    if (arg.empty()) throw ConfigError("nu strategy 'power' needs an exponent, e.g. power:3");
    s.h = numeric_arg("exponent h");
  } else if (head == "exponential") {
    s.kind = Kind::exponential;
    if (!arg.empty()) throw ConfigError("nu strategy 'exponential' takes no argument");
  } else {
    throw ConfigError("unknown nu strategy '" + text +
                      "'; expected fixed, fixed:<nu>, power:<h> or exponential");
  }
  return s;
}

std::string NuStrategy::tag() const {
  switch (kind) {
    case Kind::fixed:
      return fixed_nu ? "fixed:" + format_double(*fixed_nu) : "fixed";
    case Kind::power:
      return "power:" + format_double(h);
    case Kind::exponential:
      return "exponential";
  }
  return "";
}

double draw_tau2_conditional(std::span<const double> theta, double mu, RandomStream& rng) {
  const double J = static_cast<double>(theta.size());
  double sq = 0.0;
  for (const double t : theta) sq += (t - mu) * (t - mu);
  return sample_scaled_inv_chi2(J - 1.0, sq / (J - 1.0), rng);
}

double draw_rho2_conditional(std::span<const double> sigma2, double nu, RandomStream& rng) {
  double sum_inv = 0.0;
  for (const double s : sigma2) sum_inv += 1.0 / s;
  const double J = static_cast<double>(sigma2.size());
  return sample_gamma(J * nu / 2.0, nu * sum_inv / 2.0, rng);
}

double log_nu_loglik(double nu, std::span<const double> sigma2, double rho2) {
  const double J = static_cast<double>(sigma2.size());
  const double w = nu / 2.0;
  double sum_inv = 0.0, sum_log = 0.0;
  for (const double s : sigma2) {
    sum_inv += 1.0 / s;
    sum_log += std::log(s);
  }
  return J * (w * std::log(w) - std::lgamma(w) + w * std::log(rho2)) -
         w * rho2 * sum_inv - w * sum_log;
}

namespace {

struct Suff {
  std::vector<std::string> labels;
  std::vector<double> n, mean, ss, s2;
  double n_total = 0.0;
  double grand_mean = 0.0;
  std::size_t J() const { return labels.size(); }
};

Suff suff_of(const ObservationTable& table) {
  const auto s = summarize(table);
  Suff out;
  for (const auto& g : s.groups) {
    out.labels.push_back(g.label);
    out.n.push_back(static_cast<double>(g.n));
    out.mean.push_back(g.mean);
    out.ss.push_back(g.variance * (static_cast<double>(g.n) - 1.0));
    out.s2.push_back(g.variance);
  }
  out.n_total = static_cast<double>(s.n_total);
  out.grand_mean = s.grand_mean;
  return out;
}

void require_hier_groups(const Suff& s) {
  if (s.J() < 3)
    throw DataError("hierarchical model needs at least 3 groups (got " +
                    std::to_string(s.J()) + "); use the pooling models instead");
}

double pooled_within_variance(const Suff& s) {
  double ss = 0.0, df = 0.0;
  for (std::size_t j = 0; j < s.J(); ++j) {
    ss += s.ss[j];
    df += s.n[j] - 1.0;
  }
  if (df > 0.0 && ss > 0.0) return ss / df;
  // fall back to total variance about the grand mean, then to 1
  double total = 0.0;
  for (std::size_t j = 0; j < s.J(); ++j)
    total += s.ss[j] + s.n[j] * (s.mean[j] - s.grand_mean) * (s.mean[j] - s.grand_mean);
  return total > 0.0 ? total / (s.n_total - 1.0) : 1.0;
}

double between_variance_init(const Suff& s, double within) {
  double var = 0.0;
  for (std::size_t j = 0; j < s.J(); ++j)
    var += (s.mean[j] - s.grand_mean) * (s.mean[j] - s.grand_mean);
  var /= static_cast<double>(s.J()) - 1.0;
  const double nbar = s.n_total / static_cast<double>(s.J());
  return var > 0.0 ? var : within / nbar;
}

std::vector<double> log_grid(double lo, double hi, std::size_t points) {
  std::vector<double> g(points);
  const double step = std::log(hi / lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = lo * std::exp(step * static_cast<double>(i));
  return g;
}

std::vector<double> responses_of(const ObservationTable& table) {
  std::vector<double> y;
  y.reserve(table.rows.size());
  for (const auto& r : table.rows) y.push_back(r.response);
  return y;
}

}  // namespace

ModelFit fit_hier_common_sigma(const ObservationTable& table, const ChainConfig& config) {
  config.validate();
  const auto s = suff_of(table);
  require_hier_groups(s);
  const std::size_t J = s.J();
  const int iMu = static_cast<int>(J), iSigma2 = iMu + 1, iTau2 = iMu + 2;

  GibbsProblem p;
  p.model_tag = "hier-common";
  for (const auto& label : s.labels) p.params.push_back({"theta[" + label + "]", Domain::real});
  p.params.push_back({"mu", Domain::real});
  p.params.push_back({"sigma2", Domain::positive});
  p.params.push_back({"tau2", Domain::positive});

  const double within = pooled_within_variance(s);
  p.init = s.mean;
  p.init.push_back(s.grand_mean);
  p.init.push_back(within);
  p.init.push_back(between_variance_init(s, within));

  const auto n = s.n;
  const auto mean = s.mean;
  const auto ss = s.ss;
  const double n_total = s.n_total;
  p.make_kernels = [n, mean, ss, n_total, J, iMu, iSigma2, iTau2](int) {
    std::vector<GibbsKernel> ks;
    ks.push_back({"theta",
                  [&] {
                    std::vector<int> w(J);
                    for (std::size_t j = 0; j < J; ++j) w[j] = static_cast<int>(j);
                    return w;
                  }(),
                  [n, mean, J, iMu, iSigma2, iTau2](std::vector<double>& st,
                                                    RandomStream& rng, const SweepInfo&) {
                    const double mu = st[iMu], tau2 = st[iTau2];
                    for (std::size_t j = 0; j < J; ++j) {
                      const double sbar2 = st[iSigma2] / n[j];
                      const double prec = 1.0 / sbar2 + 1.0 / tau2;
                      const double m = (mean[j] / sbar2 + mu / tau2) / prec;
                      st[j] = sample_normal(m, 1.0 / prec, rng);
                    }
                  },
                  nullptr});
    ks.push_back({"mu",
                  {iMu},
                  [J, iMu, iTau2](std::vector<double>& st, RandomStream& rng,
                                  const SweepInfo&) {
                    double m = 0.0;
                    for (std::size_t j = 0; j < J; ++j) m += st[j];
                    m /= static_cast<double>(J);
                    st[iMu] = sample_normal(m, st[iTau2] / static_cast<double>(J), rng);
                  },
                  nullptr});
    ks.push_back({"sigma2",
                  {iSigma2},
                  [n, mean, ss, n_total, J, iSigma2](std::vector<double>& st,
                                                     RandomStream& rng, const SweepInfo&) {
                    double resid = 0.0;
                    for (std::size_t j = 0; j < J; ++j)
                      resid += ss[j] + n[j] * (mean[j] - st[j]) * (mean[j] - st[j]);
                    st[iSigma2] = sample_scaled_inv_chi2(n_total, resid / n_total, rng);
                  },
                  nullptr});
    ks.push_back({"tau2",
                  {iTau2},
                  [J, iMu, iTau2](std::vector<double>& st, RandomStream& rng,
                                  const SweepInfo&) {
                    st[iTau2] = draw_tau2_conditional({st.data(), J}, st[iMu], rng);
                  },
                  nullptr});
    return ks;
  };

  ModelFit fit;
  fit.draws = run_gibbs(p, config);
  fit.n_obs = table.rows.size();
  fit.data_digest = data_digest(table);
  fit.pointwise = [y = responses_of(table), gi = table.group_index,
                   iSigma2](std::span<const double> row, std::vector<double>& out) {
    out.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
      out[i] = log_normal_pdf(y[i], row[static_cast<std::size_t>(gi[i])], row[iSigma2]);
  };
  return fit;
}

ModelFit fit_hier_varying_sigma(const ObservationTable& table, const NuStrategy& strategy,
                                const ChainConfig& config) {
  config.validate();
  const auto s = suff_of(table);
  require_hier_groups(s);
  const std::size_t J = s.J();

  // Moment-matched nu_hat seeds every strategy: the fixed value, the grid
  // window, or the exponential prior rate.
  double nu_hat = 0.0;
  if (strategy.kind == NuStrategy::Kind::fixed && strategy.fixed_nu) {
    nu_hat = *strategy.fixed_nu;
  } else {
    try {
      nu_hat = moment_estimates(s.s2).nu_hat;
    } catch (const DataError& e) {
      if (strategy.kind == NuStrategy::Kind::power) {
        // a degenerate spread leaves the window unanchored; fall back to a
        // wide default and let endpoint checks widen it further
        nu_hat = 50.0;
      } else {
        throw DataError(std::string(e.what()) +
                        "; the varying-variance model is not identified here, "
                        "fit hier-common instead");
      }
    }
  }

  const bool sample_nu = strategy.kind != NuStrategy::Kind::fixed;
  const int iMu = static_cast<int>(J), iTau2 = iMu + 1, iSig0 = iMu + 2;
  const int iRho2 = iSig0 + static_cast<int>(J), iNu = iRho2 + 1;

  GibbsProblem p;
  p.model_tag = "hier-varying-" + strategy.tag();
  for (const auto& label : s.labels) p.params.push_back({"theta[" + label + "]", Domain::real});
  p.params.push_back({"mu", Domain::real});
  p.params.push_back({"tau2", Domain::positive});
  for (const auto& label : s.labels)
    p.params.push_back({"sigma2[" + label + "]", Domain::positive});
  p.params.push_back({"rho2", Domain::positive});
  if (sample_nu) p.params.push_back({"nu", Domain::positive});

  const double within = pooled_within_variance(s);
  double s2_mean = 0.0;
  for (const double v : s.s2) s2_mean += v;
  s2_mean /= static_cast<double>(J);
  const double rho2_init = s2_mean > 0.0 ? s2_mean : within;

  p.init = s.mean;
  p.init.push_back(s.grand_mean);
  p.init.push_back(between_variance_init(s, within));
  for (std::size_t j = 0; j < J; ++j) p.init.push_back(s.s2[j] > 0.0 ? s.s2[j] : rho2_init);
  p.init.push_back(rho2_init);
  if (sample_nu) p.init.push_back(nu_hat);

  auto widened = std::make_shared<std::atomic<bool>>(false);

  const auto n = s.n;
  const auto mean = s.mean;
  const auto ss = s.ss;
  const NuStrategy strat = strategy;
  p.make_kernels = [n, mean, ss, J, iMu, iTau2, iSig0, iRho2, iNu, strat, nu_hat,
                    widened](int) {
    std::vector<GibbsKernel> ks;
    ks.push_back({"theta",
                  [&] {
                    std::vector<int> w(J);
                    for (std::size_t j = 0; j < J; ++j) w[j] = static_cast<int>(j);
                    return w;
                  }(),
                  [n, mean, J, iMu, iTau2, iSig0](std::vector<double>& st,
                                                  RandomStream& rng, const SweepInfo&) {
                    const double mu = st[iMu], tau2 = st[iTau2];
                    for (std::size_t j = 0; j < J; ++j) {
                      const double sbar2 = st[iSig0 + j] / n[j];
                      const double prec = 1.0 / sbar2 + 1.0 / tau2;
                      const double m = (mean[j] / sbar2 + mu / tau2) / prec;
                      st[j] = sample_normal(m, 1.0 / prec, rng);
                    }
                  },
                  nullptr});
    ks.push_back({"mu",
                  {iMu},
                  [J, iMu, iTau2](std::vector<double>& st, RandomStream& rng,
                                  const SweepInfo&) {
                    double m = 0.0;
                    for (std::size_t j = 0; j < J; ++j) m += st[j];
                    m /= static_cast<double>(J);
                    st[iMu] = sample_normal(m, st[iTau2] / static_cast<double>(J), rng);
                  },
                  nullptr});
    ks.push_back({"sigma2",
                  [&] {
                    std::vector<int> w(J);
                    for (std::size_t j = 0; j < J; ++j) w[j] = iSig0 + static_cast<int>(j);
                    return w;
                  }(),
                  [n, mean, ss, J, iSig0, iRho2, iNu, strat,
                   nu_hat](std::vector<double>& st, RandomStream& rng, const SweepInfo&) {
                    const double nu =
                        strat.kind == NuStrategy::Kind::fixed ? nu_hat : st[iNu];
                    const double rho2 = st[iRho2];
                    for (std::size_t j = 0; j < J; ++j) {
                      const double vj =
                          (ss[j] + n[j] * (mean[j] - st[j]) * (mean[j] - st[j])) / n[j];
                      const double dof = nu + n[j];
                      st[iSig0 + j] =
                          sample_scaled_inv_chi2(dof, (nu * rho2 + n[j] * vj) / dof, rng);
                    }
                  },
                  nullptr});
    ks.push_back({"tau2",
                  {iTau2},
                  [J, iMu, iTau2](std::vector<double>& st, RandomStream& rng,
                                  const SweepInfo&) {
                    st[iTau2] = draw_tau2_conditional({st.data(), J}, st[iMu], rng);
                  },
                  nullptr});
    ks.push_back({"rho2",
                  {iRho2},
                  [J, iSig0, iRho2, iNu, strat, nu_hat](std::vector<double>& st,
                                                        RandomStream& rng, const SweepInfo&) {
                    const double nu =
                        strat.kind == NuStrategy::Kind::fixed ? nu_hat : st[iNu];
                    st[iRho2] =
                        draw_rho2_conditional({st.data() + iSig0, J}, nu, rng);
                  },
                  nullptr});
    if (strat.kind == NuStrategy::Kind::power) {
      struct GridState {
        std::vector<double> pts;
        bool rebuilt = false;
      };
      auto grid = std::make_shared<GridState>();
      grid->pts = log_grid(0.1, 50.0 * nu_hat, 600);
      const double h = strat.h;
      ks.push_back(
          {"nu",
           {iNu},
           [J, iSig0, iRho2, iNu, h, grid, widened](std::vector<double>& st,
                                                    RandomStream& rng, const SweepInfo& info) {
             const std::span<const double> sig{st.data() + iSig0, J};
             const double rho2 = st[iRho2];
             // the log-spaced grid carries a cell width proportional to nu,
             // hence the +log(nu) measure term folded into (1 - h)
             auto weights = [&](const std::vector<double>& pts) {
               std::vector<double> w(pts.size());
               for (std::size_t i = 0; i < pts.size(); ++i)
                 w[i] = (1.0 - h) * std::log(pts[i]) + log_nu_loglik(pts[i], sig, rho2);
               return w;
             };
             auto w = weights(grid->pts);
             std::size_t idx = grid_sample_index(w, rng);
             if (idx + 1 == grid->pts.size()) {
               widened->store(true);
               if (info.adapting && !grid->rebuilt) {
                 grid->rebuilt = true;
                 const double lo = grid->pts.front();
                 const double hi = grid->pts.back() * 10.0;
                 grid->pts = log_grid(lo, hi, grid->pts.size());
                 w = weights(grid->pts);
                 idx = grid_sample_index(w, rng);
               }
             }
             st[iNu] = grid->pts[idx];
           },
           nullptr});
    } else if (strat.kind == NuStrategy::Kind::exponential) {
      auto scale = std::make_shared<AdaptiveScale>(0.5);
      auto tracker = std::make_shared<AcceptanceTracker>();
      ks.push_back({"nu",
                    {iNu},
                    [J, iSig0, iRho2, iNu, nu_hat, scale,
                     tracker](std::vector<double>& st, RandomStream& rng,
                              const SweepInfo& info) {
                      const std::span<const double> sig{st.data() + iSig0, J};
                      const double rho2 = st[iRho2];
                      auto target = [&](double nu) {
                        return log_exponential_pdf(nu, 1.0 / nu_hat) +
                               log_nu_loglik(nu, sig, rho2);
                      };
                      const auto res =
                          metropolis_step_log_scale(target, st[iNu], scale->scale(), rng);
                      st[iNu] = res.value;
                      tracker->record(res.accepted, info.adapting);
                      scale->observe(res.accepted, info.adapting);
                    },
                    tracker});
    }
    return ks;
  };

  ModelFit fit;
  fit.draws = run_gibbs(p, config);
  fit.n_obs = table.rows.size();
  fit.data_digest = data_digest(table);
  fit.grid_widened = widened->load();
  if (!sample_nu) fit.constants = {{"nu", nu_hat}};
  fit.pointwise = [y = responses_of(table), gi = table.group_index,
                   iSig0](std::span<const double> row, std::vector<double>& out) {
    out.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const std::size_t g = static_cast<std::size_t>(gi[i]);
      out[i] = log_normal_pdf(y[i], row[g], row[iSig0 + g]);
    }
  };
  return fit;
}

}  // namespace hierbayes
