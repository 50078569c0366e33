#include "hierbayes/models_regression.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <future>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hierbayes/distributions.hpp"
#include "hierbayes/errors.hpp"
#include "hierbayes/estimators.hpp"
#include "hierbayes/models_hier.hpp"
#include "model_merge.hpp"

namespace hierbayes {

namespace {

double vec_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double vec_variance(const std::vector<double>& v) {
  const double m = vec_mean(v);
  double s = 0.0;
  for (const double x : v) s += (x - m) * (x - m);
  return s / (static_cast<double>(v.size()) - 1.0);
}

double response_variance(const ObservationTable& table) {
  std::vector<double> y;
  y.reserve(table.rows.size());
  for (const auto& r : table.rows) y.push_back(r.response);
  return y.size() > 1 ? vec_variance(y) : 0.0;
}

// Sums for one regression cell with the covariate centered at its own mean.
struct RegSuff {
  std::vector<std::string> labels;
  std::vector<double> n, xbar, sy, sxc, sxc2, sxcy, syy, floor;
  std::size_t J() const { return labels.size(); }

  void add_cell(const std::string& label, const std::vector<double>& y,
                const std::vector<double>& x) {
    labels.push_back(label);
    const double nn = static_cast<double>(y.size());
    const double xb = x.empty() ? 0.0 : vec_mean(x);
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0, e = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double xc = x[i] - xb;
      a += y[i];
      b += xc;
      c += xc * xc;
      d += xc * y[i];
      e += y[i] * y[i];
    }
    n.push_back(nn);
    xbar.push_back(xb);
    sy.push_back(a);
    sxc.push_back(b);
    sxc2.push_back(c);
    sxcy.push_back(d);
    syy.push_back(e);
    // keeps the residual conditional proper on exactly collinear data
    floor.push_back(1e-12 * (e / nn + 1.0));
  }
};

double residual_ss(const RegSuff& s, std::size_t j, double a, double b) {
  const double rss = s.syy[j] - 2.0 * a * s.sy[j] - 2.0 * b * s.sxcy[j] +
                     2.0 * a * b * s.sxc[j] + s.n[j] * a * a + b * b * s.sxc2[j];
  return std::max(rss, s.floor[j]);
}

void require_covariate(const ObservationTable& table) {
  if (!table.has_covariate)
    throw SchemaError("regression models need a covariate column");
}

RegSuff national_suff(const ObservationTable& table) {
  std::vector<double> y, x;
  y.reserve(table.rows.size());
  x.reserve(table.rows.size());
  for (const auto& r : table.rows) {
    y.push_back(r.response);
    x.push_back(r.covariate);
  }
  RegSuff s;
  s.add_cell("national", y, x);
  if (s.n[0] < 3.0)
    throw DataError("the national regression needs at least 3 rows (got " +
                    std::to_string(table.rows.size()) + ")");
  if (!(s.sxc2[0] > 0.0))
    throw DataError("the covariate is constant; the slope is not identified");
  return s;
}

RegSuff per_group_suff(const ObservationTable& table) {
  const auto gd = group_rows(table);
  RegSuff s;
  for (std::size_t j = 0; j < gd.labels.size(); ++j)
    s.add_cell(gd.labels[j], gd.response[j], gd.covariate[j]);
  std::string bad;
  for (std::size_t j = 0; j < s.J(); ++j)
    if (s.n[j] < 3.0 || !(s.sxc2[j] > 0.0)) bad += " '" + s.labels[j] + "'";
  if (!bad.empty())
    throw DataError(
        "per-group regressions need at least 3 rows and a non-constant "
        "covariate in every group; offending groups:" +
        bad);
  return s;
}

void require_hier_regression(const RegSuff& s) {
  if (s.J() < 3)
    throw DataError("hierarchical regressions need at least 3 groups (got " +
                    std::to_string(s.J()) +
                    "); fit the national or separate models instead");
}

void check_priors(const RegressionPriors& priors, const RegSuff& s) {
  if (priors.group_labels != s.labels)
    throw ConfigError(
        "regression priors were built for a different group set; rebuild them "
        "from this table");
  const std::size_t J = s.J();
  if (priors.alpha_mean.size() != J || priors.beta_mean.size() != J ||
      priors.alpha_var.size() != J || priors.beta_var.size() != J ||
      priors.ab_cov.size() != J || priors.sigma2_mean.size() != J)
    throw ConfigError("regression priors are incomplete; rebuild them from this table");
  if (!(priors.sigma2_mu_hat > 0.0) || !(priors.sigma2_gamma_hat > 0.0) ||
      !(priors.tau2_hat > 0.0) || !(priors.zeta2_hat > 0.0) || !(priors.nu_hat > 0.0))
    throw ConfigError("regression priors need positive variance and nu estimates");
}

// One cell of Y ~ N(alpha + beta xc, sigma2) under p(alpha, beta, sigma2)
// oc 1/sigma2: alpha and beta are conjugate normals, sigma2 follows
// Inv-chi2(n, RSS/n).
GibbsProblem ols_problem(std::string tag, std::shared_ptr<const RegSuff> s,
                         std::size_t j) {
  GibbsProblem p;
  p.model_tag = std::move(tag);
  p.params = {{"alpha", Domain::real}, {"beta", Domain::real}, {"sigma2", Domain::positive}};

  const double b0 = s->sxcy[j] / s->sxc2[j];
  const double a0 = (s->sy[j] - b0 * s->sxc[j]) / s->n[j];
  p.init = {a0, b0, std::max(residual_ss(*s, j, a0, b0) / s->n[j], s->floor[j])};

  p.make_kernels = [s, j](int) {
    std::vector<GibbsKernel> ks;
    ks.push_back({"alpha",
                  {0},
                  [s, j](std::vector<double>& st, RandomStream& rng, const SweepInfo&) {
                    const double m = (s->sy[j] - st[1] * s->sxc[j]) / s->n[j];
                    st[0] = sample_normal(m, st[2] / s->n[j], rng);
                  },
                  nullptr});
    ks.push_back({"beta",
                  {1},
                  [s, j](std::vector<double>& st, RandomStream& rng, const SweepInfo&) {
                    const double m = (s->sxcy[j] - st[0] * s->sxc[j]) / s->sxc2[j];
                    st[1] = sample_normal(m, st[2] / s->sxc2[j], rng);
                  },
                  nullptr});
    ks.push_back({"sigma2",
                  {2},
                  [s, j](std::vector<double>& st, RandomStream& rng, const SweepInfo&) {
                    const double v = residual_ss(*s, j, st[0], st[1]) / s->n[j];
                    st[2] = sample_scaled_inv_chi2(s->n[j], v, rng);
                  },
                  nullptr});
    return ks;
  };
  return p;
}

struct RowView {
  std::vector<double> y, x;
  std::vector<int> group;
};

RowView row_view(const ObservationTable& table) {
  RowView v;
  v.y.reserve(table.rows.size());
  v.x.reserve(table.rows.size());
  for (const auto& r : table.rows) {
    v.y.push_back(r.response);
    v.x.push_back(r.covariate);
  }
  v.group = table.group_index;
  return v;
}

// Raw per-group rows with centered covariates, for the Laplace walker.
struct RawGroups {
  std::vector<std::vector<double>> y, xc;
};

RawGroups raw_groups(const ObservationTable& table, const RegSuff& s) {
  const auto gd = group_rows(table);
  RawGroups raw;
  raw.y = gd.response;
  raw.xc = gd.covariate;
  for (std::size_t j = 0; j < raw.xc.size(); ++j)
    for (auto& x : raw.xc[j]) x -= s.xbar[j];
  return raw;
}

// log N2((a, b) | (mu, gamma), S(tau2, zeta2, rho)) summed over groups.
double coef_prior_sum(const std::vector<double>& st, std::size_t J, int iMu,
                      double tau2, double zeta2, double rho) {
  double lp = 0.0;
  for (std::size_t j = 0; j < J; ++j)
    lp += log_bivariate_normal_pdf(st[j], st[J + j], st[iMu], st[iMu + 1], tau2,
                                   zeta2, rho);
  return lp;
}

}  // namespace

ModelFit fit_national_regression(const ObservationTable& table, const ChainConfig& config) {
  config.validate();
  require_covariate(table);
  auto s = std::make_shared<const RegSuff>(national_suff(table));

  ModelFit fit;
  fit.draws = run_gibbs(ols_problem("regression:national", s, 0), config);
  fit.n_obs = table.rows.size();
  fit.data_digest = data_digest(table);
  fit.constants = {{"xbar", s->xbar[0]}};
  fit.pointwise = [v = row_view(table), xb = s->xbar[0]](std::span<const double> row,
                                                         std::vector<double>& out) {
    out.resize(v.y.size());
    for (std::size_t i = 0; i < v.y.size(); ++i)
      out[i] = log_normal_pdf(v.y[i], row[0] + row[1] * (v.x[i] - xb), row[2]);
  };
  return fit;
}

ModelFit fit_separate_regressions(const ObservationTable& table, const ChainConfig& config) {
  config.validate();
  require_covariate(table);
  auto s = std::make_shared<const RegSuff>(per_group_suff(table));
  const std::size_t J = s->J();

  std::vector<PosteriorDraws> parts;
  for (std::size_t j = 0; j < J; ++j) {
    ChainConfig sub = config;
    sub.stream_offset = config.stream_offset + j * kGroupStreamStride;
    parts.push_back(run_gibbs(ols_problem("regression:separate", s, j), sub));
  }

  std::vector<internal::ColumnRef> layout;
  for (std::size_t j = 0; j < J; ++j)
    layout.push_back({static_cast<int>(j), 0, "alpha[" + s->labels[j] + "]", Domain::real});
  for (std::size_t j = 0; j < J; ++j)
    layout.push_back({static_cast<int>(j), 1, "beta[" + s->labels[j] + "]", Domain::real});
  for (std::size_t j = 0; j < J; ++j)
    layout.push_back(
        {static_cast<int>(j), 2, "sigma2[" + s->labels[j] + "]", Domain::positive});

  ModelFit fit;
  fit.draws = internal::gather_columns(parts, layout, "regression:separate", config);
  fit.n_obs = table.rows.size();
  fit.data_digest = data_digest(table);
  for (std::size_t j = 0; j < J; ++j)
    fit.constants.push_back({"xbar[" + s->labels[j] + "]", s->xbar[j]});
  fit.pointwise = [v = row_view(table), xb = s->xbar,
                   J](std::span<const double> row, std::vector<double>& out) {
    out.resize(v.y.size());
    for (std::size_t i = 0; i < v.y.size(); ++i) {
      const auto g = static_cast<std::size_t>(v.group[i]);
      const double m = row[g] + row[J + g] * (v.x[i] - xb[g]);
      out[i] = log_normal_pdf(v.y[i], m, row[2 * J + g]);
    }
  };
  return fit;
}

RegressionPriors build_regression_priors(const ObservationTable& table,
                                         const ChainConfig& config) {
  config.validate();
  require_covariate(table);

  auto run_national = [&] {
    ChainConfig c = config;
    c.stream_offset = config.stream_offset + kFitStreamStride;
    return fit_national_regression(table, c);
  };
  auto run_separate = [&] {
    ChainConfig c = config;
    c.stream_offset = config.stream_offset + 2 * kFitStreamStride;
    return fit_separate_regressions(table, c);
  };

  ModelFit national, separate;
  const char* env = std::getenv("HIERBAYES_THREADS");
  if (env && std::atoi(env) > 1) {
    auto fn = std::async(std::launch::async, run_national);
    auto fs = std::async(std::launch::async, run_separate);
    national = fn.get();
    separate = fs.get();
  } else {
    national = run_national();
    separate = run_separate();
  }

  RegressionPriors priors;
  const auto a_draws = national.draws.column(national.draws.param_index("alpha"));
  const auto b_draws = national.draws.column(national.draws.param_index("beta"));
  priors.mu_hat = vec_mean(a_draws);
  priors.sigma2_mu_hat = vec_variance(a_draws);
  priors.gamma_hat = vec_mean(b_draws);
  priors.sigma2_gamma_hat = vec_variance(b_draws);

  for (const auto& p : separate.draws.params) {
    const auto& name = p.name;
    if (name.rfind("alpha[", 0) == 0)
      priors.group_labels.push_back(name.substr(6, name.size() - 7));
  }
  const std::size_t J = priors.group_labels.size();
  for (std::size_t j = 0; j < J; ++j) {
    const auto& label = priors.group_labels[j];
    const auto a = separate.draws.column(separate.draws.param_index("alpha[" + label + "]"));
    const auto b = separate.draws.column(separate.draws.param_index("beta[" + label + "]"));
    const auto s2 =
        separate.draws.column(separate.draws.param_index("sigma2[" + label + "]"));
    priors.alpha_mean.push_back(vec_mean(a));
    priors.beta_mean.push_back(vec_mean(b));
    priors.alpha_var.push_back(vec_variance(a));
    priors.beta_var.push_back(vec_variance(b));
    const double am = priors.alpha_mean.back(), bm = priors.beta_mean.back();
    double cov = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) cov += (a[i] - am) * (b[i] - bm);
    priors.ab_cov.push_back(cov / (static_cast<double>(a.size()) - 1.0));
    priors.sigma2_mean.push_back(vec_mean(s2));
  }

  // spreads of the per-group estimates, floored so degenerate inputs still
  // give proper exponential priors
  const double floor = std::max(1e-6 * response_variance(table), 1e-12);
  priors.tau2_hat = std::max(vec_variance(priors.alpha_mean), floor);
  priors.zeta2_hat = std::max(vec_variance(priors.beta_mean), floor);
  try {
    priors.nu_hat = moment_estimates(priors.sigma2_mean).nu_hat;
  } catch (const DataError&) {
    // spread too degenerate to moment-match; a diffuse default keeps the
    // exponential prior proper
    priors.nu_hat = 50.0;
  }
  return priors;
}

ModelFit fit_varying_intercepts(const ObservationTable& table,
                                const RegressionPriors& priors, const ChainConfig& config) {
  config.validate();
  require_covariate(table);
  auto s = std::make_shared<const RegSuff>(per_group_suff(table));
  require_hier_regression(*s);
  check_priors(priors, *s);
  const std::size_t J = s->J();
  const int iBeta = static_cast<int>(J), iMu = iBeta + 1, iTau2 = iBeta + 2;
  const int iSig0 = iBeta + 3;
  const int iRho2 = iSig0 + static_cast<int>(J), iNu = iRho2 + 1;

  GibbsProblem p;
  p.model_tag = "regression:varying-intercepts";
  for (const auto& l : s->labels) p.params.push_back({"alpha[" + l + "]", Domain::real});
  p.params.push_back({"beta", Domain::real});
  p.params.push_back({"mu", Domain::real});
  p.params.push_back({"tau2", Domain::positive});
  for (const auto& l : s->labels) p.params.push_back({"sigma2[" + l + "]", Domain::positive});
  p.params.push_back({"rho2", Domain::positive});
  p.params.push_back({"nu", Domain::positive});

  p.init = priors.alpha_mean;
  p.init.push_back(priors.gamma_hat);
  p.init.push_back(priors.mu_hat);
  p.init.push_back(priors.tau2_hat);
  for (std::size_t j = 0; j < J; ++j) p.init.push_back(priors.sigma2_mean[j]);
  p.init.push_back(vec_mean(priors.sigma2_mean));
  p.init.push_back(priors.nu_hat);

  const RegressionPriors pr = priors;
  p.make_kernels = [s, pr, J, iBeta, iMu, iTau2, iSig0, iRho2, iNu](int) {
    std::vector<GibbsKernel> ks;
    ks.push_back({"alpha",
                  [&] {
                    std::vector<int> w(J);
                    for (std::size_t j = 0; j < J; ++j) w[j] = static_cast<int>(j);
                    return w;
                  }(),
                  [s, J, iBeta, iMu, iTau2, iSig0](std::vector<double>& st,
                                                   RandomStream& rng, const SweepInfo&) {
                    for (std::size_t j = 0; j < J; ++j) {
                      const double s2 = st[iSig0 + j];
                      const double prec = s->n[j] / s2 + 1.0 / st[iTau2];
                      const double num =
                          (s->sy[j] - st[iBeta] * s->sxc[j]) / s2 + st[iMu] / st[iTau2];
                      st[j] = sample_normal(num / prec, 1.0 / prec, rng);
                    }
                  },
                  nullptr});
    // flat prior: the slope pools every group's centered cross moment
    ks.push_back({"beta",
                  {iBeta},
                  [s, J, iBeta, iSig0](std::vector<double>& st, RandomStream& rng,
                                       const SweepInfo&) {
                    double prec = 0.0, num = 0.0;
                    for (std::size_t j = 0; j < J; ++j) {
                      const double s2 = st[iSig0 + j];
                      prec += s->sxc2[j] / s2;
                      num += (s->sxcy[j] - st[j] * s->sxc[j]) / s2;
                    }
                    st[iBeta] = sample_normal(num / prec, 1.0 / prec, rng);
                  },
                  nullptr});
    ks.push_back({"mu",
                  {iMu},
                  [pr, J, iMu, iTau2](std::vector<double>& st, RandomStream& rng,
                                      const SweepInfo&) {
                    double sum = 0.0;
                    for (std::size_t j = 0; j < J; ++j) sum += st[j];
                    const double prec =
                        static_cast<double>(J) / st[iTau2] + 1.0 / pr.sigma2_mu_hat;
                    const double num = sum / st[iTau2] + pr.mu_hat / pr.sigma2_mu_hat;
                    st[iMu] = sample_normal(num / prec, 1.0 / prec, rng);
                  },
                  nullptr});
    {
      auto scale = std::make_shared<AdaptiveScale>(0.5);
      auto tracker = std::make_shared<AcceptanceTracker>();
      ks.push_back({"tau2",
                    {iTau2},
                    [pr, J, iMu, iTau2, scale, tracker](std::vector<double>& st,
                                                        RandomStream& rng,
                                                        const SweepInfo& info) {
                      auto target = [&](double t2) {
                        double lp = log_exponential_pdf(t2, 1.0 / pr.tau2_hat);
                        for (std::size_t j = 0; j < J; ++j)
                          lp += log_normal_pdf(st[j], st[iMu], t2);
                        return lp;
                      };
                      const auto res =
                          metropolis_step_log_scale(target, st[iTau2], scale->scale(), rng);
                      st[iTau2] = res.value;
                      tracker->record(res.accepted, info.adapting);
                      scale->observe(res.accepted, info.adapting);
                    },
                    tracker});
    }
    ks.push_back({"sigma2",
                  [&] {
                    std::vector<int> w(J);
                    for (std::size_t j = 0; j < J; ++j) w[j] = iSig0 + static_cast<int>(j);
                    return w;
                  }(),
                  [s, J, iBeta, iSig0, iRho2, iNu](std::vector<double>& st,
                                                   RandomStream& rng, const SweepInfo&) {
                    const double nu = st[iNu], rho2 = st[iRho2];
                    for (std::size_t j = 0; j < J; ++j) {
                      const double rss = residual_ss(*s, j, st[j], st[iBeta]);
                      const double dof = nu + s->n[j];
                      st[iSig0 + j] =
                          sample_scaled_inv_chi2(dof, (nu * rho2 + rss) / dof, rng);
                    }
                  },
                  nullptr});
    ks.push_back({"rho2",
                  {iRho2},
                  [J, iSig0, iRho2, iNu](std::vector<double>& st, RandomStream& rng,
                                         const SweepInfo&) {
                    st[iRho2] = draw_rho2_conditional({st.data() + iSig0, J}, st[iNu], rng);
                  },
                  nullptr});
    {
      auto scale = std::make_shared<AdaptiveScale>(0.5);
      auto tracker = std::make_shared<AcceptanceTracker>();
      ks.push_back({"nu",
                    {iNu},
                    [pr, J, iSig0, iRho2, iNu, scale, tracker](std::vector<double>& st,
                                                               RandomStream& rng,
                                                               const SweepInfo& info) {
                      const std::span<const double> sig{st.data() + iSig0, J};
                      auto target = [&](double nu) {
                        return log_exponential_pdf(nu, 1.0 / pr.nu_hat) +
                               log_nu_loglik(nu, sig, st[iRho2]);
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
  for (std::size_t j = 0; j < J; ++j)
    fit.constants.push_back({"xbar[" + s->labels[j] + "]", s->xbar[j]});
  fit.pointwise = [v = row_view(table), xb = s->xbar, J, iBeta,
                   iSig0](std::span<const double> row, std::vector<double>& out) {
    out.resize(v.y.size());
    for (std::size_t i = 0; i < v.y.size(); ++i) {
      const auto g = static_cast<std::size_t>(v.group[i]);
      const double m = row[g] + row[iBeta] * (v.x[i] - xb[g]);
      out[i] = log_normal_pdf(v.y[i], m, row[iSig0 + g]);
    }
  };
  return fit;
}

ModelFit fit_varying_intercepts_slopes(const ObservationTable& table,
                                       const RegressionPriors& priors,
                                       const ChainConfig& config,
                                       const VaryingSlopesOptions& options) {
  config.validate();
  if (options.quantile != 0.5)
    throw ConfigError(
        "asymmetric-quantile regression is not implemented; quantile must be 0.5");
  require_covariate(table);
  auto s = std::make_shared<const RegSuff>(per_group_suff(table));
  require_hier_regression(*s);
  check_priors(priors, *s);
  const std::size_t J = s->J();
  const bool laplace = options.noise == RegressionNoise::laplace;

  const int iA0 = 0, iB0 = static_cast<int>(J), iMu = 2 * static_cast<int>(J);
  const int iGamma = iMu + 1, iTau2 = iMu + 2, iZeta2 = iMu + 3, iRho = iMu + 4;
  const int iSig0 = iMu + 5;
  const int iRho2 = iSig0 + static_cast<int>(J), iNu = iRho2 + 1;

  GibbsProblem p;
  p.model_tag = laplace ? "regression:varying-both" : "regression:varying-both:normal";
  for (const auto& l : s->labels) p.params.push_back({"alpha[" + l + "]", Domain::real});
  for (const auto& l : s->labels) p.params.push_back({"beta[" + l + "]", Domain::real});
  p.params.push_back({"mu", Domain::real});
  p.params.push_back({"gamma", Domain::real});
  p.params.push_back({"tau2", Domain::positive});
  p.params.push_back({"zeta2", Domain::positive});
  p.params.push_back({"rho_ab", Domain::correlation});
  for (const auto& l : s->labels) p.params.push_back({"sigma2[" + l + "]", Domain::positive});
  p.params.push_back({"rho2", Domain::positive});
  p.params.push_back({"nu", Domain::positive});

  p.init = priors.alpha_mean;
  p.init.insert(p.init.end(), priors.beta_mean.begin(), priors.beta_mean.end());
  p.init.push_back(priors.mu_hat);
  p.init.push_back(priors.gamma_hat);
  p.init.push_back(priors.tau2_hat);
  p.init.push_back(priors.zeta2_hat);
  p.init.push_back(0.0);
  for (std::size_t j = 0; j < J; ++j) p.init.push_back(priors.sigma2_mean[j]);
  p.init.push_back(vec_mean(priors.sigma2_mean));
  p.init.push_back(priors.nu_hat);

  auto raw = std::make_shared<const RawGroups>(raw_groups(table, *s));
  const RegressionPriors pr = priors;
  const auto labels = s->labels;

  // group log likelihood under the chosen noise family; the scale of the
  // Laplace density is sqrt(sigma2_j)
  auto group_loglik = [raw, laplace](std::size_t j, double a, double b, double s2) {
    const auto& y = raw->y[j];
    const auto& xc = raw->xc[j];
    double lp = 0.0;
    if (laplace) {
      const double sc = std::sqrt(s2);
      for (std::size_t i = 0; i < y.size(); ++i)
        lp += log_laplace_pdf(y[i], a + b * xc[i], sc);
    } else {
      for (std::size_t i = 0; i < y.size(); ++i)
        lp += log_normal_pdf(y[i], a + b * xc[i], s2);
    }
    return lp;
  };

  p.make_kernels = [pr, labels, group_loglik, J, iA0, iB0, iMu, iGamma, iTau2, iZeta2,
                    iRho, iSig0, iRho2, iNu](int) {
    std::vector<GibbsKernel> ks;
    for (std::size_t j = 0; j < J; ++j) {
      // joint walk shaped like the separate-fit coefficient covariance
      double va = std::max(pr.alpha_var[j], 1e-12);
      double vb = std::max(pr.beta_var[j], 1e-12);
      const double l11 = std::sqrt(va);
      const double l21 = pr.ab_cov[j] / l11;
      const double l22 = std::sqrt(std::max(vb - l21 * l21, 1e-6 * vb));
      auto scale = std::make_shared<AdaptiveScale>(1.0, 0.234);
      auto tracker = std::make_shared<AcceptanceTracker>();
      ks.push_back(
          {"coef[" + labels[j] + "]",
           {iA0 + static_cast<int>(j), iB0 + static_cast<int>(j)},
           [group_loglik, j, l11, l21, l22, J, iMu, iTau2, iZeta2, iRho, iSig0, scale,
            tracker](std::vector<double>& st, RandomStream& rng, const SweepInfo& info) {
             const double a = st[j], b = st[J + j];
             const double z1 = sample_normal(0.0, 1.0, rng);
             const double z2 = sample_normal(0.0, 1.0, rng);
             const double sc = scale->scale();
             const double pa = a + sc * l11 * z1;
             const double pb = b + sc * (l21 * z1 + l22 * z2);
             auto target = [&](double aa, double bb) {
               return group_loglik(j, aa, bb, st[iSig0 + j]) +
                      log_bivariate_normal_pdf(aa, bb, st[iMu], st[iMu + 1], st[iTau2],
                                               st[iZeta2], st[iRho]);
             };
             const double lr = target(pa, pb) - target(a, b);
             const bool accepted = std::log(rng.uniform()) < lr;
             if (accepted) {
               st[j] = pa;
               st[J + j] = pb;
             }
             tracker->record(accepted, info.adapting);
             scale->observe(accepted, info.adapting);
           },
           tracker});
    }
    // (mu, gamma) joint conjugate: normal prior x MVN likelihood of the
    // per-group coefficients
    ks.push_back(
        {"mean",
         {iMu, iGamma},
         [pr, J, iMu, iGamma, iTau2, iZeta2, iRho](std::vector<double>& st,
                                                   RandomStream& rng, const SweepInfo&) {
           const double t2 = st[iTau2], z2 = st[iZeta2], r = st[iRho];
           const double c = 1.0 - r * r;
           const double inv11 = 1.0 / (t2 * c);
           const double inv22 = 1.0 / (z2 * c);
           const double inv12 = -r / (std::sqrt(t2 * z2) * c);
           double sa = 0.0, sb = 0.0;
           for (std::size_t j = 0; j < J; ++j) {
             sa += st[j];
             sb += st[J + j];
           }
           const double Jd = static_cast<double>(J);
           const double p11 = 1.0 / pr.sigma2_mu_hat + Jd * inv11;
           const double p22 = 1.0 / pr.sigma2_gamma_hat + Jd * inv22;
           const double p12 = Jd * inv12;
           const double b1 = pr.mu_hat / pr.sigma2_mu_hat + inv11 * sa + inv12 * sb;
           const double b2 = pr.gamma_hat / pr.sigma2_gamma_hat + inv12 * sa + inv22 * sb;
           const double det = p11 * p22 - p12 * p12;
           const double m1 = (p22 * b1 - p12 * b2) / det;
           const double m2 = (p11 * b2 - p12 * b1) / det;
           const double v1 = p22 / det, v2 = p11 / det;
           double corr = -p12 / det / std::sqrt(v1 * v2);
           corr = std::clamp(corr, -0.999999999999, 0.999999999999);
           const auto [m, g] = sample_bivariate_normal(m1, m2, v1, v2, corr, rng);
           st[iMu] = m;
           st[iGamma] = g;
         },
         nullptr});
    {
      auto scale = std::make_shared<AdaptiveScale>(0.5);
      auto tracker = std::make_shared<AcceptanceTracker>();
      ks.push_back({"tau2",
                    {iTau2},
                    [pr, J, iMu, iTau2, iZeta2, iRho, scale, tracker](
                        std::vector<double>& st, RandomStream& rng, const SweepInfo& info) {
                      auto target = [&](double t2) {
                        return log_exponential_pdf(t2, 1.0 / pr.tau2_hat) +
                               coef_prior_sum(st, J, iMu, t2, st[iZeta2], st[iRho]);
                      };
                      const auto res =
                          metropolis_step_log_scale(target, st[iTau2], scale->scale(), rng);
                      st[iTau2] = res.value;
                      tracker->record(res.accepted, info.adapting);
                      scale->observe(res.accepted, info.adapting);
                    },
                    tracker});
    }
    {
      auto scale = std::make_shared<AdaptiveScale>(0.5);
      auto tracker = std::make_shared<AcceptanceTracker>();
      ks.push_back({"zeta2",
                    {iZeta2},
                    [pr, J, iMu, iTau2, iZeta2, iRho, scale, tracker](
                        std::vector<double>& st, RandomStream& rng, const SweepInfo& info) {
                      auto target = [&](double z2) {
                        return log_exponential_pdf(z2, 1.0 / pr.zeta2_hat) +
                               coef_prior_sum(st, J, iMu, st[iTau2], z2, st[iRho]);
                      };
                      const auto res =
                          metropolis_step_log_scale(target, st[iZeta2], scale->scale(), rng);
                      st[iZeta2] = res.value;
                      tracker->record(res.accepted, info.adapting);
                      scale->observe(res.accepted, info.adapting);
                    },
                    tracker});
    }
    {
      auto scale = std::make_shared<AdaptiveScale>(0.2);
      auto tracker = std::make_shared<AcceptanceTracker>();
      ks.push_back({"rho_ab",
                    {iRho},
                    [J, iMu, iTau2, iZeta2, iRho, scale, tracker](
                        std::vector<double>& st, RandomStream& rng, const SweepInfo& info) {
                      auto target = [&](double r) {
                        // off-support proposals die on the prior before the
                        // MVN density sees an invalid correlation
                        const double prior = log_lkj_corr_2x2_pdf(r, 2.0);
                        if (!std::isfinite(prior)) return prior;
                        return prior +
                               coef_prior_sum(st, J, iMu, st[iTau2], st[iZeta2], r);
                      };
                      const auto res =
                          metropolis_step(target, st[iRho], scale->scale(), rng);
                      st[iRho] = res.value;
                      tracker->record(res.accepted, info.adapting);
                      scale->observe(res.accepted, info.adapting);
                    },
                    tracker});
    }
    for (std::size_t j = 0; j < J; ++j) {
      // the Laplace likelihood breaks Inv-chi2 conjugacy, so the cell
      // variances walk on the log scale against prior x likelihood
      auto scale = std::make_shared<AdaptiveScale>(0.5);
      auto tracker = std::make_shared<AcceptanceTracker>();
      ks.push_back({"sigma2[" + labels[j] + "]",
                    {iSig0 + static_cast<int>(j)},
                    [group_loglik, j, J, iSig0, iRho2, iNu, scale, tracker](
                        std::vector<double>& st, RandomStream& rng, const SweepInfo& info) {
                      auto target = [&](double s2) {
                        return log_scaled_inv_chi2_pdf(s2, st[iNu], st[iRho2]) +
                               group_loglik(j, st[j], st[J + j], s2);
                      };
                      const auto res = metropolis_step_log_scale(
                          target, st[iSig0 + static_cast<int>(j)], scale->scale(), rng);
                      st[iSig0 + static_cast<int>(j)] = res.value;
                      tracker->record(res.accepted, info.adapting);
                      scale->observe(res.accepted, info.adapting);
                    },
                    tracker});
    }
    ks.push_back({"rho2",
                  {iRho2},
                  [J, iSig0, iRho2, iNu](std::vector<double>& st, RandomStream& rng,
                                         const SweepInfo&) {
                    st[iRho2] = draw_rho2_conditional({st.data() + iSig0, J}, st[iNu], rng);
                  },
                  nullptr});
    {
      auto scale = std::make_shared<AdaptiveScale>(0.5);
      auto tracker = std::make_shared<AcceptanceTracker>();
      ks.push_back({"nu",
                    {iNu},
                    [pr, J, iSig0, iRho2, iNu, scale, tracker](std::vector<double>& st,
                                                               RandomStream& rng,
                                                               const SweepInfo& info) {
                      const std::span<const double> sig{st.data() + iSig0, J};
                      auto target = [&](double nu) {
                        return log_exponential_pdf(nu, 1.0 / pr.nu_hat) +
                               log_nu_loglik(nu, sig, st[iRho2]);
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
  for (std::size_t j = 0; j < J; ++j)
    fit.constants.push_back({"xbar[" + s->labels[j] + "]", s->xbar[j]});
  fit.pointwise = [v = row_view(table), xb = s->xbar, J, iSig0,
                   laplace](std::span<const double> row, std::vector<double>& out) {
    out.resize(v.y.size());
    for (std::size_t i = 0; i < v.y.size(); ++i) {
      const auto g = static_cast<std::size_t>(v.group[i]);
      const double m = row[g] + row[J + g] * (v.x[i] - xb[g]);
      out[i] = laplace ? log_laplace_pdf(v.y[i], m, std::sqrt(row[iSig0 + g]))
                       : log_normal_pdf(v.y[i], m, row[iSig0 + g]);
    }
  };
  return fit;
}

namespace {

double noise_cdf(double q, double m, double scale, bool laplace) {
  if (laplace) {
    const double z = (q - m) / scale;
    return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
  }
  return normal_cdf((q - m) / scale);
}

// p-quantile of the draw mixture (1/S) sum_s F((q - m_s) / scale_s) by
// bisection; monotone, so the result is deterministic in the draws.
double mixture_quantile(const std::vector<double>& m, const std::vector<double>& scale,
                        bool laplace, double p) {
  double lo = m[0], hi = m[0], smax = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    lo = std::min(lo, m[i]);
    hi = std::max(hi, m[i]);
    smax = std::max(smax, scale[i]);
  }
  lo -= 40.0 * smax;
  hi += 40.0 * smax;
  auto cdf = [&](double q) {
    double f = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i)
      f += noise_cdf(q, m[i], scale[i], laplace);
    return f / static_cast<double>(m.size());
  };
  for (int it = 0; it < 200 && hi - lo > 1e-10 * (1.0 + std::abs(lo) + std::abs(hi));
       ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double fit_constant(const ModelFit& fit, const std::string& name) {
  for (const auto& [key, value] : fit.constants)
    if (key == name) return value;
  throw ConfigError("fit is missing the recorded constant '" + name + "'");
}

}  // namespace

RegressionReport regression_report(const ModelFit& fit, std::span<const double> grid,
                                   double level) {
  const auto& tag = fit.draws.model_tag;
  const bool national = tag == "regression:national";
  const bool common_slope = tag == "regression:varying-intercepts";
  const bool laplace = tag == "regression:varying-both";
  if (tag.rfind("regression:", 0) != 0)
    throw ConfigError("not a regression fit: '" + tag + "'");

  RegressionReport report;
  const auto summaries = summarize_draws(fit.draws, level);
  for (const auto& s : summaries) {
    if (s.name.rfind("alpha", 0) == 0) report.intercepts.push_back(s);
    if (s.name.rfind("beta", 0) == 0) report.slopes.push_back(s);
  }

  std::vector<double> xs(grid.begin(), grid.end());
  std::sort(xs.begin(), xs.end());

  std::vector<std::string> groups;
  if (national) {
    groups.push_back("national");
  } else {
    for (const auto& p : fit.draws.params)
      if (p.name.rfind("alpha[", 0) == 0)
        groups.push_back(p.name.substr(6, p.name.size() - 7));
  }

  const double plo = (1.0 - level) / 2.0, phi = (1.0 + level) / 2.0;
  for (const auto& label : groups) {
    const int ia = fit.draws.param_index(national ? "alpha" : "alpha[" + label + "]");
    const int ib = national ? fit.draws.param_index("beta")
                   : common_slope
                       ? fit.draws.param_index("beta")
                       : fit.draws.param_index("beta[" + label + "]");
    const int is2 = fit.draws.param_index(national ? "sigma2" : "sigma2[" + label + "]");
    const double xbar = fit_constant(fit, national ? "xbar" : "xbar[" + label + "]");

    const auto a = fit.draws.column(ia);
    const auto b = fit.draws.column(ib);
    const auto s2 = fit.draws.column(is2);
    const std::size_t S = a.size();
    // the predictive mixture is bisected per grid point, so cap the draws it
    // sees; a strided subsample keeps the result deterministic
    const std::size_t stride = std::max<std::size_t>(1, S / 1000);
    std::vector<double> scale_sub, a_sub, b_sub;
    for (std::size_t i = 0; i < S; i += stride) {
      a_sub.push_back(a[i]);
      b_sub.push_back(b[i]);
      scale_sub.push_back(std::sqrt(s2[i]));
    }

    GroupBands gb;
    gb.label = label;
    std::vector<double> line(S), m_sub(a_sub.size());
    for (const double x : xs) {
      BandPoint pt;
      pt.x = x;
      for (std::size_t i = 0; i < S; ++i) line[i] = a[i] + b[i] * (x - xbar);
      double mean = 0.0;
      for (const double v : line) mean += v;
      pt.line_mean = mean / static_cast<double>(S);
      pt.line_lo = quantile(line, plo);
      pt.line_hi = quantile(line, phi);
      for (std::size_t i = 0; i < m_sub.size(); ++i)
        m_sub[i] = a_sub[i] + b_sub[i] * (x - xbar);
      pt.pred_lo = mixture_quantile(m_sub, scale_sub, laplace, plo);
      pt.pred_hi = mixture_quantile(m_sub, scale_sub, laplace, phi);
      gb.points.push_back(pt);
    }
    report.bands.push_back(std::move(gb));
  }
  return report;
}

}  // namespace hierbayes
