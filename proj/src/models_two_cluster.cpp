#include "hierbayes/models_two_cluster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <future>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "hierbayes/distributions.hpp"
#include "hierbayes/errors.hpp"
#include "hierbayes/models_hier.hpp"

namespace hierbayes {

double draw_cell_variance_conditional(double nu, double rho2, double n, double v,
                                      RandomStream& rng) {
  const double dof = nu + n;
  return sample_scaled_inv_chi2(dof, (nu * rho2 + n * v) / dof, rng);
}

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

// Rows at one second-cluster level, regrouped so the one-cluster machinery
// sees a plain (group, response) table.
ObservationTable subset_by_second(const ObservationTable& table, int k) {
  ObservationTable out;
  std::map<std::string, int> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    if (table.second_index[r] != k) continue;
    Observation o = table.rows[r];
    o.second.clear();
    auto it = seen.find(o.group);
    if (it == seen.end()) {
      it = seen.emplace(o.group, static_cast<int>(out.groups.size())).first;
      out.groups.push_back(o.group);
    }
    out.group_index.push_back(it->second);
    out.rows.push_back(std::move(o));
  }
  out.has_covariate = table.has_covariate;
  return out;
}

void require_two_levels(const ObservationTable& table) {
  if (!table.has_second)
    throw SchemaError("the two-cluster model needs a second-cluster column");
  if (table.seconds.size() < 2)
    throw DataError("second cluster has a single level '" + table.seconds[0] +
                    "'; fit the one-cluster hierarchical model instead");
}

// Flattened (group x level) sufficient statistics, j-major.
struct CellStats {
  std::size_t J = 0, K = 0;
  std::vector<double> n, sum, sumsq;

  std::size_t at(std::size_t j, std::size_t k) const { return j * K + k; }
};

CellStats cell_stats(const CellData& cells) {
  CellStats s;
  s.J = cells.group_labels.size();
  s.K = cells.second_labels.size();
  s.n.assign(s.J * s.K, 0.0);
  s.sum.assign(s.J * s.K, 0.0);
  s.sumsq.assign(s.J * s.K, 0.0);
  for (std::size_t j = 0; j < s.J; ++j)
    for (std::size_t k = 0; k < s.K; ++k) {
      const auto idx = s.at(j, k);
      for (const double y : cells.cells[j][k]) {
        s.n[idx] += 1.0;
        s.sum[idx] += y;
        s.sumsq[idx] += y * y;
      }
    }
  return s;
}

// Sum of squares about a common center from the raw sums; clamped at zero
// against cancellation when the center sits on the cell mean.
double cell_ssq(const CellStats& s, std::size_t idx, double center) {
  const double ssq = s.sumsq[idx] - 2.0 * center * s.sum[idx] +
                     s.n[idx] * center * center;
  return std::max(0.0, ssq);
}

}  // namespace

TwoClusterPriors build_two_cluster_priors(const ObservationTable& table,
                                          const ChainConfig& config) {
  config.validate();
  require_two_levels(table);
  const auto cells = cell_rows(table);
  const std::size_t K = cells.second_labels.size();

  std::string small;
  for (std::size_t j = 0; j < cells.group_labels.size(); ++j)
    for (std::size_t k = 0; k < K; ++k)
      if (cells.cells[j][k].size() < 2)
        small += " '" + cells.group_labels[j] + "|" + cells.second_labels[k] + "'";
  if (!small.empty())
    throw DataError(
        "two-cluster prior construction needs at least 2 rows per "
        "(group, level) cell; too small:" +
        small);

  // 1 + K one-cluster fits on disjoint stream ranges: all rows anchor mu and
  // tau2, each level subset anchors its lambda_k and nu_k
  const auto strategy = NuStrategy::parse("fixed");
  auto run_block = [&](const ObservationTable& t, std::uint64_t role) {
    ChainConfig c = config;
    c.stream_offset = config.stream_offset + (1 + role) * kFitStreamStride;
    return fit_hier_varying_sigma(t, strategy, c);
  };

  std::vector<ObservationTable> subsets;
  for (std::size_t k = 0; k < K; ++k)
    subsets.push_back(subset_by_second(table, static_cast<int>(k)));

  std::vector<ModelFit> fits(1 + K);
  const char* env = std::getenv("HIERBAYES_THREADS");
  if (env && std::atoi(env) > 1) {
    std::vector<std::future<ModelFit>> futures;
    futures.push_back(std::async(std::launch::async, [&] { return run_block(table, 0); }));
    for (std::size_t k = 0; k < K; ++k)
      futures.push_back(
          std::async(std::launch::async, [&, k] { return run_block(subsets[k], 1 + k); }));
    // collect in role order so any failure surfaces deterministically
    for (std::size_t r = 0; r < futures.size(); ++r) fits[r] = futures[r].get();
  } else {
    fits[0] = run_block(table, 0);
    for (std::size_t k = 0; k < K; ++k) fits[1 + k] = run_block(subsets[k], 1 + k);
  }

  TwoClusterPriors priors;
  priors.second_labels = cells.second_labels;
  const auto mu_draws = fits[0].draws.column(fits[0].draws.param_index("mu"));
  const auto tau2_draws = fits[0].draws.column(fits[0].draws.param_index("tau2"));
  priors.mu_hat = vec_mean(mu_draws);
  priors.sigma2_mu_hat = vec_variance(mu_draws);
  priors.tau2_hat = vec_mean(tau2_draws);

  for (std::size_t k = 0; k < K; ++k) {
    const auto& fit = fits[1 + k];
    const auto mu_k = fit.draws.column(fit.draws.param_index("mu"));
    priors.lambda_hat.push_back(vec_mean(mu_k) - priors.mu_hat);
    double nu_k = 0.0;
    for (const auto& [key, value] : fit.constants)
      if (key == "nu") nu_k = value;
    priors.nu_hat.push_back(nu_k);
  }

  // spread of the estimated offsets, floored so degenerate (all equal)
  // estimates still give a proper prior
  priors.xi2_hat = vec_variance(priors.lambda_hat);
  const double floor = 1e-6 * response_variance(table);
  if (!(priors.xi2_hat > floor)) priors.xi2_hat = floor > 0.0 ? floor : 1e-6;
  return priors;
}

ModelFit fit_two_cluster(const ObservationTable& table, const TwoClusterPriors& priors,
                         const ChainConfig& config) {
  config.validate();
  require_two_levels(table);
  const auto cells = cell_rows(table);
  if (priors.second_labels != cells.second_labels)
    throw ConfigError(
        "two-cluster priors were built for a different level partition; "
        "rebuild them from this table");
  if (priors.lambda_hat.size() != cells.second_labels.size() ||
      priors.nu_hat.size() != cells.second_labels.size())
    throw ConfigError("two-cluster priors are incomplete; rebuild them from this table");
  if (!(priors.sigma2_mu_hat > 0.0) || !(priors.tau2_hat > 0.0) ||
      !(priors.xi2_hat > 0.0))
    throw ConfigError("two-cluster priors need positive variance estimates");
  for (const double nu : priors.nu_hat)
    if (!(nu > 0.0)) throw ConfigError("two-cluster priors need positive nu estimates");

  const auto d = std::make_shared<const CellStats>(cell_stats(cells));
  const std::size_t J = d->J, K = d->K;
  const int iLam0 = static_cast<int>(J);
  const int iMu = iLam0 + static_cast<int>(K), iTau2 = iMu + 1, iXi2 = iMu + 2;
  const int iSig0 = iXi2 + 1;
  const int iRho0 = iSig0 + static_cast<int>(J * K);
  const int iNu0 = iRho0 + static_cast<int>(K);

  GibbsProblem p;
  p.model_tag = "two-cluster";
  for (const auto& g : cells.group_labels) p.params.push_back({"theta[" + g + "]", Domain::real});
  for (const auto& l : cells.second_labels)
    p.params.push_back({"lambda[" + l + "]", Domain::real});
  p.params.push_back({"mu", Domain::real});
  p.params.push_back({"tau2", Domain::positive});
  p.params.push_back({"xi2", Domain::positive});
  for (const auto& g : cells.group_labels)
    for (const auto& l : cells.second_labels)
      p.params.push_back({"sigma2[" + g + "|" + l + "]", Domain::positive});
  for (const auto& l : cells.second_labels)
    p.params.push_back({"rho2[" + l + "]", Domain::positive});
  for (const auto& l : cells.second_labels)
    p.params.push_back({"nu[" + l + "]", Domain::positive});

  const auto by_group = summarize(table, GroupBy::group);
  const auto by_level = summarize(table, GroupBy::second);
  const double grand = by_group.grand_mean;
  const double total_var = response_variance(table);
  const double var_fallback = total_var > 0.0 ? total_var : 1.0;

  std::vector<double> cell_var(J * K, var_fallback);
  for (std::size_t idx = 0; idx < J * K; ++idx)
    if (d->n[idx] > 1.0) {
      const double v =
          cell_ssq(*d, idx, d->sum[idx] / d->n[idx]) / (d->n[idx] - 1.0);
      if (v > 0.0) cell_var[idx] = v;
    }

  p.init.clear();
  for (const auto& g : by_group.groups) p.init.push_back(g.mean);
  for (const auto& l : by_level.groups) p.init.push_back(l.mean - grand);
  p.init.push_back(grand);
  p.init.push_back(priors.tau2_hat);
  p.init.push_back(priors.xi2_hat);
  for (std::size_t idx = 0; idx < J * K; ++idx) p.init.push_back(cell_var[idx]);
  for (std::size_t k = 0; k < K; ++k) {
    double m = 0.0;
    for (std::size_t j = 0; j < J; ++j) m += cell_var[d->at(j, k)];
    p.init.push_back(m / static_cast<double>(J));
  }
  for (std::size_t k = 0; k < K; ++k) p.init.push_back(priors.nu_hat[k]);

  const TwoClusterPriors pr = priors;
  const auto level_labels = cells.second_labels;
  p.make_kernels = [d, pr, level_labels, J, K, iLam0, iMu, iTau2, iXi2, iSig0, iRho0,
                    iNu0](int) {
    std::vector<GibbsKernel> ks;
    ks.push_back({"theta",
                  [&] {
                    std::vector<int> w(J);
                    for (std::size_t j = 0; j < J; ++j) w[j] = static_cast<int>(j);
                    return w;
                  }(),
                  [d, J, K, iLam0, iMu, iTau2, iSig0](std::vector<double>& st,
                                                      RandomStream& rng, const SweepInfo&) {
                    for (std::size_t j = 0; j < J; ++j) {
                      double prec = 1.0 / st[iTau2];
                      double num = st[iMu] / st[iTau2];
                      for (std::size_t k = 0; k < K; ++k) {
                        const auto idx = d->at(j, k);
                        const double s2 = st[iSig0 + idx];
                        prec += d->n[idx] / s2;
                        num += (d->sum[idx] - d->n[idx] * st[iLam0 + k]) / s2;
                      }
                      st[j] = sample_normal(num / prec, 1.0 / prec, rng);
                    }
                  },
                  nullptr});
    // zero prior mean pins the level offsets' overall location
    ks.push_back({"lambda",
                  [&] {
                    std::vector<int> w(K);
                    for (std::size_t k = 0; k < K; ++k) w[k] = iLam0 + static_cast<int>(k);
                    return w;
                  }(),
                  [d, J, K, iLam0, iXi2, iSig0](std::vector<double>& st, RandomStream& rng,
                                                const SweepInfo&) {
                    for (std::size_t k = 0; k < K; ++k) {
                      double prec = 1.0 / st[iXi2];
                      double num = 0.0;
                      for (std::size_t j = 0; j < J; ++j) {
                        const auto idx = d->at(j, k);
                        const double s2 = st[iSig0 + idx];
                        prec += d->n[idx] / s2;
                        num += (d->sum[idx] - d->n[idx] * st[j]) / s2;
                      }
                      st[iLam0 + k] = sample_normal(num / prec, 1.0 / prec, rng);
                    }
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
    {
      auto scale = std::make_shared<AdaptiveScale>(0.5);
      auto tracker = std::make_shared<AcceptanceTracker>();
      ks.push_back({"xi2",
                    {iXi2},
                    [pr, K, iLam0, iXi2, scale, tracker](std::vector<double>& st,
                                                         RandomStream& rng,
                                                         const SweepInfo& info) {
                      auto target = [&](double x2) {
                        double lp = log_exponential_pdf(x2, 1.0 / pr.xi2_hat);
                        for (std::size_t k = 0; k < K; ++k)
                          lp += log_normal_pdf(st[iLam0 + k], 0.0, x2);
                        return lp;
                      };
                      const auto res =
                          metropolis_step_log_scale(target, st[iXi2], scale->scale(), rng);
                      st[iXi2] = res.value;
                      tracker->record(res.accepted, info.adapting);
                      scale->observe(res.accepted, info.adapting);
                    },
                    tracker});
    }
    ks.push_back({"sigma2",
                  [&] {
                    std::vector<int> w(J * K);
                    for (std::size_t idx = 0; idx < J * K; ++idx)
                      w[idx] = iSig0 + static_cast<int>(idx);
                    return w;
                  }(),
                  [d, J, K, iLam0, iSig0, iRho0, iNu0](std::vector<double>& st,
                                                       RandomStream& rng, const SweepInfo&) {
                    for (std::size_t j = 0; j < J; ++j)
                      for (std::size_t k = 0; k < K; ++k) {
                        const auto idx = d->at(j, k);
                        const double v =
                            cell_ssq(*d, idx, st[j] + st[iLam0 + k]) / d->n[idx];
                        st[iSig0 + idx] = draw_cell_variance_conditional(
                            st[iNu0 + k], st[iRho0 + k], d->n[idx], v, rng);
                      }
                  },
                  nullptr});
    ks.push_back({"rho2",
                  [&] {
                    std::vector<int> w(K);
                    for (std::size_t k = 0; k < K; ++k) w[k] = iRho0 + static_cast<int>(k);
                    return w;
                  }(),
                  [d, J, K, iSig0, iRho0, iNu0](std::vector<double>& st, RandomStream& rng,
                                                const SweepInfo&) {
                    std::vector<double> col(J);
                    for (std::size_t k = 0; k < K; ++k) {
                      for (std::size_t j = 0; j < J; ++j)
                        col[j] = st[iSig0 + d->at(j, k)];
                      st[iRho0 + k] = draw_rho2_conditional(col, st[iNu0 + k], rng);
                    }
                  },
                  nullptr});
    for (std::size_t k = 0; k < K; ++k) {
      auto scale = std::make_shared<AdaptiveScale>(0.5);
      auto tracker = std::make_shared<AcceptanceTracker>();
      const double rate = 1.0 / pr.nu_hat[k];
      ks.push_back({"nu[" + level_labels[k] + "]",
                    {iNu0 + static_cast<int>(k)},
                    [d, J, k, rate, iSig0, iRho0, iNu0, scale,
                     tracker](std::vector<double>& st, RandomStream& rng,
                              const SweepInfo& info) {
                      std::vector<double> col(J);
                      for (std::size_t j = 0; j < J; ++j)
                        col[j] = st[iSig0 + d->at(j, k)];
                      auto target = [&](double nu) {
                        return log_exponential_pdf(nu, rate) +
                               log_nu_loglik(nu, col, st[iRho0 + k]);
                      };
                      const auto res = metropolis_step_log_scale(
                          target, st[iNu0 + static_cast<int>(k)], scale->scale(), rng);
                      st[iNu0 + static_cast<int>(k)] = res.value;
                      tracker->record(res.accepted, info.adapting);
                      scale->observe(res.accepted, info.adapting);
                    },
                    tracker});
    }
    return ks;
  };

  ModelFit fit;
  fit.draws = run_gibbs(p, config);
  fit.n_obs = J * K;
  fit.data_digest = data_digest(table);
  fit.obs_unit = "cell";
  fit.pointwise = [d, J, K, iLam0, iSig0](std::span<const double> row,
                                          std::vector<double>& out) {
    out.resize(J * K);
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t k = 0; k < K; ++k) {
        const auto idx = d->at(j, k);
        const double s2 = row[iSig0 + idx];
        const double ssq = cell_ssq(*d, idx, row[j] + row[iLam0 + k]);
        out[idx] = -0.5 * d->n[idx] * std::log(2.0 * std::numbers::pi * s2) -
                   ssq / (2.0 * s2);
      }
  };
  return fit;
}

}  // namespace hierbayes
