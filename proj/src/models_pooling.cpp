#include "hierbayes/models_pooling.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hierbayes/distributions.hpp"
#include "hierbayes/errors.hpp"
#include "model_merge.hpp"

namespace hierbayes {

namespace {

struct Suff {
  std::vector<std::string> labels;
  std::vector<double> n;
  std::vector<double> mean;
  std::vector<double> ss;  // sum of squares about the group mean
  double n_total = 0.0;
  double grand_mean = 0.0;
};

Suff suff_of(const ObservationTable& table) {
  const auto s = summarize(table);
  Suff out;
  for (const auto& g : s.groups) {
    out.labels.push_back(g.label);
    out.n.push_back(static_cast<double>(g.n));
    out.mean.push_back(g.mean);
    out.ss.push_back(g.variance * (static_cast<double>(g.n) - 1.0));
  }
  out.n_total = static_cast<double>(s.n_total);
  out.grand_mean = s.grand_mean;
  return out;
}

std::vector<double> responses_of(const ObservationTable& table) {
  std::vector<double> y;
  y.reserve(table.rows.size());
  for (const auto& r : table.rows) y.push_back(r.response);
  return y;
}

}  // namespace

ModelFit fit_no_pooling(const ObservationTable& table, const ChainConfig& config) {
  config.validate();
  const auto s = suff_of(table);
  const std::size_t J = s.labels.size();
  for (std::size_t j = 0; j < J; ++j) {
    if (s.n[j] < 2.0)
      throw DataError("no-pooling: group '" + s.labels[j] +
                      "' has fewer than 2 observations");
    if (s.ss[j] <= 0.0)
      throw DataError("no-pooling: group '" + s.labels[j] +
                      "' has constant response; its variance conditional is degenerate");
  }

  std::vector<PosteriorDraws> parts;
  parts.reserve(J);
  for (std::size_t j = 0; j < J; ++j) {
    const double nj = s.n[j], mj = s.mean[j], ssj = s.ss[j];
    GibbsProblem p;
    p.model_tag = "no-pooling:" + s.labels[j];
    p.params = {{"theta", Domain::real}, {"sigma2", Domain::positive}};
    p.init = {mj, ssj / (nj - 1.0)};
    p.make_kernels = [nj, mj, ssj](int) {
      std::vector<GibbsKernel> ks;
      ks.push_back({"theta",
                    {0},
                    [nj, mj](std::vector<double>& st, RandomStream& rng, const SweepInfo&) {
                      st[0] = sample_normal(mj, st[1] / nj, rng);
                    },
                    nullptr});
      // v_j averages the squared residuals about the current theta
      ks.push_back({"sigma2",
                    {1},
                    [nj, mj, ssj](std::vector<double>& st, RandomStream& rng,
                                  const SweepInfo&) {
                      const double v = (ssj + nj * (mj - st[0]) * (mj - st[0])) / nj;
                      st[1] = sample_scaled_inv_chi2(nj, v, rng);
                    },
                    nullptr});
      return ks;
    };
    ChainConfig sub = config;
    sub.stream_offset = config.stream_offset + static_cast<std::uint64_t>(j) * kGroupStreamStride;
    parts.push_back(run_gibbs(p, sub));
  }

  std::vector<internal::ColumnRef> layout;
  for (std::size_t j = 0; j < J; ++j)
    layout.push_back({static_cast<int>(j), 0, "theta[" + s.labels[j] + "]", Domain::real});
  for (std::size_t j = 0; j < J; ++j)
    layout.push_back(
        {static_cast<int>(j), 1, "sigma2[" + s.labels[j] + "]", Domain::positive});

  ModelFit fit;
  fit.draws = internal::gather_columns(parts, layout, "no-pooling", config);
  fit.n_obs = table.rows.size();
  fit.data_digest = data_digest(table);
  fit.pointwise = [y = responses_of(table), gi = table.group_index,
                   J](std::span<const double> row, std::vector<double>& out) {
    out.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const std::size_t g = static_cast<std::size_t>(gi[i]);
      out[i] = log_normal_pdf(y[i], row[g], row[J + g]);
    }
  };
  return fit;
}

ModelFit fit_complete_pooling(const ObservationTable& table, const ChainConfig& config) {
  config.validate();
  const auto s = suff_of(table);
  if (s.n_total < 2.0) throw DataError("complete-pooling: need at least 2 observations");
  double total_ss = 0.0;
  for (std::size_t j = 0; j < s.labels.size(); ++j)
    total_ss += s.ss[j] + s.n[j] * (s.mean[j] - s.grand_mean) * (s.mean[j] - s.grand_mean);
  if (total_ss <= 0.0)
    throw DataError("complete-pooling: all responses are equal; the variance "
                    "conditional is degenerate");

  const auto n = s.n;
  const auto mean = s.mean;
  const auto ss = s.ss;
  const double n_total = s.n_total;

  GibbsProblem p;
  p.model_tag = "complete-pooling";
  p.params = {{"theta", Domain::real}, {"sigma2", Domain::positive}};
  p.init = {s.grand_mean, total_ss / (n_total - 1.0)};
  p.make_kernels = [n, mean, ss, n_total](int) {
    std::vector<GibbsKernel> ks;
    // precision-weighted grand mean with sbar_j^2 = sigma^2 / n_j
    ks.push_back({"theta",
                  {0},
                  [n, mean](std::vector<double>& st, RandomStream& rng, const SweepInfo&) {
                    double prec = 0.0, num = 0.0;
                    for (std::size_t j = 0; j < n.size(); ++j) {
                      const double sbar2 = st[1] / n[j];
                      prec += 1.0 / sbar2;
                      num += mean[j] / sbar2;
                    }
                    st[0] = sample_normal(num / prec, 1.0 / prec, rng);
                  },
                  nullptr});
    ks.push_back({"sigma2",
                  {1},
                  [n, mean, ss, n_total](std::vector<double>& st, RandomStream& rng,
                                         const SweepInfo&) {
                    double resid = 0.0;
                    for (std::size_t j = 0; j < n.size(); ++j)
                      resid += ss[j] + n[j] * (mean[j] - st[0]) * (mean[j] - st[0]);
                    st[1] = sample_scaled_inv_chi2(n_total, resid / n_total, rng);
                  },
                  nullptr});
    return ks;
  };

  ModelFit fit;
  fit.draws = run_gibbs(p, config);
  fit.n_obs = table.rows.size();
  fit.data_digest = data_digest(table);
  fit.pointwise = [y = responses_of(table)](std::span<const double> row,
                                            std::vector<double>& out) {
    out.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
      out[i] = log_normal_pdf(y[i], row[0], row[1]);
  };
  return fit;
}

ModelFit fit_complete_pooling_frozen_sigma(const ObservationTable& table, double sigma2,
                                           const ChainConfig& config) {
  config.validate();
  if (!(sigma2 > 0.0)) throw ConfigError("frozen sigma2 must be positive");
  const auto s = suff_of(table);
  if (s.n_total < 1.0) throw DataError("complete-pooling: empty table");

  const auto n = s.n;
  const auto mean = s.mean;

  GibbsProblem p;
  p.model_tag = "complete-pooling(frozen-sigma2)";
  p.params = {{"theta", Domain::real}};
  p.init = {s.grand_mean};
  p.make_kernels = [n, mean, sigma2](int) {
    std::vector<GibbsKernel> ks;
    ks.push_back({"theta",
                  {0},
                  [n, mean, sigma2](std::vector<double>& st, RandomStream& rng,
                                    const SweepInfo&) {
                    double prec = 0.0, num = 0.0;
                    for (std::size_t j = 0; j < n.size(); ++j) {
                      const double sbar2 = sigma2 / n[j];
                      prec += 1.0 / sbar2;
                      num += mean[j] / sbar2;
                    }
                    st[0] = sample_normal(num / prec, 1.0 / prec, rng);
                  },
                  nullptr});
    return ks;
  };

  ModelFit fit;
  fit.draws = run_gibbs(p, config);
  fit.constants = {{"sigma2", sigma2}};
  fit.n_obs = table.rows.size();
  fit.data_digest = data_digest(table);
  fit.pointwise = [y = responses_of(table), sigma2](std::span<const double> row,
                                                    std::vector<double>& out) {
    out.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
      out[i] = log_normal_pdf(y[i], row[0], sigma2);
  };
  return fit;
}

}  // namespace hierbayes
