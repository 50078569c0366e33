#include "hierbayes/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <thread>

#include "hierbayes/distributions.hpp"
#include "hierbayes/errors.hpp"

namespace hierbayes {

void ChainConfig::validate() const {
  if (chains < 1) throw ConfigError("chain config: need at least one chain");
  if (iterations <= 0) throw ConfigError("chain config: iterations must be positive");
  if (burn_in < 0 || burn_in >= iterations)
    throw ConfigError("chain config: burn-in must lie in [0, iterations)");
  if (thin < 1) throw ConfigError("chain config: thin must be >= 1");
  if (retained_per_chain() < 100)
    throw ConfigError("chain config: fewer than 100 retained draws per chain ("
                      + std::to_string(retained_per_chain()) +
                      "); raise iterations or lower thin");
}

int PosteriorDraws::param_index(const std::string& name) const {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name == name) return static_cast<int>(i);
  return -1;
}

std::vector<double> PosteriorDraws::chain_column(int chain, int param) const {
  std::vector<double> out(retained);
  for (long d = 0; d < retained; ++d) out[d] = at(chain, d, param);
  return out;
}

std::vector<double> PosteriorDraws::column(int param) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(retained) * chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (long d = 0; d < retained; ++d) out.push_back(at(static_cast<int>(c), d, param));
  return out;
}

namespace {

void check_kernel_coverage(const GibbsProblem& problem,
                           const std::vector<GibbsKernel>& kernels) {
  std::vector<int> writers(problem.params.size(), 0);
  for (const auto& k : kernels) {
    if (k.writes.empty())
      throw ConfigError("kernel '" + k.label + "' declares no parameters");
    for (int w : k.writes) {
      if (w < 0 || static_cast<std::size_t>(w) >= problem.params.size())
        throw ConfigError("kernel '" + k.label + "' writes out-of-range index " +
                          std::to_string(w));
      writers[w] += 1;
    }
  }
  for (std::size_t i = 0; i < writers.size(); ++i) {
    if (writers[i] != 1)
      throw ConfigError("parameter '" + problem.params[i].name + "' is updated by " +
                        std::to_string(writers[i]) +
                        " kernels; each must be covered exactly once per sweep");
  }
}

void check_value(double x, const ParamSpec& spec, const std::string& kernel,
                 long sweep) {
  const char* problem = nullptr;
  if (!std::isfinite(x)) {
    problem = "non-finite";
  } else if (spec.domain == Domain::positive && !(x > 0.0)) {
    problem = "non-positive";
  } else if (spec.domain == Domain::correlation && !(x > -1.0 && x < 1.0)) {
    problem = "outside (-1, 1)";
  }
  if (problem)
    throw SamplingError("kernel '" + kernel + "' produced " + problem +
                        " value for parameter '" + spec.name + "' at sweep " +
                        std::to_string(sweep));
}

int thread_budget(int chains) {
  const char* env = std::getenv("HIERBAYES_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return std::clamp(n, 1, chains);
}

}  // namespace

PosteriorDraws run_gibbs(const GibbsProblem& problem, const ChainConfig& config) {
  config.validate();
  if (problem.params.empty()) throw ConfigError("run_gibbs: no parameters");
  if (problem.init.size() != problem.params.size())
    throw ConfigError("run_gibbs: init size does not match parameter count");
  if (!problem.make_kernels) throw ConfigError("run_gibbs: no kernel factory");
  for (std::size_t i = 0; i < problem.init.size(); ++i)
    check_value(problem.init[i], problem.params[i], "<init>", -1);

  const long retained = config.retained_per_chain();
  const std::size_t P = problem.params.size();

  PosteriorDraws out;
  out.model_tag = problem.model_tag;
  out.config = config;
  out.params = problem.params;
  out.retained = retained;
  out.chains.assign(config.chains,
                    std::vector<double>(static_cast<std::size_t>(retained) * P));

  std::vector<std::map<std::string, double>> chain_rates(config.chains);

  auto run_chain = [&](int c) {
    auto kernels = problem.make_kernels(c);
    check_kernel_coverage(problem, kernels);
    RandomStream rng(config.seed, config.stream_offset + static_cast<std::uint64_t>(c));
    std::vector<double> state = problem.init;
    auto& store = out.chains[c];
    long kept = 0;
    for (long sweep = 0; sweep < config.iterations; ++sweep) {
      const SweepInfo info{sweep, sweep < config.burn_in};
      for (auto& k : kernels) {
        k.step(state, rng, info);
        for (int w : k.writes) check_value(state[w], problem.params[w], k.label, sweep);
      }
      if (sweep >= config.burn_in &&
          (sweep - config.burn_in + 1) % config.thin == 0 && kept < retained) {
        std::copy(state.begin(), state.end(),
                  store.begin() + static_cast<std::size_t>(kept) * P);
        ++kept;
      }
    }
    for (const auto& k : kernels)
      if (k.acceptance) chain_rates[c][k.label] = k.acceptance->frozen_rate();
  };

  const int threads = thread_budget(config.chains);
  if (threads <= 1) {
    for (int c = 0; c < config.chains; ++c) run_chain(c);
  } else {
    std::vector<std::thread> pool;
    std::mutex failure_mutex;
    std::exception_ptr failure;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (int c = t; c < config.chains; c += threads) run_chain(c);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  for (const auto& rates : chain_rates)
    for (const auto& [label, rate] : rates) out.acceptance_rates[label] += rate;
  for (auto& [label, rate] : out.acceptance_rates) rate /= config.chains;
  return out;
}

MetropolisResult metropolis_step(const std::function<double(double)>& log_target,
                                 double current, double scale, RandomStream& rng) {
  if (!(scale > 0.0)) throw ConfigError("metropolis_step: scale must be positive");
  const double proposal = current + sample_normal(0.0, scale * scale, rng);
  const double lp_new = log_target(proposal);
  if (lp_new == -std::numeric_limits<double>::infinity())
    return {current, false};
  const double lp_old = log_target(current);
  const double log_ratio = lp_new - lp_old;
  if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio)
    return {proposal, true};
  return {current, false};
}

MetropolisResult metropolis_step_log_scale(
    const std::function<double(double)>& log_target, double current, double scale,
    RandomStream& rng) {
  if (!(current > 0.0))
    throw ConfigError("metropolis_step_log_scale: state must be positive");
  if (!(scale > 0.0)) throw ConfigError("metropolis_step_log_scale: scale must be positive");
  const double proposal = current * std::exp(sample_normal(0.0, scale * scale, rng));
  const double lp_new = log_target(proposal);
  if (lp_new == -std::numeric_limits<double>::infinity())
    return {current, false};
  // Jacobian of x -> log x adds one factor of the value on each side.
  const double log_ratio =
      lp_new + std::log(proposal) - log_target(current) - std::log(current);
  if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio)
    return {proposal, true};
  return {current, false};
}

AdaptiveScale::AdaptiveScale(double initial, double target_rate)
    : scale_(initial), target_(target_rate) {
  if (!(initial > 0.0)) throw ConfigError("AdaptiveScale: initial scale must be positive");
  if (!(target_rate > 0.0 && target_rate < 1.0))
    throw ConfigError("AdaptiveScale: target rate must lie in (0, 1)");
}

void AdaptiveScale::observe(bool accepted, bool adapting) {
  if (!adapting) return;
  batch_n_ += 1;
  batch_accepts_ += accepted ? 1 : 0;
  if (batch_n_ < kBatch) return;
  const double rate = static_cast<double>(batch_accepts_) / batch_n_;
  batches_done_ += 1;
  // Diminishing Robbins-Monro step keeps the scale from oscillating while
  // still moving quickly out of a bad initial guess.
  const double step = (rate - target_) / std::sqrt(static_cast<double>(batches_done_));
  scale_ = std::clamp(scale_ * std::exp(step), 1e-8, 1e8);
  batch_n_ = 0;
  batch_accepts_ = 0;
}

std::size_t grid_sample_index(std::span<const double> log_weights, RandomStream& rng) {
  if (log_weights.empty()) throw ConfigError("grid_sample: empty grid");
  const double lse = log_sum_exp(log_weights);
  if (!std::isfinite(lse))
    throw SamplingError("grid_sample: weights have no finite mass");
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    acc += std::exp(log_weights[i] - lse);
    if (u <= acc) return i;
  }
  return log_weights.size() - 1;  // guard against accumulated rounding
}

double grid_sample(const std::function<double(double)>& log_target,
                   std::span<const double> grid, RandomStream& rng) {
  std::vector<double> lw(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) lw[i] = log_target(grid[i]);
  return grid[grid_sample_index(lw, rng)];
}

namespace {

struct SeqMoments {
  double mean = 0.0;
  double var = 0.0;  // sample variance, divisor n - 1
};

SeqMoments moments(std::span<const double> x) {
  SeqMoments m;
  for (double v : x) m.mean += v;
  m.mean /= static_cast<double>(x.size());
  for (double v : x) m.var += (v - m.mean) * (v - m.mean);
  m.var = x.size() > 1 ? m.var / static_cast<double>(x.size() - 1) : 0.0;
  return m;
}

// Split R-hat over sequences of equal length n (chains already halved).
double split_rhat(const std::vector<std::vector<double>>& seqs) {
  const std::size_t m = seqs.size();
  const double n = static_cast<double>(seqs.front().size());
  std::vector<double> means;
  double w = 0.0;
  for (const auto& s : seqs) {
    const auto mo = moments(s);
    means.push_back(mo.mean);
    w += mo.var;
  }
  w /= static_cast<double>(m);
  const auto mm = moments(means);
  const double b = n * mm.var;
  if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double vhat = (n - 1.0) / n * w + b / n;
  return std::sqrt(vhat / w);
}

// Effective sample size via chain-averaged autocorrelations with Geyer's
// initial monotone positive-pair truncation.
double effective_sample_size(const std::vector<std::vector<double>>& seqs) {
  const std::size_t m = seqs.size();
  const std::size_t n = seqs.front().size();
  std::vector<SeqMoments> mo(m);
  double w = 0.0;
  std::vector<double> means;
  for (std::size_t c = 0; c < m; ++c) {
    mo[c] = moments(seqs[c]);
    w += mo[c].var;
    means.push_back(mo[c].mean);
  }
  w /= static_cast<double>(m);
  const auto mm = moments(means);
  const double b = m > 1 ? static_cast<double>(n) * mm.var : 0.0;
  const double vhat = m > 1
                          ? (static_cast<double>(n) - 1.0) / static_cast<double>(n) * w +
                                b / static_cast<double>(n)
                          : w;
  if (!(vhat > 0.0)) return static_cast<double>(m * n);

  auto autocov = [&](std::size_t c, std::size_t t) {
    double acc = 0.0;
    for (std::size_t i = 0; i + t < n; ++i)
      acc += (seqs[c][i] - mo[c].mean) * (seqs[c][i + t] - mo[c].mean);
    return acc / static_cast<double>(n);
  };

  double sum_rho = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  const std::size_t max_lag = std::min(n - 1, static_cast<std::size_t>(2000));
  for (std::size_t t = 1; t + 1 < max_lag; t += 2) {
    double acov_t = 0.0, acov_t1 = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      acov_t += autocov(c, t);
      acov_t1 += autocov(c, t + 1);
    }
    acov_t /= static_cast<double>(m);
    acov_t1 /= static_cast<double>(m);
    const double rho_t = 1.0 - (w - acov_t) / vhat;
    const double rho_t1 = 1.0 - (w - acov_t1) / vhat;
    double pair = rho_t + rho_t1;
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);  // enforce monotone decrease
    prev_pair = pair;
    sum_rho += pair;
  }
  const double total = static_cast<double>(m * n);
  const double ess = total / (1.0 + 2.0 * sum_rho);
  return std::min(ess, total);
}

}  // namespace

Diagnostics compute_diagnostics(const PosteriorDraws& draws) {
  Diagnostics out;
  out.acceptance_rates = draws.acceptance_rates;
  const long half = draws.retained / 2;
  out.rhat_defined = half >= 2;
  out.min_ess = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < draws.n_params(); ++p) {
    ParamDiagnostics pd;
    pd.name = draws.params[p].name;

    std::vector<std::vector<double>> halves;
    std::vector<std::vector<double>> whole;
    for (std::size_t c = 0; c < draws.chains.size(); ++c) {
      auto col = draws.chain_column(static_cast<int>(c), static_cast<int>(p));
      whole.push_back(col);
      if (out.rhat_defined) {
        halves.emplace_back(col.begin(), col.begin() + half);
        halves.emplace_back(col.begin() + half, col.begin() + 2 * half);
      }
    }
    pd.rhat = out.rhat_defined ? split_rhat(halves) : 1.0;
    pd.ess = effective_sample_size(whole);
    out.max_rhat = std::max(out.max_rhat, pd.rhat);
    out.min_ess = std::min(out.min_ess, pd.ess);
    out.params.push_back(std::move(pd));
  }
  return out;
}

void enforce_convergence(const Diagnostics& diag, double max_rhat, bool force) {
  if (force) return;
  if (diag.max_rhat > max_rhat) {
    std::string worst;
    for (const auto& p : diag.params)
      if (p.rhat == diag.max_rhat) worst = p.name;
    throw ConvergenceError(
        "chains have not converged: split R-hat " + std::to_string(diag.max_rhat) +
        " for parameter '" + worst + "' exceeds " + std::to_string(max_rhat) +
        "; rerun longer or pass force to emit anyway");
  }
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ConfigError("quantile: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("quantile: p outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = p * (static_cast<double>(values.size()) - 1.0);
  const auto i = static_cast<std::size_t>(h);
  if (i + 1 >= values.size()) return values.back();
  const double frac = h - static_cast<double>(i);
  return values[i] + frac * (values[i + 1] - values[i]);
}

std::vector<ParamSummary> summarize_draws(const PosteriorDraws& draws, double level) {
  if (!(level > 0.0 && level < 1.0))
    throw ConfigError("summarize_draws: level outside (0, 1)");
  std::vector<ParamSummary> out;
  const double tail = 0.5 * (1.0 - level);
  for (std::size_t p = 0; p < draws.n_params(); ++p) {
    ParamSummary s;
    s.name = draws.params[p].name;
    auto col = draws.column(static_cast<int>(p));
    double acc = 0.0;
    for (double v : col) acc += v;
    s.mean = acc / static_cast<double>(col.size());
    s.lo = quantile(col, tail);
    s.hi = quantile(std::move(col), 1.0 - tail);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace hierbayes
