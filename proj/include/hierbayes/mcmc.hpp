#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hierbayes/random.hpp"

namespace hierbayes {

enum class Domain { real, positive, correlation };

struct ParamSpec {
  std::string name;
  Domain domain = Domain::real;
};

struct ChainConfig {
  int chains = 4;
  long iterations = 5000;
  long burn_in = 2500;
  long thin = 1;
  std::uint64_t seed = 0;
  // Chain c draws from stream_offset + c; orchestration layers hand disjoint
  // offset ranges to nested fits so sub-fits never share a stream.
  std::uint64_t stream_offset = 0;

  long retained_per_chain() const { return (iterations - burn_in) / thin; }
  // Throws ConfigError unless chains >= 1, 0 <= burn_in < iterations,
  // thin >= 1 and at least 100 retained draws per chain.
  void validate() const;
};

struct SweepInfo {
  long sweep = 0;
  bool adapting = false;  // true during burn-in; adaptation must freeze after
};

// Accept/reject bookkeeping for a Metropolis-type kernel.  Rates are reported
// from the post-adaptation phase, where the proposal is frozen.
class AcceptanceTracker {
 public:
  void record(bool accepted, bool adapting) {
    auto& c = adapting ? adapt_ : frozen_;
    c.proposals += 1;
    c.accepted += accepted ? 1 : 0;
  }
  double frozen_rate() const {
    const auto& c = frozen_.proposals > 0 ? frozen_ : adapt_;
    return c.proposals > 0 ? static_cast<double>(c.accepted) / c.proposals : 0.0;
  }

 private:
  struct Counts {
    long proposals = 0;
    long accepted = 0;
  };
  Counts adapt_, frozen_;
};

// One full-conditional update.  `writes` lists the parameter indices the step
// samples; the engine checks that the kernel set covers every parameter
// exactly once per sweep and validates the written values after each call.
// Closures receive the chain-local state and stream only, so a kernel set
// built per chain shares nothing mutable across chains.
struct GibbsKernel {
  std::string label;
  std::vector<int> writes;
  std::function<void(std::vector<double>&, RandomStream&, const SweepInfo&)> step;
  std::shared_ptr<AcceptanceTracker> acceptance;  // null for conjugate updates
};

struct GibbsProblem {
  std::string model_tag;
  std::vector<ParamSpec> params;
  std::vector<double> init;
  // Fresh kernels per chain keep adaptation state chain-local.
  std::function<std::vector<GibbsKernel>(int chain)> make_kernels;
};

struct PosteriorDraws {
  std::string model_tag;
  ChainConfig config;
  std::vector<ParamSpec> params;
  long retained = 0;
  // chains[c] is row-major retained x n_params.
  std::vector<std::vector<double>> chains;
  // Post-adaptation acceptance rate per Metropolis kernel label, averaged
  // over chains.
  std::map<std::string, double> acceptance_rates;

  std::size_t n_params() const { return params.size(); }
  double at(int chain, long draw, int param) const {
    return chains[chain][static_cast<std::size_t>(draw) * params.size() + param];
  }
  int param_index(const std::string& name) const;
  std::vector<double> chain_column(int chain, int param) const;
  std::vector<double> column(int param) const;  // all chains, chain-major
};

// Runs `config.chains` independent chains of the sweep defined by the kernel
// set.  Chains may execute in parallel (HIERBAYES_THREADS, default 1); the
// result is identical either way.
PosteriorDraws run_gibbs(const GibbsProblem& problem, const ChainConfig& config);

// Scalar symmetric random-walk Metropolis step.  Returns the new value (the
// input when rejected) and whether the proposal was accepted.
struct MetropolisResult {
  double value;
  bool accepted;
};

MetropolisResult metropolis_step(const std::function<double(double)>& log_target,
                                 double current, double scale, RandomStream& rng);

// Random walk on log(x) for positive-constrained parameters; the Jacobian
// correction (one factor of x per side) keeps detailed balance with respect
// to exp(log_target) on the original scale.
MetropolisResult metropolis_step_log_scale(
    const std::function<double(double)>& log_target, double current, double scale,
    RandomStream& rng);

// Robbins-Monro proposal-scale adaptation toward a target acceptance rate
// (0.44 for scalar walks).  Updates happen in batches while `adapting` is
// true and the scale is frozen afterwards.
class AdaptiveScale {
 public:
  explicit AdaptiveScale(double initial, double target_rate = 0.44);
  double scale() const { return scale_; }
  void observe(bool accepted, bool adapting);

 private:
  static constexpr int kBatch = 50;
  double scale_;
  double target_;
  int batch_n_ = 0;
  int batch_accepts_ = 0;
  long batches_done_ = 0;
};

// Draws an index from the discrete distribution with the given unnormalized
// log weights (log-sum-exp normalized).
std::size_t grid_sample_index(std::span<const double> log_weights, RandomStream& rng);

// Evaluates log_target on the grid and samples a grid point.
double grid_sample(const std::function<double(double)>& log_target,
                   std::span<const double> grid, RandomStream& rng);

struct ParamDiagnostics {
  std::string name;
  double rhat = 1.0;
  double ess = 0.0;
};

struct Diagnostics {
  std::vector<ParamDiagnostics> params;
  double max_rhat = 1.0;
  double min_ess = 0.0;
  bool rhat_defined = true;  // false when only one short chain was run
  std::map<std::string, double> acceptance_rates;
};

// Split R-hat (each chain halved) and autocorrelation-based effective sample
// size per parameter.
Diagnostics compute_diagnostics(const PosteriorDraws& draws);

// Throws ConvergenceError when max R-hat exceeds the threshold, unless
// force is set.
void enforce_convergence(const Diagnostics& diag, double max_rhat = 1.05,
                         bool force = false);

// Posterior mean and equal-tailed interval per parameter.
struct ParamSummary {
  std::string name;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

std::vector<ParamSummary> summarize_draws(const PosteriorDraws& draws,
                                          double level = 0.95);

// Linear-interpolation quantile of an unsorted sample.
double quantile(std::vector<double> values, double p);

}  // namespace hierbayes
