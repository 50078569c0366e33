#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hierbayes/mcmc.hpp"

namespace hierbayes {

// Stream-offset strides reserved by orchestration: nested building-block fits
// take disjoint 2^32 blocks; independent per-group sub-chains within one fit
// take 2^16 blocks inside their fit's range.
inline constexpr std::uint64_t kGroupStreamStride = std::uint64_t{1} << 16;
inline constexpr std::uint64_t kFitStreamStride = std::uint64_t{1} << 32;

// Per-observation log likelihood of one retained draw (row layout matches
// draws.params); fills `out` with n_obs entries.
using PointwiseLoglik =
    std::function<void(std::span<const double> row, std::vector<double>& out)>;

// A fitted model: posterior draws plus everything the comparison and report
// layers need to interpret them.
struct ModelFit {
  PosteriorDraws draws;
  // Quantities the model holds fixed (reported alongside summaries), e.g. a
  // moment-matched nu under the fixed strategy.
  std::vector<std::pair<std::string, double>> constants;
  PointwiseLoglik pointwise;
  std::size_t n_obs = 0;
  std::uint64_t data_digest = 0;
  // What one likelihood term covers: "row" for unit-level models, "cell" for
  // the two-cluster model whose term is a (group, level) series.  Fits with
  // different units are never information-criterion comparable.
  std::string obs_unit = "row";
  // Set when a sampling grid had to be widened past its initial window.
  bool grid_widened = false;
};

}  // namespace hierbayes
