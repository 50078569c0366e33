#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hierbayes/model.hpp"

namespace hierbayes {

// Widely applicable information criterion on the deviance scale,
// waic = -2 lppd + 2 p_waic, with per-observation contributions kept for the
// standard-error interval.
struct WaicReport {
  std::string model_tag;
  std::string obs_unit;
  std::uint64_t data_digest = 0;
  std::size_t n_obs = 0;
  long draws_used = 0;

  double lppd = 0.0;
  double p_waic = 0.0;
  double waic = 0.0;
  double se_waic = 0.0;
  double lo = 0.0;  // waic - 1.96 se
  double hi = 0.0;

  std::vector<double> lppd_i, p_waic_i;

  // unscaled form (expected log pointwise predictive density)
  double elpd() const { return lppd - p_waic; }
};

// Streams over the retained draws once; needs at least 2 draws and a finite
// log likelihood for every (observation, draw) pair.
WaicReport compute_waic(const ModelFit& fit);

struct ComparisonRow {
  std::string model_tag;
  double lppd = 0.0, p_waic = 0.0, waic = 0.0, se_waic = 0.0;
  double lo = 0.0, hi = 0.0;
  double delta = 0.0;        // WAIC above the best model
  bool overlaps_best = true;  // interval overlaps the best model's interval
};

// Ranks reports by ascending WAIC, model tag breaking ties.  Reports scoring
// different observation sets (digest, count, or per-observation unit) are
// refused unless allow_incomparable is set.
std::vector<ComparisonRow> compare(const std::vector<WaicReport>& reports,
                                   bool allow_incomparable = false);

// Fixed-width text table; the best row is bolded.  watanabe_scale switches
// the criterion columns to the unscaled elpd form.
std::string comparison_table(const std::vector<ComparisonRow>& rows,
                             bool watanabe_scale = false);

}  // namespace hierbayes
