#pragma once

#include "hierbayes/data.hpp"
#include "hierbayes/model.hpp"

namespace hierbayes {

// Independent per-group location/variance models. Each group runs on its own
// stream block, so edits to one group's data never perturb another group's
// draws. Requires >= 2 observations and a non-constant response per group.
ModelFit fit_no_pooling(const ObservationTable& table, const ChainConfig& config);

// One shared location and variance for all rows. The location update uses the
// precision-weighted grand mean recomputed from the current variance each
// sweep. Requires >= 2 rows, not all equal.
ModelFit fit_complete_pooling(const ObservationTable& table, const ChainConfig& config);

// Verification rig: complete pooling with the variance pinned, so location
// draws are iid from the exact closed-form conditional.
ModelFit fit_complete_pooling_frozen_sigma(const ObservationTable& table, double sigma2,
                                           const ChainConfig& config);

}  // namespace hierbayes
