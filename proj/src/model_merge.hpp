#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hierbayes/mcmc.hpp"

namespace hierbayes::internal {

struct ColumnRef {
  int part;
  int param;
  std::string name;
  Domain domain;
};

// Gathers columns of several same-shape runs (one per group, say) into one
// draw matrix laid out per `layout`.
inline PosteriorDraws gather_columns(const std::vector<PosteriorDraws>& parts,
                                     const std::vector<ColumnRef>& layout,
                                     std::string model_tag, const ChainConfig& config) {
  PosteriorDraws out;
  out.model_tag = std::move(model_tag);
  out.config = config;
  out.retained = parts.front().retained;
  out.params.reserve(layout.size());
  for (const auto& c : layout) out.params.push_back({c.name, c.domain});

  const std::size_t width = layout.size();
  out.chains.assign(config.chains, {});
  for (int c = 0; c < config.chains; ++c) {
    auto& dst = out.chains[c];
    dst.resize(static_cast<std::size_t>(out.retained) * width);
    for (long r = 0; r < out.retained; ++r)
      for (std::size_t k = 0; k < width; ++k)
        dst[static_cast<std::size_t>(r) * width + k] =
            parts[layout[k].part].at(c, r, layout[k].param);
  }
  for (const auto& p : parts)
    out.acceptance_rates.insert(p.acceptance_rates.begin(), p.acceptance_rates.end());
  return out;
}

}  // namespace hierbayes::internal
