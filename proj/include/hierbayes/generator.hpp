#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hierbayes/data.hpp"

namespace hierbayes {

// Covariate values for generated regression rows: either an explicit grid
// cycled within each group, or draws from the schooling-years values of the
// education categories.
struct CovariateDesign {
  enum class Kind { none, grid, years };
  Kind kind = Kind::none;
  std::vector<double> grid;
};

// Forward-simulation recipe.  `parameters` pins symbols by name; a group
// symbol may be pinned per group ("theta[g1]"), pinned for every group
// ("theta"), or left out to be drawn from its prior, in which case the
// hyperparameters it needs must be present.  Groups are labeled g0..g{J-1}
// and second-cluster levels s0..s{K-1}.
struct GeneratorSpec {
  std::string model_tag;
  std::uint64_t seed = 0;
  std::vector<long> group_sizes;
  // two-cluster only: cell (j, k) gets second_sizes[k] rows
  std::vector<long> second_sizes;
  std::map<std::string, double> parameters;
  CovariateDesign covariate;
};

struct GeneratedData {
  ObservationTable table;
  std::string model_tag;
  std::uint64_t seed = 0;
  // every value the rows were actually drawn from, pinned and realized alike
  std::vector<std::pair<std::string, double>> truth;
};

// JSON round trip for CLI specs; unknown keys are rejected.
GeneratorSpec parse_generator_spec(const std::string& json_text);
std::string truth_to_json(const GeneratedData& data);

GeneratedData generate(const GeneratorSpec& spec);

}  // namespace hierbayes
