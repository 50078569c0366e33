#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hierbayes {

// Column roles for loading a CSV.  `unit`, `group` and `response` are
// required; `second` names a second, non-nested cluster column; `covariate`
// names a numeric regressor; `education` names a categorical column that is
// expanded into covariate years and second-cluster level per the fixed
// education mapping (see education_years / education_level).
struct TableSchema {
  std::string unit;
  std::string group;
  std::string response;
  std::optional<std::string> second;
  std::optional<std::string> covariate;
  std::optional<std::string> education;
};

struct Observation {
  std::string unit;
  std::string group;
  std::string second;    // empty when the schema has no second cluster
  double covariate = 0.0;
  bool has_covariate = false;
  double response = 0.0;
};

// Validated, immutable-by-convention data table.  Group and second-cluster
// labels are indexed in order of first appearance so that identical inputs
// produce identical orderings everywhere downstream.
struct ObservationTable {
  std::vector<Observation> rows;
  std::vector<std::string> groups;        // distinct group labels
  std::vector<std::string> seconds;       // distinct second-cluster labels
  std::vector<int> group_index;           // per row
  std::vector<int> second_index;          // per row, -1 without second cluster
  std::size_t nonpositive_responses = 0;  // counted, kept unless dropped
  bool has_second = false;
  bool has_covariate = false;
};

// Recognized education categories, their schooling years, and their level
// grouping (low / mid / high).
const std::vector<std::string>& education_categories();
int education_years(const std::string& category);
std::string education_level(const std::string& category);

// Load a CSV file (UTF-8, first row is the header).  Throws SchemaError when
// declared columns are missing and DataError on malformed cells, naming the
// offending row and column.
ObservationTable load_table(const std::string& path, const TableSchema& schema);

// Same, parsing CSV text directly (used by tests and the bindings).
ObservationTable load_table_text(const std::string& csv, const TableSchema& schema,
                                 const std::string& origin = "<memory>");

// Canonical CSV serialization; numeric cells use shortest round-trip
// formatting so that a save/load cycle is bit-exact.
std::string table_to_csv(const ObservationTable& table);
void save_table(const ObservationTable& table, const std::string& path);

// Drop rows with response <= 0; returns the number removed.
std::size_t drop_nonpositive(ObservationTable& table);

// Collapse rows that share (unit, group, second) into one row carrying the
// mean response (and mean covariate when present).
ObservationTable aggregate_by_unit(const ObservationTable& table);

// Which labels to group by when summarizing.
enum class GroupBy { group, second, cell };

struct GroupSummary {
  std::string label;
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;    // sample variance, divisor n - 1; 0 when n < 2
  double covariate_mean = 0.0;
};

struct GroupSummaries {
  std::vector<GroupSummary> groups;
  std::size_t n_total = 0;
  double grand_mean = 0.0;            // plain mean over all rows
  double covariate_grand_mean = 0.0;  // plain mean over all rows
  bool has_covariate = false;
};

// Per-label counts, means, variances plus pooled statistics.  Throws on an
// empty table; a label with zero rows cannot occur by construction.
GroupSummaries summarize(const ObservationTable& table, GroupBy by = GroupBy::group);

// Rows regrouped for the samplers: responses (and covariates) per group, in
// original row order.
struct GroupedData {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> response;
  std::vector<std::vector<double>> covariate;  // empty vectors without one
  std::size_t n_total = 0;
};

GroupedData group_rows(const ObservationTable& table, GroupBy by = GroupBy::group);

// Rows arranged into the (group x second) grid used by the two-cluster model.
// Every cell must be non-empty; offenders are listed in the error.
struct CellData {
  std::vector<std::string> group_labels;
  std::vector<std::string> second_labels;
  // cell(j, k) holds the responses for group j at second-cluster level k
  std::vector<std::vector<std::vector<double>>> cells;
  std::size_t n_total = 0;
};

CellData cell_rows(const ObservationTable& table);

// Stable 64-bit digest of the modeled observation set (responses in row
// order).  Two fits are WAIC-comparable only when their digests and row
// counts agree.
std::uint64_t data_digest(const ObservationTable& table);

std::string format_double(double x);  // shortest round-trip decimal form

}  // namespace hierbayes
