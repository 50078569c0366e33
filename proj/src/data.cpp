#include "hierbayes/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "hierbayes/errors.hpp"

namespace hierbayes {

namespace {

struct EducationEntry {
  const char* category;
  int years;
  const char* level;
};

// Years of schooling and coarse level per education category.
constexpr EducationEntry kEducation[] = {
    {"uneducated", 0, "low"},     {"kindergarten", 0, "low"},
    {"pre-elementary", 3, "low"}, {"elementary", 6, "low"},
    {"junior-high", 9, "mid"},    {"senior-high", 12, "mid"},
    {"vocational", 14, "mid"},    {"bachelor", 16, "high"},
    {"post-graduate", 19, "high"},
};

const EducationEntry* find_education(const std::string& category) {
  for (const auto& e : kEducation)
    if (category == e.category) return &e;
  return nullptr;
}

// Minimal CSV reader: comma separated, double quotes protect commas and
// doubled quotes escape a literal quote.  Newlines inside quotes are not
// supported; the inputs here are plain machine-written tables.
std::vector<std::string> split_csv_line(const std::string& line,
                                        std::size_t line_no,
                                        const std::string& origin) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted)
    throw DataError(origin + ": unterminated quote on line " + std::to_string(line_no));
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& cell, std::size_t line_no,
                    const std::string& column, const std::string& origin) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end != begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || begin == end)
    throw DataError(origin + ": row " + std::to_string(line_no) + ", column '" +
                    column + "': cannot parse '" + cell + "' as a number");
  if (!std::isfinite(value))
    throw DataError(origin + ": row " + std::to_string(line_no) + ", column '" +
                    column + "': non-finite value");
  return value;
}

int find_column(const std::vector<std::string>& header, const std::string& name,
                const std::string& origin) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw SchemaError(origin + ": declared column '" + name + "' not found in header");
}

void index_labels(ObservationTable& t) {
  std::unordered_map<std::string, int> group_ids, second_ids;
  t.group_index.resize(t.rows.size());
  t.second_index.assign(t.rows.size(), -1);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    auto [git, ginserted] = group_ids.try_emplace(row.group, static_cast<int>(t.groups.size()));
    if (ginserted) t.groups.push_back(row.group);
    t.group_index[r] = git->second;
    if (t.has_second) {
      auto [sit, sinserted] =
          second_ids.try_emplace(row.second, static_cast<int>(t.seconds.size()));
      if (sinserted) t.seconds.push_back(row.second);
      t.second_index[r] = sit->second;
    }
  }
}

void count_nonpositive(ObservationTable& t) {
  t.nonpositive_responses = 0;
  for (const auto& row : t.rows)
    if (row.response <= 0.0) ++t.nonpositive_responses;
}

}  // namespace

const std::vector<std::string>& education_categories() {
  static const std::vector<std::string> cats = [] {
    std::vector<std::string> v;
    for (const auto& e : kEducation) v.emplace_back(e.category);
    return v;
  }();
  return cats;
}

int education_years(const std::string& category) {
  const auto* e = find_education(category);
  if (!e) throw DataError("unknown education category '" + category + "'");
  return e->years;
}

std::string education_level(const std::string& category) {
  const auto* e = find_education(category);
  if (!e) throw DataError("unknown education category '" + category + "'");
  return e->level;
}

ObservationTable load_table_text(const std::string& csv, const TableSchema& schema,
                                 const std::string& origin) {
  if (schema.unit.empty() || schema.group.empty() || schema.response.empty())
    throw SchemaError(origin + ": schema must name unit, group and response columns");
  if (schema.education && (schema.covariate || schema.second))
    throw SchemaError(origin +
                      ": an education column replaces explicit covariate/second columns");

  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw DataError(origin + ": empty input, no header row");
  const auto header = split_csv_line(line, 1, origin);

  const int unit_col = find_column(header, schema.unit, origin);
  const int group_col = find_column(header, schema.group, origin);
  const int response_col = find_column(header, schema.response, origin);
  const int second_col =
      schema.second ? find_column(header, *schema.second, origin) : -1;
  const int covariate_col =
      schema.covariate ? find_column(header, *schema.covariate, origin) : -1;
  const int education_col =
      schema.education ? find_column(header, *schema.education, origin) : -1;

  ObservationTable t;
  t.has_second = second_col >= 0 || education_col >= 0;
  t.has_covariate = covariate_col >= 0 || education_col >= 0;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line, line_no, origin);
    if (fields.size() != header.size())
      throw DataError(origin + ": row " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields, header has " +
                      std::to_string(header.size()));
    Observation row;
    row.unit = fields[unit_col];
    row.group = fields[group_col];
    if (fields[response_col].empty())
      throw DataError(origin + ": row " + std::to_string(line_no) + ", column '" +
                      schema.response + "': missing response");
    row.response = parse_double(fields[response_col], line_no, schema.response, origin);
    if (education_col >= 0) {
      const std::string& cat = fields[education_col];
      const auto* e = find_education(cat);
      if (!e)
        throw DataError(origin + ": row " + std::to_string(line_no) + ", column '" +
                        *schema.education + "': unknown education category '" + cat + "'");
      row.covariate = e->years;
      row.has_covariate = true;
      row.second = e->level;
    } else {
      if (covariate_col >= 0) {
        row.covariate =
            parse_double(fields[covariate_col], line_no, *schema.covariate, origin);
        row.has_covariate = true;
      }
      if (second_col >= 0) row.second = fields[second_col];
    }
    t.rows.push_back(std::move(row));
  }
  if (t.rows.empty()) throw DataError(origin + ": no data rows");
  index_labels(t);
  count_nonpositive(t);
  return t;
}

ObservationTable load_table(const std::string& path, const TableSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_table_text(buf.str(), schema, path);
}

std::string format_double(double x) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  return std::string(buf, ptr);
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string table_to_csv(const ObservationTable& table) {
  std::string out = "unit,group";
  if (table.has_second) out += ",second";
  if (table.has_covariate) out += ",covariate";
  out += ",response\n";
  for (const auto& row : table.rows) {
    out += csv_escape(row.unit);
    out += ',';
    out += csv_escape(row.group);
    if (table.has_second) {
      out += ',';
      out += csv_escape(row.second);
    }
    if (table.has_covariate) {
      out += ',';
      out += format_double(row.covariate);
    }
    out += ',';
    out += format_double(row.response);
    out += '\n';
  }
  return out;
}

void save_table(const ObservationTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << table_to_csv(table);
}

std::size_t drop_nonpositive(ObservationTable& table) {
  const std::size_t before = table.rows.size();
  std::vector<Observation> kept;
  kept.reserve(before);
  for (auto& row : table.rows)
    if (row.response > 0.0) kept.push_back(std::move(row));
  if (kept.empty()) throw DataError("dropping nonpositive responses removed every row");
  table.rows = std::move(kept);
  table.groups.clear();
  table.seconds.clear();
  index_labels(table);
  count_nonpositive(table);
  return before - table.rows.size();
}

ObservationTable aggregate_by_unit(const ObservationTable& table) {
  struct Acc {
    std::size_t order;
    std::size_t n = 0;
    double response = 0.0;
    double covariate = 0.0;
  };
  std::map<std::tuple<std::string, std::string, std::string>, Acc> acc;
  std::size_t order = 0;
  for (const auto& row : table.rows) {
    auto key = std::make_tuple(row.unit, row.group, row.second);
    auto [it, inserted] = acc.try_emplace(key, Acc{order, 0, 0.0, 0.0});
    if (inserted) ++order;
    it->second.n += 1;
    it->second.response += row.response;
    it->second.covariate += row.covariate;
  }
  std::vector<std::pair<std::tuple<std::string, std::string, std::string>, Acc>> items(
      acc.begin(), acc.end());
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.second.order < b.second.order; });
  ObservationTable out;
  out.has_second = table.has_second;
  out.has_covariate = table.has_covariate;
  for (const auto& [key, a] : items) {
    Observation row;
    row.unit = std::get<0>(key);
    row.group = std::get<1>(key);
    row.second = std::get<2>(key);
    row.response = a.response / static_cast<double>(a.n);
    row.covariate = a.covariate / static_cast<double>(a.n);
    row.has_covariate = table.has_covariate;
    out.rows.push_back(std::move(row));
  }
  index_labels(out);
  count_nonpositive(out);
  return out;
}

namespace {

void check_not_empty(const ObservationTable& table) {
  if (table.rows.empty()) throw DataError("empty table");
}

}  // namespace

GroupSummaries summarize(const ObservationTable& table, GroupBy by) {
  check_not_empty(table);
  if (by != GroupBy::group && !table.has_second)
    throw SchemaError("summarize: table has no second-cluster column");

  std::vector<std::string> labels;
  std::vector<int> index(table.rows.size());
  if (by == GroupBy::group) {
    labels = table.groups;
    index = table.group_index;
  } else if (by == GroupBy::second) {
    labels = table.seconds;
    index = table.second_index;
  } else {
    // Cells ordered group-major in first-appearance order.
    for (const auto& g : table.groups)
      for (const auto& s : table.seconds) labels.push_back(g + "|" + s);
    const int ns = static_cast<int>(table.seconds.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r)
      index[r] = table.group_index[r] * ns + table.second_index[r];
  }

  GroupSummaries out;
  out.has_covariate = table.has_covariate;
  out.groups.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out.groups[i].label = labels[i];

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    auto& g = out.groups[index[r]];
    g.n += 1;
    g.mean += table.rows[r].response;
    g.covariate_mean += table.rows[r].covariate;
    out.n_total += 1;
    out.grand_mean += table.rows[r].response;
    out.covariate_grand_mean += table.rows[r].covariate;
  }
  out.grand_mean /= static_cast<double>(out.n_total);
  out.covariate_grand_mean /= static_cast<double>(out.n_total);

  std::vector<std::string> empty;
  for (auto& g : out.groups) {
    if (g.n == 0) {
      empty.push_back(g.label);
      continue;
    }
    g.mean /= static_cast<double>(g.n);
    g.covariate_mean /= static_cast<double>(g.n);
  }
  if (!empty.empty()) {
    std::string msg = "summarize: empty cells:";
    for (const auto& l : empty) msg += " '" + l + "'";
    throw DataError(msg);
  }
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    auto& g = out.groups[index[r]];
    const double d = table.rows[r].response - g.mean;
    g.variance += d * d;
  }
  for (auto& g : out.groups)
    g.variance = g.n > 1 ? g.variance / static_cast<double>(g.n - 1) : 0.0;
  return out;
}

GroupedData group_rows(const ObservationTable& table, GroupBy by) {
  check_not_empty(table);
  if (by == GroupBy::cell) throw SchemaError("group_rows: use cell_rows for cells");
  if (by == GroupBy::second && !table.has_second)
    throw SchemaError("group_rows: table has no second-cluster column");
  GroupedData out;
  out.labels = by == GroupBy::group ? table.groups : table.seconds;
  const auto& index = by == GroupBy::group ? table.group_index : table.second_index;
  out.response.resize(out.labels.size());
  out.covariate.resize(out.labels.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out.response[index[r]].push_back(table.rows[r].response);
    if (table.has_covariate) out.covariate[index[r]].push_back(table.rows[r].covariate);
  }
  out.n_total = table.rows.size();
  return out;
}

CellData cell_rows(const ObservationTable& table) {
  check_not_empty(table);
  if (!table.has_second) throw SchemaError("cell_rows: table has no second-cluster column");
  CellData out;
  out.group_labels = table.groups;
  out.second_labels = table.seconds;
  out.cells.assign(table.groups.size(),
                   std::vector<std::vector<double>>(table.seconds.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    out.cells[table.group_index[r]][table.second_index[r]].push_back(
        table.rows[r].response);
  std::string missing;
  for (std::size_t j = 0; j < out.cells.size(); ++j)
    for (std::size_t k = 0; k < out.cells[j].size(); ++k)
      if (out.cells[j][k].empty())
        missing += " '" + table.groups[j] + "|" + table.seconds[k] + "'";
  if (!missing.empty()) throw DataError("cell_rows: empty cells:" + missing);
  out.n_total = table.rows.size();
  return out;
}

std::uint64_t data_digest(const ObservationTable& table) {
  // FNV-1a over the response bytes in row order, seeded with the row count.
  std::uint64_t h = 14695981039346656037ull;
  const auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  const std::uint64_t count = table.rows.size();
  mix(&count, sizeof count);
  for (const auto& row : table.rows) mix(&row.response, sizeof row.response);
  return h;
}

}  // namespace hierbayes
