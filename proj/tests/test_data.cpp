#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "hierbayes/data.hpp"
#include "hierbayes/errors.hpp"

using namespace hierbayes;

namespace {

const char* kBasicCsv =
    "province,region,income\n"
    "p1,north,100\n"
    "p2,north,110\n"
    "p3,south,90\n"
    "p4,south,95\n"
    "p5,south,85\n";

TableSchema basic_schema() {
  TableSchema s;
  s.unit = "province";
  s.group = "region";
  s.response = "income";
  return s;
}

}  // namespace

TEST_CASE("load_table indexes groups by first appearance") {
  auto t = load_table_text(kBasicCsv, basic_schema());
  REQUIRE(t.rows.size() == 5);
  CHECK(t.groups == std::vector<std::string>{"north", "south"});
  CHECK(t.group_index == std::vector<int>{0, 0, 1, 1, 1});
  CHECK_FALSE(t.has_second);
  CHECK_FALSE(t.has_covariate);
  CHECK(t.nonpositive_responses == 0);
}

TEST_CASE("summarize computes per-group moments and pooled stats") {
  auto t = load_table_text(kBasicCsv, basic_schema());
  auto s = summarize(t);
  REQUIRE(s.groups.size() == 2);
  CHECK(s.groups[0].label == "north");
  CHECK(s.groups[0].n == 2);
  CHECK(s.groups[0].mean == doctest::Approx(105.0));
  CHECK(s.groups[0].variance == doctest::Approx(50.0));  // ((5)^2+(5)^2)/1
  CHECK(s.groups[1].n == 3);
  CHECK(s.groups[1].mean == doctest::Approx(90.0));
  CHECK(s.groups[1].variance == doctest::Approx(25.0));
  CHECK(s.n_total == 5);
  CHECK(s.grand_mean == doctest::Approx(96.0));
}

TEST_CASE("summaries are invariant to row permutations") {
  const char* permuted =
      "province,region,income\n"
      "p5,south,85\n"
      "p1,north,100\n"
      "p4,south,95\n"
      "p3,south,90\n"
      "p2,north,110\n";
  auto a = summarize(load_table_text(kBasicCsv, basic_schema()));
  auto b = summarize(load_table_text(permuted, basic_schema()));
  // Group order differs (south appears first), so compare by label.
  for (const auto& ga : a.groups) {
    const auto it = std::find_if(b.groups.begin(), b.groups.end(),
                                 [&](const auto& gb) { return gb.label == ga.label; });
    REQUIRE(it != b.groups.end());
    CHECK(it->n == ga.n);
    CHECK(it->mean == doctest::Approx(ga.mean).epsilon(1e-15));
    CHECK(it->variance == doctest::Approx(ga.variance).epsilon(1e-15));
  }
  CHECK(b.grand_mean == doctest::Approx(a.grand_mean).epsilon(1e-15));
}

TEST_CASE("csv round trip is bit exact") {
  const char* csv =
      "province,region,edu_years,income\n"
      "p1,north,12.5,100.0625\n"
      "p2,north,3,110.33333333333333\n"
      "p3,south,0.1,90.1\n";
  TableSchema s = basic_schema();
  s.covariate = "edu_years";
  auto t = load_table_text(csv, s);
  const std::string text = table_to_csv(t);
  TableSchema round;
  round.unit = "unit";
  round.group = "group";
  round.covariate = "covariate";
  round.response = "response";
  auto t2 = load_table_text(text, round);
  REQUIRE(t2.rows.size() == t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    CHECK(t2.rows[i].response == t.rows[i].response);
    CHECK(t2.rows[i].covariate == t.rows[i].covariate);
  }
  CHECK(table_to_csv(t2) == text);
  CHECK(data_digest(t2) == data_digest(t));
}

TEST_CASE("missing and malformed cells are rejected with row diagnostics") {
  TableSchema s = basic_schema();
  CHECK_THROWS_WITH_AS(
      load_table_text("province,region,income\np1,north,\n", s, "in"),
      "in: row 2, column 'income': missing response", DataError);
  CHECK_THROWS_WITH_AS(
      load_table_text("province,region,income\np1,north,abc\n", s, "in"),
      "in: row 2, column 'income': cannot parse 'abc' as a number", DataError);
  CHECK_THROWS_AS(load_table_text("province,region,income\n", s), DataError);
  CHECK_THROWS_AS(load_table_text("", s), DataError);
  CHECK_THROWS_AS(load_table_text("province,region,income\np1,north\n", s), DataError);
  TableSchema missing_col = basic_schema();
  missing_col.covariate = "edu_years";
  CHECK_THROWS_AS(load_table_text(kBasicCsv, missing_col), SchemaError);
}

TEST_CASE("nonpositive responses are counted and optionally dropped") {
  const char* csv =
      "province,region,income\n"
      "p1,north,100\n"
      "p2,north,0\n"
      "p3,south,-5\n"
      "p4,south,95\n";
  auto t = load_table_text(csv, basic_schema());
  CHECK(t.nonpositive_responses == 2);
  CHECK(t.rows.size() == 4);
  const auto removed = drop_nonpositive(t);
  CHECK(removed == 2);
  CHECK(t.rows.size() == 2);
  CHECK(t.nonpositive_responses == 0);
  CHECK(t.groups == std::vector<std::string>{"north", "south"});
}

TEST_CASE("education categories expand to years and level") {
  const char* csv =
      "hh,region,edu,income\n"
      "h1,north,uneducated,50\n"
      "h2,north,elementary,60\n"
      "h3,south,vocational,70\n"
      "h4,south,post-graduate,80\n";
  TableSchema s;
  s.unit = "hh";
  s.group = "region";
  s.response = "income";
  s.education = "edu";
  auto t = load_table_text(csv, s);
  CHECK(t.has_covariate);
  CHECK(t.has_second);
  CHECK(t.rows[0].covariate == 0.0);
  CHECK(t.rows[0].second == "low");
  CHECK(t.rows[1].covariate == 6.0);
  CHECK(t.rows[1].second == "low");
  CHECK(t.rows[2].covariate == 14.0);
  CHECK(t.rows[2].second == "mid");
  CHECK(t.rows[3].covariate == 19.0);
  CHECK(t.rows[3].second == "high");

  CHECK(education_categories().size() == 9);
  CHECK(education_years("kindergarten") == 0);
  CHECK(education_years("junior-high") == 9);
  CHECK(education_years("senior-high") == 12);
  CHECK(education_years("bachelor") == 16);
  CHECK(education_level("pre-elementary") == "low");
  CHECK(education_level("senior-high") == "mid");
  CHECK(education_level("bachelor") == "high");
  CHECK_THROWS_AS(education_years("college"), DataError);
  CHECK_THROWS_AS(
      load_table_text("hh,region,edu,income\nh1,north,college,50\n", s), DataError);
}

TEST_CASE("cell_rows arranges the two-cluster grid and flags empty cells") {
  const char* csv =
      "hh,region,level,income\n"
      "h1,north,low,50\n"
      "h2,north,high,80\n"
      "h3,south,low,55\n"
      "h4,south,high,85\n"
      "h5,south,low,60\n";
  TableSchema s;
  s.unit = "hh";
  s.group = "region";
  s.second = "level";
  s.response = "income";
  auto t = load_table_text(csv, s);
  auto cells = cell_rows(t);
  REQUIRE(cells.group_labels.size() == 2);
  REQUIRE(cells.second_labels.size() == 2);
  CHECK(cells.cells[1][0] == std::vector<double>{55.0, 60.0});
  CHECK(cells.cells[0][1] == std::vector<double>{80.0});
  CHECK(cells.n_total == 5);

  const char* with_hole =
      "hh,region,level,income\n"
      "h1,north,low,50\n"
      "h2,north,high,80\n"
      "h3,south,low,55\n";
  CHECK_THROWS_WITH_AS(cell_rows(load_table_text(with_hole, s)),
                       "cell_rows: empty cells: 'south|high'", DataError);
}

TEST_CASE("aggregate_by_unit collapses repeated unit rows to means") {
  const char* csv =
      "hh,region,edu_years,income\n"
      "h1,north,10,100\n"
      "h1,north,12,120\n"
      "h2,south,8,90\n";
  TableSchema s;
  s.unit = "hh";
  s.group = "region";
  s.covariate = "edu_years";
  s.response = "income";
  auto t = aggregate_by_unit(load_table_text(csv, s));
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0].unit == "h1");
  CHECK(t.rows[0].response == doctest::Approx(110.0));
  CHECK(t.rows[0].covariate == doctest::Approx(11.0));
  CHECK(t.rows[1].response == doctest::Approx(90.0));
}

TEST_CASE("group_rows preserves original row order inside groups") {
  auto t = load_table_text(kBasicCsv, basic_schema());
  auto g = group_rows(t);
  REQUIRE(g.labels.size() == 2);
  CHECK(g.response[0] == std::vector<double>{100.0, 110.0});
  CHECK(g.response[1] == std::vector<double>{90.0, 95.0, 85.0});
  CHECK(g.n_total == 5);
}

TEST_CASE("quoted fields and utf-8 labels survive the csv reader") {
  const char* csv =
      "province,region,income\n"
      "\"p,1\",\"north, upper\",100\n"
      "p2,\xE0\xB9\x80\xE0\xB8\xAB\xE0\xB8\x99\xE0\xB8\xB7\xE0\xB8\xAD,110\n";
  auto t = load_table_text(csv, basic_schema());
  CHECK(t.rows[0].unit == "p,1");
  CHECK(t.rows[0].group == "north, upper");
  CHECK(t.rows[1].group == "\xE0\xB9\x80\xE0\xB8\xAB\xE0\xB8\x99\xE0\xB8\xB7\xE0\xB8\xAD");
}

TEST_CASE("data digest tracks the modeled observation set") {
  auto a = load_table_text(kBasicCsv, basic_schema());
  auto b = load_table_text(kBasicCsv, basic_schema());
  CHECK(data_digest(a) == data_digest(b));
  auto c = a;
  c.rows[0].response += 1.0;
  CHECK(data_digest(a) != data_digest(c));
}
