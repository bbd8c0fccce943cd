#include <doctest.h>

#include <cmath>
#include <set>
#include <string>

#include "koa/dataset.hpp"

using namespace koa::dataset;

namespace {

const char* kSchema =
    "patient_id|categorical|patient_id\n"
    "knee_side|categorical|knee_side\n"
    "severity|numeric|response\n"
    "age|numeric|predictor\n"
    "sex|binary|predictor|male,female\n"
    "activity|categorical|predictor|low,medium,high\n";

Cohort tiny_cohort(const std::string& rows) {
  const std::string header = "patient_id,knee_side,severity,age,sex,activity\n";
  return cohort_from_csv_text(header + rows, parse_schema(kSchema));
}

// n single-knee patients with one numeric predictor.
Cohort patients_only(int n) {
  Cohort c;
  PredictorColumn col;
  col.spec = {"x", ColumnKind::numeric, ColumnRole::predictor, {}};
  for (int i = 0; i < n; ++i) {
    c.patient_ids.push_back("p" + std::to_string(i));
    c.knee_sides.push_back(KneeSide::left);
    c.response.push_back(i % 5);
    col.num.push_back(static_cast<double>(i));
  }
  c.predictors.push_back(std::move(col));
  return c;
}

}  // namespace

TEST_CASE("load_cohort accepts a minimal well-formed file") {
  const Cohort c = tiny_cohort(
      "p1,left,0,63,female,low\n"
      "p1,right,1,63,female,medium\n"
      "p2,left,3,71,male,high\n"
      "p2,right,4,71,male,high\n");
  CHECK(c.n_rows() == 4);
  CHECK(c.unique_patients().size() == 2);
  CHECK(c.predictors.size() == 3);
  CHECK(c.response == std::vector<int>{0, 1, 3, 4});
  CHECK(*c.predictors[1].code[0] == 1);  // female
}

TEST_CASE("load_cohort rejects out-of-range responses") {
  CHECK_THROWS_WITH_AS(tiny_cohort("p1,left,5,63,female,low\n"),
                       doctest::Contains("response out of range"), std::runtime_error);
  CHECK_THROWS(tiny_cohort("p1,left,2.5,63,female,low\n"));
  CHECK_THROWS(tiny_cohort("p1,left,-1,63,female,low\n"));
}

TEST_CASE("load_cohort rejects duplicate knees") {
  CHECK_THROWS_WITH_AS(tiny_cohort("p1,left,0,63,female,low\np1,left,1,64,female,low\n"),
                       doctest::Contains("duplicate knee"), std::runtime_error);
}

TEST_CASE("load_cohort rejects schema/CSV mismatches and bad cells") {
  const auto schema = parse_schema(kSchema);
  CHECK_THROWS(cohort_from_csv_text("patient_id,knee_side,severity\np,left,0\n", schema));
  // Present but unparseable cells are errors, not missing values.
  CHECK_THROWS_WITH_AS(tiny_cohort("p1,left,0,sixty,female,low\n"),
                       doctest::Contains("unparseable"), std::runtime_error);
  CHECK_THROWS_WITH_AS(tiny_cohort("p1,left,0,63,other,low\n"),
                       doctest::Contains("unknown category"), std::runtime_error);
  // Missing cells are fine.
  const Cohort c = tiny_cohort("p1,left,0,NA,,low\n");
  CHECK_FALSE(c.predictors[0].num[0].has_value());
  CHECK_FALSE(c.predictors[1].code[0].has_value());
}

TEST_CASE("filter_columns drops by missingness and sparse categories") {
  // 100 rows; age 31% missing; sex has 4% in the minor category;
  // activity 10% missing and balanced.
  std::string rows;
  for (int i = 0; i < 100; ++i) {
    const std::string pid = "p" + std::to_string(i);
    const std::string age = i < 31 ? "NA" : "60";
    const std::string sex = i < 4 ? "male" : "female";
    const std::string act =
        i < 10 ? "NA" : (i % 3 == 0 ? "low" : (i % 3 == 1 ? "medium" : "high"));
    rows += pid + ",left,1," + age + "," + sex + "," + act + "\n";
  }
  const Cohort c = tiny_cohort(rows);
  DropReport report;
  const Cohort f = filter_columns(c, report);

  REQUIRE(f.predictors.size() == 1);
  CHECK(f.predictors[0].spec.name == "activity");
  REQUIRE(report.dropped_columns.size() == 2);
  CHECK(report.dropped_columns[0].column == "age");
  CHECK(report.dropped_columns[0].reason == "missing_fraction_above_threshold");
  CHECK(report.dropped_columns[0].value == doctest::Approx(0.31));
  CHECK(report.dropped_columns[1].column == "sex");
  CHECK(report.dropped_columns[1].value == doctest::Approx(0.04));

  SUBCASE("filtering is idempotent") {
    DropReport second;
    const Cohort ff = filter_columns(f, second);
    CHECK(second.dropped_columns.empty());
    CHECK(ff.predictors.size() == f.predictors.size());
    CHECK(cohort_to_csv(ff) == cohort_to_csv(f));
  }
}

TEST_CASE("filter_columns boundary: exactly 15% missing is retained") {
  std::string rows;
  for (int i = 0; i < 100; ++i) {
    rows += "p" + std::to_string(i) + ",left,1," + (i < 15 ? "NA" : "60") +
            ",female,low\n";
  }
  // sex/activity are constant here, so the sparse rule removes them (their
  // rarest category has observed frequency 0); age survives at exactly 0.15.
  const Cohort c = tiny_cohort(rows);
  DropReport report;
  const Cohort f = filter_columns(c, report);
  REQUIRE(f.predictors.size() == 1);
  CHECK(f.predictors[0].spec.name == "age");
}

TEST_CASE("filter_columns errors when every predictor is dropped") {
  std::string rows;
  for (int i = 0; i < 10; ++i) {
    rows += "p" + std::to_string(i) + ",left,1,NA,female,low\n";
  }
  DropReport report;
  CHECK_THROWS_WITH_AS(filter_columns(tiny_cohort(rows), report),
                       doctest::Contains("empty design"), std::runtime_error);
}

TEST_CASE("build_design dummy codes with the first category as reference") {
  const Cohort c = tiny_cohort(
      "p1,left,0,60,female,low\n"
      "p1,right,1,60,male,medium\n"
      "p2,left,2,70,male,high\n");
  DropReport report;
  const DesignMatrix d = build_design(c, report);

  REQUIRE(d.feature_names == std::vector<std::string>{"age", "sex=female",
                                                      "activity=medium", "activity=high"});
  CHECK(d.X(0, 1) == 1.0);  // female
  CHECK(d.X(1, 1) == 0.0);
  CHECK(d.X(1, 2) == 1.0);  // medium
  CHECK(d.X(2, 3) == 1.0);  // high
  CHECK(d.y(2) == 2.0);
  CHECK(d.patient_index[0] == d.patient_index[1]);
  CHECK(d.patient_index[0] != d.patient_index[2]);

  // Dummy columns of one source sum to at most 1 per row.
  for (int i = 0; i < 3; ++i) CHECK(d.X(i, 2) + d.X(i, 3) <= 1.0);
}

TEST_CASE("build_design drops and counts incomplete rows") {
  const Cohort c = tiny_cohort(
      "p1,left,0,60,female,low\n"
      "p1,right,1,NA,male,medium\n"
      "p2,left,2,70,male,high\n");
  DropReport report;
  const DesignMatrix d = build_design(c, report);
  CHECK(d.X.rows() == 2);
  CHECK(report.rows_dropped_incomplete == 1);
  CHECK(d.source_rows == std::vector<std::size_t>{0, 2});

  SUBCASE("flag off keeps the row with NaN cells") {
    DropReport r2;
    const DesignMatrix keep = build_design(c, r2, false);
    CHECK(keep.X.rows() == 3);
    CHECK(std::isnan(keep.X(1, 0)));
  }

  SUBCASE("zero complete rows is an error") {
    const Cohort bad = tiny_cohort("p1,left,0,NA,female,low\n");
    DropReport r3;
    CHECK_THROWS_WITH_AS(build_design(bad, r3), doctest::Contains("zero complete rows"),
                         std::runtime_error);
  }
}

TEST_CASE("split_patients rounds half-up and is deterministic") {
  const Cohort big = patients_only(2951);
  const SplitPlan plan = split_patients(big, 0.7, 99);
  CHECK(plan.train_patients.size() == 2066);  // round(2065.7)
  CHECK(plan.validation_patients.size() == 885);

  const SplitPlan again = split_patients(big, 0.7, 99);
  CHECK(plan.train_patients == again.train_patients);
  CHECK(plan.to_csv() == again.to_csv());

  const SplitPlan other = split_patients(big, 0.7, 100);
  CHECK(plan.train_patients != other.train_patients);

  CHECK_THROWS_AS(split_patients(big, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_patients(big, 0.0, 1), std::invalid_argument);
}

TEST_CASE("split_patients keeps both knees together, exhaustively") {
  std::string rows;
  for (int i = 0; i < 10; ++i) {
    const std::string pid = "p" + std::to_string(i);
    rows += pid + ",left," + std::to_string(i % 5) + ",60,female,low\n";
    rows += pid + ",right," + std::to_string(i % 5) + ",60,female,low\n";
  }
  const Cohort c = tiny_cohort(rows);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SplitPlan plan = split_patients(c, 0.5, seed);
    CHECK(plan.train_patients.size() == 5);
    // Partition: disjoint and jointly covering.
    std::set<std::string> all;
    for (const auto& p : plan.train_patients) all.insert(p);
    for (const auto& p : plan.validation_patients) {
      CHECK(plan.train_patients.count(p) == 0);
      all.insert(p);
    }
    CHECK(all.size() == 10);
    // Both knees of each patient fall on the same side.
    for (std::size_t r = 0; r < c.n_rows(); r += 2) {
      CHECK(plan.is_train(c.patient_ids[r]) == plan.is_train(c.patient_ids[r + 1]));
    }
  }
}

TEST_CASE("summarize computes simple statistics") {
  const Cohort c = tiny_cohort(
      "p1,left,0,1,female,low\n"
      "p1,right,0,2,female,medium\n"
      "p2,left,2,3,male,high\n");
  const SummaryTable t = summarize(c);

  REQUIRE(t.numeric.size() == 1);
  CHECK(t.numeric[0].mean == doctest::Approx(2.0));
  CHECK(t.numeric[0].sd == doctest::Approx(1.0));

  // Severity layout: one row per level 0..4 with counts and percents.
  REQUIRE(t.severity.size() == 5);
  CHECK(t.severity[0].count == 2);
  CHECK(t.severity[0].percent == doctest::Approx(100.0 * 2 / 3));
  CHECK(t.severity[2].count == 1);
  CHECK(t.severity[4].count == 0);

  SUBCASE("constant column has zero SD") {
    const Cohort k = tiny_cohort("p1,left,0,5,female,low\np2,left,0,5,male,high\n");
    CHECK(summarize(k).numeric[0].sd == 0.0);
  }

  SUBCASE("subset restricts to the given patients") {
    std::set<std::string> subset{"p2"};
    const SummaryTable s = summarize(c, &subset);
    CHECK(s.numeric[0].n == 1);
    CHECK(s.numeric[0].mean == doctest::Approx(3.0));
    CHECK(s.severity[2].count == 1);
    CHECK(s.severity[0].count == 0);
  }
}

TEST_CASE("schema validation catches structural problems") {
  CHECK_THROWS(parse_schema("a|numeric|predictor\n"));  // no response/id/side
  CHECK_THROWS(parse_schema(
      "patient_id|categorical|patient_id\nknee_side|categorical|knee_side\n"
      "severity|numeric|response\nsex|binary|predictor|only_one\n"));
  CHECK_THROWS(parse_schema(
      "patient_id|categorical|patient_id\nknee_side|categorical|knee_side\n"
      "severity|numeric|response\nbad name|numeric|predictor\n"));
  // Round trip.
  const auto schema = parse_schema(kSchema);
  CHECK(parse_schema(schema_to_text(schema)).size() == schema.size());
}
