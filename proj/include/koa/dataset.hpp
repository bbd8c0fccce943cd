#ifndef KOA_DATASET_HPP
#define KOA_DATASET_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace koa::dataset {

enum class ColumnKind { numeric, binary, categorical };
enum class ColumnRole { predictor, response, patient_id, knee_side };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  ColumnRole role = ColumnRole::predictor;
  // Ordered category labels; required for binary (2) and categorical (>=2)
  // predictors. The first label is the dummy-coding reference level.
  std::vector<std::string> categories;
};

enum class KneeSide { left, right };

// One predictor column stored column-wise. Numeric columns fill `num`,
// binary/categorical columns fill `code` (index into spec.categories).
struct PredictorColumn {
  ColumnSpec spec;
  std::vector<std::optional<double>> num;
  std::vector<std::optional<int>> code;

  std::size_t n_rows() const {
    return spec.kind == ColumnKind::numeric ? num.size() : code.size();
  }
  bool is_missing(std::size_t row) const {
    return spec.kind == ColumnKind::numeric ? !num[row].has_value()
                                            : !code[row].has_value();
  }
  double missing_fraction() const;
};

// Unit of analysis is one knee: up to two rows per patient.
struct Cohort {
  std::vector<std::string> patient_ids;  // per row
  std::vector<KneeSide> knee_sides;      // per row
  std::vector<int> response;             // per row, grade 0..4
  std::vector<PredictorColumn> predictors;

  std::size_t n_rows() const { return response.size(); }
  std::vector<std::string> unique_patients() const;
};

struct DropReportEntry {
  std::string column;
  std::string reason;
  double value = 0.0;  // offending fraction
};

struct DropReport {
  std::vector<DropReportEntry> dropped_columns;
  std::size_t rows_dropped_incomplete = 0;
  std::string to_csv() const;
};

struct DesignMatrix {
  std::vector<std::string> feature_names;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<int> patient_index;          // cluster id per row
  std::vector<std::string> cluster_names;  // patient id per cluster
  std::vector<std::size_t> source_rows;    // cohort row per design row
};

struct SplitPlan {
  std::set<std::string> train_patients;
  std::set<std::string> validation_patients;
  std::uint64_t seed = 0;

  bool is_train(const std::string& patient) const {
    return train_patients.count(patient) > 0;
  }
  std::string to_csv() const;
};

struct SummaryTable {
  struct NumericRow {
    std::string column;
    std::size_t n;
    double mean;
    double sd;
  };
  struct CategoryRow {
    std::string column;
    std::string category;
    std::size_t count;
    double percent;
  };
  struct SeverityRow {
    int level;
    std::size_t count;
    double percent;
  };
  std::vector<NumericRow> numeric;
  std::vector<CategoryRow> categorical;
  std::vector<SeverityRow> severity;
  std::string to_csv() const;
};

// ---------------------------------------------------------------------------
// Schema file: one line per column, `name|kind|role[|cat1,cat2,...]`.
// ---------------------------------------------------------------------------
std::vector<ColumnSpec> load_schema(const std::string& path);
std::vector<ColumnSpec> parse_schema(const std::string& text);
std::string schema_to_text(const std::vector<ColumnSpec>& schema);
void validate_schema(const std::vector<ColumnSpec>& schema);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Reads a UTF-8 CSV (missing cells "" or "NA") against the schema. Cells
// that are present but unparseable are errors, never silently missing.
Cohort load_cohort(const std::string& data_path, const std::string& schema_path);
Cohort cohort_from_csv_text(const std::string& csv_text,
                            const std::vector<ColumnSpec>& schema);

// Drops predictors with missing fraction strictly above `max_missing_frac`,
// and binary/categorical predictors whose rarest observed category falls
// below `min_minor_frac` of the non-missing rows. Response/id/side columns
// are never dropped.
Cohort filter_columns(const Cohort& c, DropReport& report,
                      double max_missing_frac = 0.15,
                      double min_minor_frac = 0.05);

// Dummy-codes categoricals (first listed category is the reference; a
// c-category column yields c-1 columns named "col=cat"). Rows with missing
// retained predictors are dropped when `drop_incomplete_rows` is set and
// counted in the report.
DesignMatrix build_design(const Cohort& c, DropReport& report,
                          bool drop_incomplete_rows = true);

// Patient-level split: both knees of a patient land on the same side.
// |train| = round-half-up(train_frac * n_patients). Deterministic per seed.
SplitPlan split_patients(const Cohort& c, double train_frac,
                         std::uint64_t seed);

// Mean/SD per numeric column, frequency/percent per category, and the
// severity-level distribution. `subset` restricts to those patients.
SummaryTable summarize(const Cohort& c,
                       const std::set<std::string>* subset = nullptr);

// Rows of `c` restricted to patients in `patients`.
Cohort subset_by_patients(const Cohort& c,
                          const std::set<std::string>& patients);

std::string cohort_to_csv(const Cohort& c);

const char* kind_name(ColumnKind k);
const char* role_name(ColumnRole r);

}  // namespace koa::dataset

#endif  // KOA_DATASET_HPP
