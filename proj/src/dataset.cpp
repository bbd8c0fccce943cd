#include "koa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "koa/csv.hpp"
#include "koa/rng.hpp"

namespace koa::dataset {

namespace {

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA"; }

double parse_numeric_cell(const std::string& s, const std::string& column) {
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("column '" + column + "': unparseable numeric cell '" + s + "'");
  }
  if (pos != s.size() || !std::isfinite(v)) {
    throw std::runtime_error("column '" + column + "': unparseable numeric cell '" + s + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

const char* kind_name(ColumnKind k) {
  switch (k) {
    case ColumnKind::numeric: return "numeric";
    case ColumnKind::binary: return "binary";
    case ColumnKind::categorical: return "categorical";
  }
  return "?";
}

const char* role_name(ColumnRole r) {
  switch (r) {
    case ColumnRole::predictor: return "predictor";
    case ColumnRole::response: return "response";
    case ColumnRole::patient_id: return "patient_id";
    case ColumnRole::knee_side: return "knee_side";
  }
  return "?";
}

static ColumnKind parse_kind(const std::string& s) {
  if (s == "numeric") return ColumnKind::numeric;
  if (s == "binary") return ColumnKind::binary;
  if (s == "categorical") return ColumnKind::categorical;
  throw std::runtime_error("schema: unknown column kind '" + s + "'");
}

static ColumnRole parse_role(const std::string& s) {
  if (s == "predictor") return ColumnRole::predictor;
  if (s == "response") return ColumnRole::response;
  if (s == "patient_id") return ColumnRole::patient_id;
  if (s == "knee_side") return ColumnRole::knee_side;
  throw std::runtime_error("schema: unknown column role '" + s + "'");
}

std::vector<ColumnSpec> parse_schema(const std::string& text) {
  std::vector<ColumnSpec> schema;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto parts = split(line, '|');
    if (parts.size() < 3 || parts.size() > 4) {
      throw std::runtime_error("schema: malformed line '" + line + "'");
    }
    ColumnSpec spec;
    spec.name = trim(parts[0]);
    spec.kind = parse_kind(trim(parts[1]));
    spec.role = parse_role(trim(parts[2]));
    if (parts.size() == 4) {
      for (auto& cat : split(parts[3], ',')) {
        spec.categories.push_back(trim(cat));
      }
    }
    schema.push_back(std::move(spec));
  }
  validate_schema(schema);
  return schema;
}

std::vector<ColumnSpec> load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("schema: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_schema(buf.str());
}

std::string schema_to_text(const std::vector<ColumnSpec>& schema) {
  std::string out;
  for (const auto& spec : schema) {
    out += spec.name;
    out += '|';
    out += kind_name(spec.kind);
    out += '|';
    out += role_name(spec.role);
    if (!spec.categories.empty()) {
      out += '|';
      for (std::size_t i = 0; i < spec.categories.size(); ++i) {
        if (i) out += ',';
        out += spec.categories[i];
      }
    }
    out += '\n';
  }
  return out;
}

namespace {

// Names and category labels flow into whitespace-delimited model files and
// pipe/comma-delimited schema lines; keep them token-safe.
void validate_token(const std::string& s, const char* what) {
  if (s.empty()) throw std::runtime_error(std::string("schema: empty ") + what);
  if (s.find_first_of(" \t|,") != std::string::npos) {
    throw std::runtime_error(std::string("schema: ") + what + " '" + s +
                             "' may not contain whitespace, '|' or ','");
  }
}

}  // namespace

void validate_schema(const std::vector<ColumnSpec>& schema) {
  int n_response = 0, n_patient = 0, n_side = 0;
  std::set<std::string> names;
  for (const auto& spec : schema) {
    validate_token(spec.name, "column name");
    for (const auto& cat : spec.categories) validate_token(cat, "category label");
    if (!names.insert(spec.name).second) {
      throw std::runtime_error("schema: duplicate column '" + spec.name + "'");
    }
    switch (spec.role) {
      case ColumnRole::response: ++n_response; break;
      case ColumnRole::patient_id: ++n_patient; break;
      case ColumnRole::knee_side: ++n_side; break;
      case ColumnRole::predictor:
        if (spec.kind == ColumnKind::binary && spec.categories.size() != 2) {
          throw std::runtime_error("schema: binary column '" + spec.name +
                                   "' must list exactly 2 categories");
        }
        if (spec.kind == ColumnKind::categorical && spec.categories.size() < 2) {
          throw std::runtime_error("schema: categorical column '" + spec.name +
                                   "' must list at least 2 categories");
        }
        break;
    }
  }
  if (n_response != 1) throw std::runtime_error("schema: exactly one response column required");
  if (n_patient != 1) throw std::runtime_error("schema: exactly one patient_id column required");
  if (n_side != 1) throw std::runtime_error("schema: exactly one knee_side column required");
}

// ---------------------------------------------------------------------------
// Cohort loading
// ---------------------------------------------------------------------------

double PredictorColumn::missing_fraction() const {
  const std::size_t n = n_rows();
  if (n == 0) return 0.0;
  std::size_t missing = 0;
  for (std::size_t i = 0; i < n; ++i) missing += is_missing(i);
  return static_cast<double>(missing) / static_cast<double>(n);
}

std::vector<std::string> Cohort::unique_patients() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& id : patient_ids) {
    if (seen.insert(id).second) out.push_back(id);
  }
  return out;
}

Cohort cohort_from_csv_text(const std::string& csv_text,
                            const std::vector<ColumnSpec>& schema) {
  validate_schema(schema);
  const csv::Table table = csv::parse(csv_text);

  if (table.header.size() != schema.size()) {
    throw std::runtime_error("cohort: CSV has " + std::to_string(table.header.size()) +
                             " columns, schema describes " + std::to_string(schema.size()));
  }
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (table.header[j] != schema[j].name) {
      throw std::runtime_error("cohort: CSV column '" + table.header[j] +
                               "' does not match schema column '" + schema[j].name + "'");
    }
  }

  Cohort c;
  for (const auto& spec : schema) {
    if (spec.role == ColumnRole::predictor) {
      PredictorColumn col;
      col.spec = spec;
      c.predictors.push_back(std::move(col));
    }
  }

  std::set<std::pair<std::string, KneeSide>> seen_knees;
  for (const auto& row : table.rows) {
    std::size_t pred_idx = 0;
    std::string patient;
    std::optional<KneeSide> side;
    std::optional<int> response;
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const ColumnSpec& spec = schema[j];
      const std::string& cell = row[j];
      switch (spec.role) {
        case ColumnRole::patient_id:
          if (is_missing_token(cell)) throw std::runtime_error("cohort: missing patient id");
          patient = cell;
          break;
        case ColumnRole::knee_side:
          if (cell == "left") side = KneeSide::left;
          else if (cell == "right") side = KneeSide::right;
          else throw std::runtime_error("cohort: knee side must be 'left' or 'right', got '" + cell + "'");
          break;
        case ColumnRole::response: {
          if (is_missing_token(cell)) throw std::runtime_error("cohort: missing response value");
          const double v = parse_numeric_cell(cell, spec.name);
          const int grade = static_cast<int>(std::lround(v));
          if (v != grade || grade < 0 || grade > 4) {
            throw std::runtime_error("cohort: response out of range 0..4: '" + cell + "'");
          }
          response = grade;
          break;
        }
        case ColumnRole::predictor: {
          PredictorColumn& col = c.predictors[pred_idx++];
          if (spec.kind == ColumnKind::numeric) {
            if (is_missing_token(cell)) col.num.push_back(std::nullopt);
            else col.num.push_back(parse_numeric_cell(cell, spec.name));
          } else {
            if (is_missing_token(cell)) {
              col.code.push_back(std::nullopt);
            } else {
              auto it = std::find(spec.categories.begin(), spec.categories.end(), cell);
              if (it == spec.categories.end()) {
                throw std::runtime_error("column '" + spec.name + "': unknown category '" + cell + "'");
              }
              col.code.push_back(static_cast<int>(it - spec.categories.begin()));
            }
          }
          break;
        }
      }
    }
    if (!side || !response) throw std::runtime_error("cohort: incomplete row");
    if (!seen_knees.insert({patient, *side}).second) {
      throw std::runtime_error("cohort: duplicate knee for patient '" + patient + "'");
    }
    c.patient_ids.push_back(patient);
    c.knee_sides.push_back(*side);
    c.response.push_back(*response);
  }
  return c;
}

Cohort load_cohort(const std::string& data_path, const std::string& schema_path) {
  const auto schema = load_schema(schema_path);
  std::ifstream in(data_path, std::ios::binary);
  if (!in) throw std::runtime_error("cohort: cannot open " + data_path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return cohort_from_csv_text(buf.str(), schema);
}

// ---------------------------------------------------------------------------
// Column filtering
// ---------------------------------------------------------------------------

Cohort filter_columns(const Cohort& c, DropReport& report,
                      double max_missing_frac, double min_minor_frac) {
  if (!(max_missing_frac > 0.0 && max_missing_frac < 1.0) ||
      !(min_minor_frac > 0.0 && min_minor_frac < 1.0)) {
    throw std::invalid_argument("filter_columns: fractions must lie in (0,1)");
  }

  Cohort out;
  out.patient_ids = c.patient_ids;
  out.knee_sides = c.knee_sides;
  out.response = c.response;

  for (const auto& col : c.predictors) {
    const double missing = col.missing_fraction();
    if (missing > max_missing_frac) {
      report.dropped_columns.push_back({col.spec.name, "missing_fraction_above_threshold", missing});
      continue;
    }
    if (col.spec.kind != ColumnKind::numeric) {
      std::vector<std::size_t> counts(col.spec.categories.size(), 0);
      std::size_t observed = 0;
      for (const auto& code : col.code) {
        if (code) {
          ++counts[static_cast<std::size_t>(*code)];
          ++observed;
        }
      }
      const std::size_t rarest = observed == 0
          ? 0
          : *std::min_element(counts.begin(), counts.end());
      const double minor_frac = observed == 0
          ? 0.0
          : static_cast<double>(rarest) / static_cast<double>(observed);
      if (minor_frac < min_minor_frac) {
        report.dropped_columns.push_back({col.spec.name, "rarest_category_below_threshold", minor_frac});
        continue;
      }
    }
    out.predictors.push_back(col);
  }

  if (out.predictors.empty()) throw std::runtime_error("filter_columns: empty design (all predictors dropped)");
  return out;
}

std::string DropReport::to_csv() const {
  std::string out = "column,reason,value\n";
  for (const auto& e : dropped_columns) {
    out += csv::format_row({e.column, e.reason, csv::format_double(e.value)});
  }
  out += csv::format_row({"(rows_dropped_incomplete)", "incomplete_row",
                          std::to_string(rows_dropped_incomplete)});
  return out;
}

// ---------------------------------------------------------------------------
// Design matrix
// ---------------------------------------------------------------------------

DesignMatrix build_design(const Cohort& c, DropReport& report,
                          bool drop_incomplete_rows) {
  const std::size_t n_all = c.n_rows();

  std::vector<std::size_t> keep_rows;
  for (std::size_t i = 0; i < n_all; ++i) {
    bool complete = true;
    for (const auto& col : c.predictors) {
      if (col.is_missing(i)) {
        complete = false;
        break;
      }
    }
    if (complete || !drop_incomplete_rows) keep_rows.push_back(i);
    else ++report.rows_dropped_incomplete;
  }
  if (keep_rows.empty()) throw std::runtime_error("build_design: zero complete rows");

  DesignMatrix d;
  struct Encoder {
    const PredictorColumn* col;
    int dummy_level;  // -1 for numeric, otherwise the encoded category code
  };
  std::vector<Encoder> encoders;
  for (const auto& col : c.predictors) {
    if (col.spec.kind == ColumnKind::numeric) {
      d.feature_names.push_back(col.spec.name);
      encoders.push_back({&col, -1});
    } else {
      // First listed category is the reference level.
      for (std::size_t k = 1; k < col.spec.categories.size(); ++k) {
        d.feature_names.push_back(col.spec.name + "=" + col.spec.categories[k]);
        encoders.push_back({&col, static_cast<int>(k)});
      }
    }
  }

  const std::size_t n = keep_rows.size();
  const std::size_t p = d.feature_names.size();
  d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  d.y.resize(static_cast<Eigen::Index>(n));
  d.patient_index.resize(n);
  d.source_rows = keep_rows;

  std::map<std::string, int> cluster_of;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = keep_rows[r];
    d.y(static_cast<Eigen::Index>(r)) = static_cast<double>(c.response[i]);
    auto [it, inserted] = cluster_of.try_emplace(c.patient_ids[i],
                                                 static_cast<int>(cluster_of.size()));
    if (inserted) d.cluster_names.push_back(c.patient_ids[i]);
    d.patient_index[r] = it->second;

    for (std::size_t f = 0; f < p; ++f) {
      const Encoder& enc = encoders[f];
      double value;
      if (enc.dummy_level < 0) {
        const auto& cell = enc.col->num[i];
        value = cell ? *cell : std::nan("");
      } else {
        const auto& cell = enc.col->code[i];
        if (cell) value = (*cell == enc.dummy_level) ? 1.0 : 0.0;
        else value = std::nan("");
      }
      d.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) = value;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Patient split
// ---------------------------------------------------------------------------

SplitPlan split_patients(const Cohort& c, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw std::invalid_argument("split_patients: train_frac must lie in (0,1)");
  }
  std::vector<std::string> patients = c.unique_patients();
  if (patients.size() < 2) throw std::runtime_error("split_patients: need at least 2 patients");

  // Sort before shuffling so the plan depends only on the patient set + seed,
  // not on row order.
  std::sort(patients.begin(), patients.end());
  Rng rng(seed);
  rng.shuffle(patients);

  const double exact = train_frac * static_cast<double>(patients.size());
  const std::size_t n_train = static_cast<std::size_t>(std::floor(exact + 0.5));

  SplitPlan plan;
  plan.seed = seed;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    if (i < n_train) plan.train_patients.insert(patients[i]);
    else plan.validation_patients.insert(patients[i]);
  }
  return plan;
}

std::string SplitPlan::to_csv() const {
  std::string out = "patient_id,subset\n";
  for (const auto& p : train_patients) out += csv::format_row({p, "train"});
  for (const auto& p : validation_patients) out += csv::format_row({p, "validation"});
  return out;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

Cohort subset_by_patients(const Cohort& c, const std::set<std::string>& patients) {
  Cohort out;
  for (const auto& col : c.predictors) {
    PredictorColumn empty;
    empty.spec = col.spec;
    out.predictors.push_back(std::move(empty));
  }
  for (std::size_t i = 0; i < c.n_rows(); ++i) {
    if (!patients.count(c.patient_ids[i])) continue;
    out.patient_ids.push_back(c.patient_ids[i]);
    out.knee_sides.push_back(c.knee_sides[i]);
    out.response.push_back(c.response[i]);
    for (std::size_t j = 0; j < c.predictors.size(); ++j) {
      if (c.predictors[j].spec.kind == ColumnKind::numeric) {
        out.predictors[j].num.push_back(c.predictors[j].num[i]);
      } else {
        out.predictors[j].code.push_back(c.predictors[j].code[i]);
      }
    }
  }
  return out;
}

SummaryTable summarize(const Cohort& c, const std::set<std::string>* subset) {
  const Cohort* source = &c;
  Cohort restricted;
  if (subset) {
    restricted = subset_by_patients(c, *subset);
    source = &restricted;
  }

  SummaryTable t;
  for (const auto& col : source->predictors) {
    if (col.spec.kind == ColumnKind::numeric) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& v : col.num) {
        if (v) {
          sum += *v;
          ++n;
        }
      }
      const double mean = n ? sum / static_cast<double>(n) : 0.0;
      double ss = 0.0;
      for (const auto& v : col.num) {
        if (v) ss += (*v - mean) * (*v - mean);
      }
      const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
      t.numeric.push_back({col.spec.name, n, mean, sd});
    } else {
      std::vector<std::size_t> counts(col.spec.categories.size(), 0);
      std::size_t n = 0;
      for (const auto& code : col.code) {
        if (code) {
          ++counts[static_cast<std::size_t>(*code)];
          ++n;
        }
      }
      for (std::size_t k = 0; k < counts.size(); ++k) {
        const double pct = n ? 100.0 * static_cast<double>(counts[k]) / static_cast<double>(n) : 0.0;
        t.categorical.push_back({col.spec.name, col.spec.categories[k], counts[k], pct});
      }
    }
  }

  std::size_t level_counts[5] = {0, 0, 0, 0, 0};
  for (int r : source->response) ++level_counts[r];
  const std::size_t n_rows = source->n_rows();
  for (int level = 0; level < 5; ++level) {
    const double pct = n_rows ? 100.0 * static_cast<double>(level_counts[level]) /
                                    static_cast<double>(n_rows)
                              : 0.0;
    t.severity.push_back({level, level_counts[level], pct});
  }
  return t;
}

std::string SummaryTable::to_csv() const {
  std::string out = "section,column,category_or_level,n,value1,value2\n";
  for (const auto& r : numeric) {
    out += csv::format_row({"numeric", r.column, "", std::to_string(r.n),
                            csv::format_double(r.mean), csv::format_double(r.sd)});
  }
  for (const auto& r : categorical) {
    out += csv::format_row({"categorical", r.column, r.category,
                            std::to_string(r.count), csv::format_double(r.percent), ""});
  }
  for (const auto& r : severity) {
    out += csv::format_row({"severity", "", std::to_string(r.level),
                            std::to_string(r.count), csv::format_double(r.percent), ""});
  }
  return out;
}

std::string cohort_to_csv(const Cohort& c) {
  std::vector<std::string> header = {"patient_id", "knee_side", "severity"};
  for (const auto& col : c.predictors) header.push_back(col.spec.name);
  std::string out = csv::format_row(header);

  for (std::size_t i = 0; i < c.n_rows(); ++i) {
    std::vector<std::string> row;
    row.push_back(c.patient_ids[i]);
    row.push_back(c.knee_sides[i] == KneeSide::left ? "left" : "right");
    row.push_back(std::to_string(c.response[i]));
    for (const auto& col : c.predictors) {
      if (col.spec.kind == ColumnKind::numeric) {
        row.push_back(col.num[i] ? csv::format_double(*col.num[i]) : "NA");
      } else {
        row.push_back(col.code[i] ? col.spec.categories[static_cast<std::size_t>(*col.code[i])] : "NA");
      }
    }
    out += csv::format_row(row);
  }
  return out;
}

}  // namespace koa::dataset
