#include "koa/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "koa/csv.hpp"
#include "koa/elastic_net.hpp"
#include "koa/forest.hpp"
#include "koa/lmm.hpp"
#include "koa/mixedcorr.hpp"
#include "koa/normal.hpp"
#include "koa/rng.hpp"

namespace koa::harness {

using dataset::Cohort;
using dataset::ColumnKind;
using dataset::ColumnRole;
using dataset::ColumnSpec;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("rmse: length mismatch");
  if (pred.empty()) throw std::invalid_argument("rmse: empty input");
  double sse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    sse += d * d;
  }
  return std::sqrt(sse / static_cast<double>(pred.size()));
}

SeverityReport severity_report(const std::vector<double>& pred,
                               const std::vector<int>& truth_levels,
                               const std::string& model_label) {
  if (pred.size() != truth_levels.size()) {
    throw std::invalid_argument("severity_report: length mismatch");
  }
  SeverityReport rep;
  rep.model_label = model_label;
  rep.n = pred.size();
  std::array<double, 5> sse{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int level = truth_levels[i];
    if (level < 0 || level > 4) throw std::invalid_argument("severity_report: level outside 0..4");
    const double d = pred[i] - static_cast<double>(level);
    sse[static_cast<std::size_t>(level)] += d * d;
    ++rep.level_n[static_cast<std::size_t>(level)];
  }
  double total_sse = 0.0;
  for (int k = 0; k < 5; ++k) {
    total_sse += sse[static_cast<std::size_t>(k)];
    rep.level_rmse[static_cast<std::size_t>(k)] =
        rep.level_n[static_cast<std::size_t>(k)] > 0
            ? std::sqrt(sse[static_cast<std::size_t>(k)] /
                        static_cast<double>(rep.level_n[static_cast<std::size_t>(k)]))
            : std::numeric_limits<double>::quiet_NaN();
  }
  rep.overall_rmse = rep.n ? std::sqrt(total_sse / static_cast<double>(rep.n)) : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Synthetic cohort
// ---------------------------------------------------------------------------

std::vector<PredictorBlueprint> default_blueprint() {
  auto numeric = [](const std::string& name, double effect, double corr, double missing) {
    PredictorBlueprint b;
    b.column.name = name;
    b.column.kind = ColumnKind::numeric;
    b.effects = {effect};
    b.within_patient_corr = corr;
    b.missing_rate = missing;
    return b;
  };
  auto binary = [](const std::string& name, const std::vector<std::string>& cats,
                   double p_second, double effect, double corr, double missing) {
    PredictorBlueprint b;
    b.column.name = name;
    b.column.kind = ColumnKind::binary;
    b.column.categories = cats;
    b.probs = {1.0 - p_second, p_second};
    b.effects = {effect};
    b.within_patient_corr = corr;
    b.missing_rate = missing;
    return b;
  };
  auto categorical = [](const std::string& name, const std::vector<std::string>& cats,
                        const std::vector<double>& probs, const std::vector<double>& effects,
                        double corr, double missing) {
    PredictorBlueprint b;
    b.column.name = name;
    b.column.kind = ColumnKind::categorical;
    b.column.categories = cats;
    b.probs = probs;
    b.effects = effects;
    b.within_patient_corr = corr;
    b.missing_rate = missing;
    return b;
  };

  return {
      numeric("age", 0.8, 1.0, 0.02),
      binary("sex", {"male", "female"}, 0.55, 0.3, 1.0, 0.0),
      numeric("bmi", 0.5, 1.0, 0.05),
      numeric("pain_score", 0.9, 0.4, 0.03),
      binary("prior_injury", {"no", "yes"}, 0.25, 0.6, 0.3, 0.02),
      categorical("activity_level", {"low", "medium", "high"}, {0.3, 0.5, 0.2},
                  {-0.2, -0.5}, 0.8, 0.04),
      // Dropped by the missingness filter, like a sparse occupation field.
      categorical("occupation", {"desk", "manual", "mixed"}, {0.5, 0.3, 0.2},
                  {0.0, 0.0}, 1.0, 0.31),
      // Pure-noise marker for importance noise floors.
      binary("noise_marker", {"absent", "present"}, 0.5, 0.0, 0.0, 0.0),
  };
}

namespace {

void validate_spec(const SynthSpec& spec) {
  if (spec.n_patients < 2) throw std::invalid_argument("synth: need >= 2 patients");
  double total = 0.0;
  for (double p : spec.level_probs) {
    if (!(p > 0.0)) throw std::invalid_argument("synth: level probabilities must be positive");
    total += p;
  }
  if (std::fabs(total - 1.0) > 1e-6) {
    throw std::invalid_argument("synth: level probabilities must sum to 1");
  }
  if (!(spec.icc >= 0.0 && spec.icc < 1.0)) {
    throw std::invalid_argument("synth: icc must lie in [0,1)");
  }
  if (!(spec.total_residual_var > 0.0)) {
    throw std::invalid_argument("synth: total residual variance must be positive");
  }
  for (const auto& b : spec.predictors) {
    if (b.column.role != ColumnRole::predictor) {
      throw std::invalid_argument("synth: blueprint columns must be predictors");
    }
    if (!(b.within_patient_corr >= 0.0 && b.within_patient_corr <= 1.0)) {
      throw std::invalid_argument("synth: within_patient_corr must lie in [0,1]");
    }
    if (!(b.missing_rate >= 0.0 && b.missing_rate < 1.0)) {
      throw std::invalid_argument("synth: missing_rate must lie in [0,1)");
    }
    if (b.column.kind == ColumnKind::numeric) {
      if (b.effects.size() != 1) throw std::invalid_argument("synth: numeric column needs one effect");
    } else {
      const std::size_t c = b.column.categories.size();
      if (c < 2) throw std::invalid_argument("synth: need >= 2 categories");
      if (b.probs.size() != c) throw std::invalid_argument("synth: probs/category mismatch");
      if (b.effects.size() != c - 1) {
        throw std::invalid_argument("synth: need one effect per non-reference category");
      }
      double ptot = 0.0;
      for (double p : b.probs) {
        if (!(p > 0.0)) throw std::invalid_argument("synth: category probabilities must be positive");
        ptot += p;
      }
      if (std::fabs(ptot - 1.0) > 1e-6) {
        throw std::invalid_argument("synth: category probabilities must sum to 1");
      }
    }
  }
}

std::string patient_label(int index, int n) {
  std::size_t width = 1;
  for (int v = n; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(index + 1);
  const std::size_t pad = width > digits.size() ? width - digits.size() : 0;
  return "P" + std::string(pad, '0') + digits;
}

}  // namespace

SynthResult generate_cohort(const SynthSpec& spec) {
  validate_spec(spec);
  const std::vector<PredictorBlueprint>& blueprint = spec.predictors;
  const int n_rows = spec.n_patients * 2;

  SynthResult out;
  out.schema.push_back({"patient_id", ColumnKind::categorical, ColumnRole::patient_id, {}});
  out.schema.push_back({"knee_side", ColumnKind::categorical, ColumnRole::knee_side, {}});
  out.schema.push_back({"severity", ColumnKind::numeric, ColumnRole::response, {}});
  for (const auto& b : blueprint) out.schema.push_back(b.column);

  Cohort& cohort = out.cohort;
  for (const auto& b : blueprint) {
    dataset::PredictorColumn col;
    col.spec = b.column;
    cohort.predictors.push_back(std::move(col));
  }

  out.truth.sigma_u2 = spec.icc * spec.total_residual_var;
  out.truth.sigma_e2 = (1.0 - spec.icc) * spec.total_residual_var;
  const double sd_u = std::sqrt(out.truth.sigma_u2);
  const double sd_e = std::sqrt(out.truth.sigma_e2);

  for (const auto& b : blueprint) {
    if (b.column.kind == ColumnKind::numeric) {
      out.truth.effects.emplace_back(b.column.name, b.effects[0]);
    } else {
      for (std::size_t k = 1; k < b.column.categories.size(); ++k) {
        out.truth.effects.emplace_back(b.column.name + "=" + b.column.categories[k],
                                       b.effects[k - 1]);
      }
    }
  }

  // Per-category latent cut points from cumulative probabilities.
  std::vector<std::vector<double>> category_cuts(blueprint.size());
  for (std::size_t p = 0; p < blueprint.size(); ++p) {
    if (blueprint[p].column.kind == ColumnKind::numeric) continue;
    double cum = 0.0;
    for (std::size_t k = 0; k + 1 < blueprint[p].probs.size(); ++k) {
      cum += blueprint[p].probs[k];
      category_cuts[p].push_back(norm_quantile(cum));
    }
  }

  Rng rng(spec.seed);
  Rng missing_rng = rng.child(0xA11CE);
  out.truth.latent.resize(static_cast<std::size_t>(n_rows));
  out.truth.patient_effect.resize(static_cast<std::size_t>(n_rows));
  out.truth.knee_noise.resize(static_cast<std::size_t>(n_rows));

  for (int pat = 0; pat < spec.n_patients; ++pat) {
    const std::string label = patient_label(pat, spec.n_patients);
    const double u = sd_u * rng.normal();

    // Patient-level latent draw per predictor, shared across knees.
    std::vector<double> patient_latent(blueprint.size());
    for (std::size_t p = 0; p < blueprint.size(); ++p) patient_latent[p] = rng.normal();

    for (int knee = 0; knee < 2; ++knee) {
      const std::size_t row = static_cast<std::size_t>(pat * 2 + knee);
      cohort.patient_ids.push_back(label);
      cohort.knee_sides.push_back(knee == 0 ? dataset::KneeSide::left
                                            : dataset::KneeSide::right);
      double signal = 0.0;
      for (std::size_t p = 0; p < blueprint.size(); ++p) {
        const PredictorBlueprint& b = blueprint[p];
        const double c = b.within_patient_corr;
        const double z = std::sqrt(c) * patient_latent[p] +
                         std::sqrt(1.0 - c) * rng.normal();
        if (b.column.kind == ColumnKind::numeric) {
          cohort.predictors[p].num.push_back(z);
          signal += b.effects[0] * z;
        } else {
          int code = 0;
          for (double cut : category_cuts[p]) code += (z > cut);
          cohort.predictors[p].code.push_back(code);
          if (code > 0) signal += b.effects[static_cast<std::size_t>(code - 1)];
        }
      }
      const double eps = sd_e * rng.normal();
      const double latent = signal + u + eps;
      out.truth.latent[row] = latent;
      out.truth.patient_effect[row] = u;
      out.truth.knee_noise[row] = eps;
      cohort.response.push_back(0);  // graded below, after thresholds are known
    }
  }

  // Empirical thresholds: the discretized response matches the target level
  // distribution up to integer rounding.
  std::vector<double> sorted_latent = out.truth.latent;
  std::sort(sorted_latent.begin(), sorted_latent.end());
  double cum = 0.0;
  for (int k = 0; k < 4; ++k) {
    cum += spec.level_probs[static_cast<std::size_t>(k)];
    std::size_t idx = static_cast<std::size_t>(cum * n_rows);
    idx = std::min(idx, sorted_latent.size() - 1);
    out.truth.thresholds[static_cast<std::size_t>(k)] = sorted_latent[idx];
  }
  for (std::size_t row = 0; row < out.truth.latent.size(); ++row) {
    int grade = 0;
    for (double t : out.truth.thresholds) grade += (out.truth.latent[row] > t);
    cohort.response[row] = grade;
  }

  // Missingness is injected after grading, so the response model never
  // depends on which cells are hidden.
  for (std::size_t p = 0; p < blueprint.size(); ++p) {
    const double rate = blueprint[p].missing_rate;
    if (rate <= 0.0) continue;
    auto& col = cohort.predictors[p];
    for (int row = 0; row < n_rows; ++row) {
      if (missing_rng.uniform() < rate) {
        if (col.spec.kind == ColumnKind::numeric) col.num[static_cast<std::size_t>(row)].reset();
        else col.code[static_cast<std::size_t>(row)].reset();
      }
    }
  }
  return out;
}

std::string GroundTruth::to_text() const {
  std::ostringstream out;
  out << "sigma_u2 " << csv::format_double(sigma_u2) << "\n";
  out << "sigma_e2 " << csv::format_double(sigma_e2) << "\n";
  out << "icc " << csv::format_double(sigma_u2 / (sigma_u2 + sigma_e2)) << "\n";
  out << "thresholds";
  for (double t : thresholds) out << " " << csv::format_double(t);
  out << "\n";
  for (const auto& [name, effect] : effects) {
    out << "effect " << name << " " << csv::format_double(effect) << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    std::string value;
    if (!(ls >> value)) throw std::runtime_error("config: missing value for '" + key + "'");

    try {
      if (key == "mode") cfg.synthetic = (value == "synth");
      else if (key == "data") cfg.data_path = value;
      else if (key == "schema") cfg.schema_path = value;
      else if (key == "patients") cfg.n_patients = std::stoi(value);
      else if (key == "icc") cfg.icc = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "train_frac") cfg.train_frac = std::stod(value);
      else if (key == "max_missing_frac") cfg.max_missing_frac = std::stod(value);
      else if (key == "min_minor_frac") cfg.min_minor_frac = std::stod(value);
      else if (key == "alpha") cfg.alpha = std::stod(value);
      else if (key == "folds") cfg.cv_folds = std::stoi(value);
      else if (key == "repeats") cfg.cv_repeats = std::stoi(value);
      else if (key == "trees") cfg.n_trees = std::stoi(value);
      else if (key == "mtry") cfg.rf_mtry = std::stoi(value);
      else if (key == "min_leaf") cfg.rf_min_leaf = std::stoi(value);
      else if (key == "importance_permutations") cfg.importance_permutations = std::stoi(value);
      else if (key == "lmm_features") cfg.lmm_features = value;
      else throw std::runtime_error("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("config: bad value '" + value + "' for '" + key + "'");
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

PreparedSplit prepare_split(const dataset::Cohort& cohort, double max_missing_frac,
                            double min_minor_frac, double train_frac,
                            std::uint64_t split_seed) {
  PreparedSplit s;
  const Cohort filtered =
      dataset::filter_columns(cohort, s.drop_report, max_missing_frac, min_minor_frac);
  s.design = dataset::build_design(filtered, s.drop_report, true);
  s.plan = dataset::split_patients(filtered, train_frac, split_seed);

  const dataset::DesignMatrix& d = s.design;
  std::vector<Eigen::Index> train_rows, val_rows;
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    const std::string& patient =
        d.cluster_names[static_cast<std::size_t>(d.patient_index[static_cast<std::size_t>(i)])];
    (s.plan.is_train(patient) ? train_rows : val_rows).push_back(i);
  }
  if (train_rows.empty() || val_rows.empty()) {
    throw std::runtime_error("pipeline: empty train or validation side after split");
  }

  s.X_train.resize(static_cast<Eigen::Index>(train_rows.size()), d.X.cols());
  s.y_train.resize(static_cast<Eigen::Index>(train_rows.size()));
  std::map<int, int> dense;
  for (std::size_t i = 0; i < train_rows.size(); ++i) {
    const Eigen::Index r = train_rows[i];
    s.X_train.row(static_cast<Eigen::Index>(i)) = d.X.row(r);
    s.y_train(static_cast<Eigen::Index>(i)) = d.y(r);
    const int cluster = d.patient_index[static_cast<std::size_t>(r)];
    auto [it, inserted] = dense.try_emplace(cluster, static_cast<int>(dense.size()));
    if (inserted) s.train_clusters.push_back(d.cluster_names[static_cast<std::size_t>(cluster)]);
    s.groups_train.push_back(it->second);
  }
  s.X_val.resize(static_cast<Eigen::Index>(val_rows.size()), d.X.cols());
  s.y_val.resize(static_cast<Eigen::Index>(val_rows.size()));
  for (std::size_t i = 0; i < val_rows.size(); ++i) {
    const Eigen::Index r = val_rows[i];
    s.X_val.row(static_cast<Eigen::Index>(i)) = d.X.row(r);
    s.y_val(static_cast<Eigen::Index>(i)) = d.y(r);
    s.levels_val.push_back(static_cast<int>(std::lround(d.y(r))));
  }
  return s;
}

namespace {

std::string severity_row(const SeverityReport& rep, const std::string& source) {
  std::vector<std::string> fields = {rep.model_label, source};
  for (int k = 0; k < 5; ++k) {
    const double r = rep.level_rmse[static_cast<std::size_t>(k)];
    fields.push_back(std::isnan(r) ? "NA" : csv::format_fixed(r, 6));
  }
  fields.push_back(csv::format_fixed(rep.overall_rmse, 6));
  return csv::format_row(fields);
}

}  // namespace

std::string comparison_csv(const std::vector<SeverityReport>& fitted) {
  std::string out = "model,source,level0,level1,level2,level3,level4,overall\n";
  for (const auto& rep : fitted) out += severity_row(rep, "this_run");

  // Published RMSE values from the original OAI questionnaire study, shipped
  // as labeled constants for context; this code does not reproduce them.
  struct Ref {
    const char* model;
    double l0, l1, l2, l3, l4, overall;
  };
  const Ref refs[] = {
      {"elastic_net", 0.917, 0.563, 0.881, 1.320, 2.140, 0.973},
      {"lmm", 0.920, 0.591, 0.895, 1.320, 2.10, 0.978},
      {"random_forest", 0.909, 0.511, 0.853, 1.270, 2.02, 0.943},
      {"cnn", 0.816, 0.485, 0.840, 0.795, 0.846, 0.770},
  };
  for (const auto& r : refs) {
    out += csv::format_row({r.model, "published_reference_not_reproduced",
                            csv::format_double(r.l0), csv::format_double(r.l1),
                            csv::format_double(r.l2), csv::format_double(r.l3),
                            csv::format_double(r.l4), csv::format_double(r.overall)});
  }
  return out;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& out_dir) {
  namespace en = elastic_net;
  PipelineResult result;
  std::ostringstream manifest;
  manifest << "toolkit_version 1.0.0\n";
  manifest << "model_file_version 1\n";
  manifest << "seed " << cfg.seed << "\n";

  auto write = [&](const std::string& name, const std::string& content) {
    const std::string path = out_dir + "/" + name;
    csv::write_file_atomic(path, content);
    result.files_written.push_back(path);
  };

  const Rng master(cfg.seed);

  // --- stage: data -------------------------------------------------------
  Cohort cohort;
  try {
    if (cfg.synthetic) {
      SynthSpec spec;
      spec.n_patients = cfg.n_patients;
      spec.icc = cfg.icc;
      spec.seed = cfg.seed;
      spec.predictors = default_blueprint();
      SynthResult synth = generate_cohort(spec);
      cohort = std::move(synth.cohort);
      write("data.csv", dataset::cohort_to_csv(cohort));
      write("schema.txt", dataset::schema_to_text(synth.schema));
      write("truth.txt", synth.truth.to_text());
      manifest << "source synthetic\nn_patients " << cfg.n_patients
               << "\nicc_target " << cfg.icc << "\n";
    } else {
      cohort = dataset::load_cohort(cfg.data_path, cfg.schema_path);
      manifest << "source " << cfg.data_path << "\n";
    }
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage data: ") + e.what());
  }

  // --- stage: preprocess --------------------------------------------------
  PreparedSplit split;
  try {
    // The split takes the master seed itself, so the standalone preprocess
    // and evaluate commands reproduce this run's split from the same seed.
    split = prepare_split(cohort, cfg.max_missing_frac, cfg.min_minor_frac,
                          cfg.train_frac, cfg.seed);
    dataset::DropReport summary_pass;
    const Cohort filtered = dataset::filter_columns(
        cohort, summary_pass, cfg.max_missing_frac, cfg.min_minor_frac);
    write("drop_report.csv", split.drop_report.to_csv());
    write("split.csv", split.plan.to_csv());
    write("summary_total.csv", dataset::summarize(filtered).to_csv());
    write("summary_train.csv", dataset::summarize(filtered, &split.plan.train_patients).to_csv());
    write("summary_validation.csv",
          dataset::summarize(filtered, &split.plan.validation_patients).to_csv());
    manifest << "rows_after_preprocess " << split.design.X.rows() << "\n";
    manifest << "features " << split.design.feature_names.size() << "\n";
    for (const auto& d : split.drop_report.dropped_columns) {
      manifest << "dropped_column " << d.column << " " << d.reason << "\n";
    }
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage preprocess: ") + e.what());
  }

  // --- stage: correlate ----------------------------------------------------
  try {
    dataset::DropReport ignore;
    const Cohort filtered =
        dataset::filter_columns(cohort, ignore, cfg.max_missing_frac, cfg.min_minor_frac);
    write("heatmap.csv", mixedcorr::correlation_matrix(filtered).to_long_csv());
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage correlate: ") + e.what());
  }

  const dataset::DesignMatrix& design = split.design;
  const std::vector<double> y_val = to_std(split.y_val);

  // Intercept-only baseline: predict the train mean everywhere.
  const double train_mean = split.y_train.mean();
  {
    std::vector<double> base_pred(y_val.size(), train_mean);
    result.baseline_rmse = rmse(base_pred, y_val);
  }

  // --- stage: elastic net ---------------------------------------------------
  en::ElasticNetFit en_fit;
  try {
    en::EnConfig en_cfg;
    en_cfg.alpha = cfg.alpha;
    const en::CvResult cv =
        en::cross_validate(split.X_train, split.y_train, split.groups_train, en_cfg,
                           cfg.cv_folds, cfg.cv_repeats, master.child(2).seed());
    en_fit = en::fit_path(split.X_train, split.y_train, en_cfg, &cv.chosen_lambda);
    result.chosen_lambda = cv.chosen_lambda;

    const auto contribs = en::contributions(en_fit, design.feature_names);
    for (const auto& c : contribs) result.en_selected.push_back(c.name);

    write("cv_curve.csv", cv.to_csv());
    write("coefficients.csv", en::contributions_to_csv(contribs));
    write("model_en.txt", en::en_to_text(en_fit, design.feature_names));
    manifest << "en_alpha " << cfg.alpha << "\n";
    manifest << "en_chosen_lambda " << csv::format_double(cv.chosen_lambda)
             << " (min mean CV RMSE, ties to larger lambda)\n";
    manifest << "en_selected " << result.en_selected.size() << " features\n";
    const Eigen::VectorXd pred = en_fit.predict(split.X_val);
    result.elastic_net = severity_report(to_std(pred), split.levels_val, "elastic_net");
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage fit-en: ") + e.what());
  }

  // --- stage: random forest --------------------------------------------------
  try {
    forest::ForestConfig rf_cfg;
    rf_cfg.n_trees = cfg.n_trees;
    rf_cfg.mtry = cfg.rf_mtry;
    rf_cfg.min_leaf = cfg.rf_min_leaf;
    rf_cfg.seed = master.child(3).seed();
    const forest::ForestFit rf = forest::fit(split.X_train, split.y_train, rf_cfg);
    const forest::ImportanceResult imp =
        forest::importance(rf, split.X_val, split.y_val, cfg.importance_permutations,
                           master.child(4).seed());
    write("importances.csv", imp.to_csv(design.feature_names));
    std::ostringstream oob;
    oob << "oob_rmse " << csv::format_double(rf.oob_rmse) << "\n"
        << "oob_rows " << rf.oob_rows << "\n"
        << "rows_never_oob " << rf.never_oob_rows << "\n";
    write("oob.txt", oob.str());
    write("model_rf.txt", forest::forest_to_text(rf, design.feature_names));
    manifest << "rf_trees " << cfg.n_trees << "\n";
    const Eigen::VectorXd pred = forest::predict(rf, split.X_val);
    result.random_forest = severity_report(to_std(pred), split.levels_val, "random_forest");
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage fit-rf: ") + e.what());
  }

  // --- stage: lmm -------------------------------------------------------------
  try {
    std::vector<std::size_t> keep;
    if (cfg.lmm_features == "from-en") {
      for (std::size_t j = 0; j < design.feature_names.size(); ++j) {
        if (std::find(result.en_selected.begin(), result.en_selected.end(),
                      design.feature_names[j]) != result.en_selected.end()) {
          keep.push_back(j);
        }
      }
      if (keep.empty()) {
        manifest << "lmm_features fallback_to_all (elastic net selected none)\n";
        for (std::size_t j = 0; j < design.feature_names.size(); ++j) keep.push_back(j);
      } else {
        manifest << "lmm_features from-en\n";
      }
    } else {
      for (std::size_t j = 0; j < design.feature_names.size(); ++j) keep.push_back(j);
      manifest << "lmm_features all\n";
    }

    lmm::LmmDesign ld;
    ld.X.resize(split.X_train.rows(), static_cast<Eigen::Index>(keep.size()) + 1);
    ld.X.col(0).setOnes();
    for (std::size_t j = 0; j < keep.size(); ++j) {
      ld.X.col(static_cast<Eigen::Index>(j) + 1) =
          split.X_train.col(static_cast<Eigen::Index>(keep[j]));
    }
    ld.y = split.y_train;
    ld.cluster = split.groups_train;
    const lmm::LmmFit lf = lmm::fit_reml(ld);
    const lmm::LrtResult lrt = lmm::lrt_random_effect(ld);

    std::vector<std::string> lmm_names = {"(intercept)"};
    for (std::size_t j : keep) lmm_names.push_back(design.feature_names[j]);

    std::ostringstream vc;
    vc << "sigma_u2 " << csv::format_double(lf.sigma_u2) << "\n"
       << "sigma_e2 " << csv::format_double(lf.sigma_e2) << "\n"
       << "icc " << csv::format_double(lf.icc) << "\n"
       << "reml_loglik " << csv::format_double(lf.reml_loglik) << "\n"
       << "lrt_stat " << csv::format_double(lrt.stat) << "\n"
       << "lrt_p_value " << csv::format_double(lrt.p_value) << "\n";
    write("variance_components.txt", vc.str());

    std::string fe = "feature,estimate,se\n";
    for (std::size_t j = 0; j < lmm_names.size(); ++j) {
      fe += csv::format_row({lmm_names[j],
                             csv::format_double(lf.beta(static_cast<Eigen::Index>(j))),
                             csv::format_double(lf.beta_se(static_cast<Eigen::Index>(j)))});
    }
    write("fixed_effects.csv", fe);

    std::string blups = "patient_id,blup\n";
    for (std::size_t c = 0; c < split.train_clusters.size(); ++c) {
      blups += csv::format_row({split.train_clusters[c], csv::format_double(lf.blups[c])});
    }
    write("blups.csv", blups);
    write("model_lmm.txt", lmm::lmm_to_text(lf, lmm_names, split.train_clusters));
    manifest << "lmm_icc " << csv::format_double(lf.icc) << "\n";
    manifest << "lmm_lrt_p " << csv::format_double(lrt.p_value) << "\n";

    // Validation patients are unseen clusters: honest out-of-sample
    // prediction uses fixed effects only.
    Eigen::MatrixXd Xv(split.X_val.rows(), static_cast<Eigen::Index>(keep.size()) + 1);
    Xv.col(0).setOnes();
    for (std::size_t j = 0; j < keep.size(); ++j) {
      Xv.col(static_cast<Eigen::Index>(j) + 1) =
          split.X_val.col(static_cast<Eigen::Index>(keep[j]));
    }
    const std::vector<int> unknown(static_cast<std::size_t>(Xv.rows()), -1);
    const lmm::LmmPredictions pred = lmm::predict(lf, Xv, unknown);
    result.lmm = severity_report(to_std(pred.fitted), split.levels_val, "lmm");
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage fit-lmm: ") + e.what());
  }

  // --- stage: evaluate ----------------------------------------------------------
  try {
    write("comparison.csv",
          comparison_csv({result.elastic_net, result.lmm, result.random_forest}));
    std::ostringstream eval;
    eval << "baseline_rmse " << csv::format_double(result.baseline_rmse) << "\n";
    for (const SeverityReport* rep :
         {&result.elastic_net, &result.random_forest, &result.lmm}) {
      eval << rep->model_label << "_rmse " << csv::format_double(rep->overall_rmse)
           << " improvement_vs_baseline "
           << csv::format_fixed(100.0 * (1.0 - rep->overall_rmse / result.baseline_rmse), 2)
           << "%\n";
    }
    write("evaluation.txt", eval.str());
    manifest << "baseline_rmse " << csv::format_double(result.baseline_rmse) << "\n";
    manifest << "decision split_by_patient both_knees_same_side\n";
    manifest << "decision cv_folds_grouped_by_patient\n";
    manifest << "decision lmm_validation_prediction fixed_effects_only\n";
    write("manifest.txt", manifest.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage evaluate: ") + e.what());
  }

  return result;
}

}  // namespace koa::harness
