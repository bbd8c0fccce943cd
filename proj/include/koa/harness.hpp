#ifndef KOA_HARNESS_HPP
#define KOA_HARNESS_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "koa/dataset.hpp"

namespace koa::harness {

double rmse(const std::vector<double>& pred, const std::vector<double>& truth);

// Per-severity-level RMSE table. Levels with no observations are marked
// absent (NaN rmse, n = 0), never reported as zero error.
struct SeverityReport {
  std::string model_label;
  std::array<double, 5> level_rmse{};   // NaN where absent
  std::array<std::size_t, 5> level_n{};
  double overall_rmse = 0.0;
  std::size_t n = 0;
};

SeverityReport severity_report(const std::vector<double>& pred,
                               const std::vector<int>& truth_levels,
                               const std::string& model_label);

// ---------------------------------------------------------------------------
// Synthetic cohort generation
// ---------------------------------------------------------------------------

// One predictor column: its schema entry plus generation parameters.
// Numeric columns draw standard normals and `effects` holds one slope;
// binary/categorical columns discretize a latent normal at quantiles of
// `probs` and `effects` holds one shift per non-reference category.
// `within_patient_corr` is the latent correlation between a patient's two
// knees for this predictor (1 = patient-level constant).
struct PredictorBlueprint {
  dataset::ColumnSpec column;
  std::vector<double> probs;
  std::vector<double> effects;
  double within_patient_corr = 0.0;
  double missing_rate = 0.0;
};

struct SynthSpec {
  int n_patients = 400;
  std::array<double, 5> level_probs{0.424, 0.176, 0.248, 0.125, 0.027};
  double icc = 0.265;                // of the residual (patient + knee) noise
  double total_residual_var = 1.0;   // sigma_u^2 + sigma_e^2
  std::vector<PredictorBlueprint> predictors;
  std::uint64_t seed = 0;
};

// Age/sex/BMI-style questionnaire blueprint with planted effects, one
// high-missingness column and one null column.
std::vector<PredictorBlueprint> default_blueprint();

struct GroundTruth {
  std::vector<std::pair<std::string, double>> effects;  // per design feature
  double sigma_u2 = 0.0;
  double sigma_e2 = 0.0;
  std::array<double, 4> thresholds{};  // latent cuts between grades
  std::vector<double> latent;          // continuous response per row
  std::vector<double> patient_effect;  // u_i per row
  std::vector<double> knee_noise;      // eps_ij per row
  std::string to_text() const;
};

struct SynthResult {
  dataset::Cohort cohort;
  std::vector<dataset::ColumnSpec> schema;
  GroundTruth truth;
};

// Latent response: sum of predictor effects + patient effect + knee noise,
// discretized at empirical quantiles matching the target level distribution.
SynthResult generate_cohort(const SynthSpec& spec);

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct PipelineConfig {
  bool synthetic = true;
  std::string data_path;
  std::string schema_path;
  int n_patients = 400;
  double icc = 0.265;
  std::uint64_t seed = 1;
  double train_frac = 0.7;
  double max_missing_frac = 0.15;
  double min_minor_frac = 0.05;
  double alpha = 0.5;
  int cv_folds = 10;
  int cv_repeats = 5;
  int n_trees = 100;
  int rf_mtry = 0;          // 0 = ceil(p/3)
  int rf_min_leaf = 5;
  int importance_permutations = 20;
  std::string lmm_features = "from-en";  // or "all"
};

// Plain-text key-value config, one `key value` pair per line, '#' comments.
PipelineConfig parse_config(const std::string& text);

// Filter -> design -> patient split -> train/validation partition, the
// common front half of every model-fitting command.
struct PreparedSplit {
  dataset::DesignMatrix design;
  dataset::SplitPlan plan;
  dataset::DropReport drop_report;
  Eigen::MatrixXd X_train, X_val;
  Eigen::VectorXd y_train, y_val;
  std::vector<int> groups_train;            // dense train-side cluster ids
  std::vector<std::string> train_clusters;  // patient id per dense id
  std::vector<int> levels_val;
};

PreparedSplit prepare_split(const dataset::Cohort& cohort, double max_missing_frac,
                            double min_minor_frac, double train_frac,
                            std::uint64_t split_seed);

struct PipelineResult {
  SeverityReport elastic_net;
  SeverityReport random_forest;
  SeverityReport lmm;
  double baseline_rmse = 0.0;  // train-mean predictor on the validation set
  double chosen_lambda = 0.0;
  std::vector<std::string> en_selected;
  std::vector<std::string> files_written;
};

// preprocess -> correlate -> fit {EN, RF, LMM} -> evaluate, writing every
// artifact plus comparison.csv and a run manifest into `out_dir`. All
// randomness derives from cfg.seed; reruns are byte-identical.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& out_dir);

// Comparison table in the severity-report layout; fitted rows are labeled
// this_run, reference rows carry published RMSE constants for context.
std::string comparison_csv(const std::vector<SeverityReport>& fitted);

}  // namespace koa::harness

#endif  // KOA_HARNESS_HPP
