// Command-line front end for the KOA severity modeling toolkit.

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "koa/cnn.hpp"
#include "koa/csv.hpp"
#include "koa/dataset.hpp"
#include "koa/elastic_net.hpp"
#include "koa/forest.hpp"
#include "koa/harness.hpp"
#include "koa/lmm.hpp"
#include "koa/mixedcorr.hpp"

namespace {

using namespace koa;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct CommonDataArgs {
  std::string data_path;
  std::string schema_path;
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  double train_frac = 0.7;
  double max_missing = 0.15;
  double min_minor = 0.05;
};

void add_common(CLI::App* cmd, CommonDataArgs& args) {
  cmd->add_option("--data", args.data_path, "cohort CSV")->required();
  cmd->add_option("--schema", args.schema_path, "schema file")->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "master seed");
  cmd->add_option("--train-frac", args.train_frac, "training fraction of patients");
  cmd->add_option("--max-missing", args.max_missing, "drop columns above this missing fraction");
  cmd->add_option("--min-minor", args.min_minor, "drop columns below this rarest-category fraction");
}

harness::PreparedSplit load_and_split(const CommonDataArgs& args) {
  const auto cohort = dataset::load_cohort(args.data_path, args.schema_path);
  return harness::prepare_split(cohort, args.max_missing, args.min_minor,
                                args.train_frac, args.seed);
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

std::string report_csv(const harness::SeverityReport& rep) {
  std::string out = "level,n,rmse\n";
  for (int k = 0; k < 5; ++k) {
    const double r = rep.level_rmse[static_cast<std::size_t>(k)];
    out += csv::format_row({std::to_string(k),
                            std::to_string(rep.level_n[static_cast<std::size_t>(k)]),
                            std::isnan(r) ? "NA" : csv::format_double(r)});
  }
  out += csv::format_row({"overall", std::to_string(rep.n),
                          csv::format_double(rep.overall_rmse)});
  return out;
}

// Rebuilds a design from the cohort and maps the model's features onto it
// by name; errors out on any feature the data cannot provide.
Eigen::MatrixXd select_features(const dataset::DesignMatrix& design,
                                const std::vector<std::string>& wanted) {
  Eigen::MatrixXd X(design.X.rows(), static_cast<Eigen::Index>(wanted.size()));
  for (std::size_t j = 0; j < wanted.size(); ++j) {
    const auto it = std::find(design.feature_names.begin(), design.feature_names.end(), wanted[j]);
    if (it == design.feature_names.end()) {
      throw std::runtime_error("feature '" + wanted[j] + "' not present in the data");
    }
    X.col(static_cast<Eigen::Index>(j)) =
        design.X.col(static_cast<Eigen::Index>(it - design.feature_names.begin()));
  }
  return X;
}

int cmd_synth(int n_patients, double icc, std::uint64_t seed, const std::string& out_dir) {
  harness::SynthSpec spec;
  spec.n_patients = n_patients;
  spec.icc = icc;
  spec.seed = seed;
  spec.predictors = harness::default_blueprint();
  const harness::SynthResult synth = harness::generate_cohort(spec);
  csv::write_file_atomic(out_dir + "/data.csv", dataset::cohort_to_csv(synth.cohort));
  csv::write_file_atomic(out_dir + "/schema.txt", dataset::schema_to_text(synth.schema));
  csv::write_file_atomic(out_dir + "/truth.txt", synth.truth.to_text());
  std::cout << "wrote " << out_dir << "/data.csv (" << synth.cohort.n_rows()
            << " rows), schema.txt, truth.txt\n";
  return 0;
}

int cmd_preprocess(const CommonDataArgs& args) {
  const auto cohort = dataset::load_cohort(args.data_path, args.schema_path);
  const auto split = harness::prepare_split(cohort, args.max_missing, args.min_minor,
                                            args.train_frac, args.seed);
  csv::write_file_atomic(args.out_dir + "/drop_report.csv", split.drop_report.to_csv());
  csv::write_file_atomic(args.out_dir + "/split.csv", split.plan.to_csv());

  dataset::DropReport ignore;
  const auto filtered =
      dataset::filter_columns(cohort, ignore, args.max_missing, args.min_minor);
  csv::write_file_atomic(args.out_dir + "/summary_total.csv",
                         dataset::summarize(filtered).to_csv());
  csv::write_file_atomic(args.out_dir + "/summary_train.csv",
                         dataset::summarize(filtered, &split.plan.train_patients).to_csv());
  csv::write_file_atomic(args.out_dir + "/summary_validation.csv",
                         dataset::summarize(filtered, &split.plan.validation_patients).to_csv());
  std::cout << "rows " << split.design.X.rows() << ", features "
            << split.design.feature_names.size() << ", train patients "
            << split.plan.train_patients.size() << ", validation patients "
            << split.plan.validation_patients.size() << "\n";
  return 0;
}

int cmd_correlate(const std::string& data_path, const std::string& schema_path,
                  const std::string& out_dir) {
  const auto cohort = dataset::load_cohort(data_path, schema_path);
  const auto matrix = mixedcorr::correlation_matrix(cohort);
  csv::write_file_atomic(out_dir + "/heatmap.csv", matrix.to_long_csv());
  std::cout << "wrote " << out_dir << "/heatmap.csv (" << matrix.names.size()
            << " predictors)\n";
  return 0;
}

int cmd_fit_en(const CommonDataArgs& args, double alpha, int folds, int repeats) {
  const auto split = load_and_split(args);
  elastic_net::EnConfig cfg;
  cfg.alpha = alpha;
  const auto cv = elastic_net::cross_validate(split.X_train, split.y_train,
                                              split.groups_train, cfg, folds, repeats,
                                              args.seed);
  const auto fit = elastic_net::fit_path(split.X_train, split.y_train, cfg, &cv.chosen_lambda);
  const auto contribs = elastic_net::contributions(fit, split.design.feature_names);

  csv::write_file_atomic(args.out_dir + "/cv_curve.csv", cv.to_csv());
  csv::write_file_atomic(args.out_dir + "/coefficients.csv",
                         elastic_net::contributions_to_csv(contribs));
  csv::write_file_atomic(args.out_dir + "/model_en.txt",
                         elastic_net::en_to_text(fit, split.design.feature_names));

  const auto rep = harness::severity_report(to_std(fit.predict(split.X_val)),
                                            split.levels_val, "elastic_net");
  csv::write_file_atomic(args.out_dir + "/report_en.csv", report_csv(rep));
  std::cout << "chosen lambda " << cv.chosen_lambda << ", nonzero " << contribs.size()
            << ", validation RMSE " << rep.overall_rmse << "\n";
  return 0;
}

int cmd_fit_rf(const CommonDataArgs& args, int trees, int mtry, int min_leaf,
               int permutations) {
  const auto split = load_and_split(args);
  forest::ForestConfig cfg;
  cfg.n_trees = trees;
  cfg.mtry = mtry;
  cfg.min_leaf = min_leaf;
  cfg.seed = args.seed;
  const auto fit = forest::fit(split.X_train, split.y_train, cfg);
  const auto imp = forest::importance(fit, split.X_val, split.y_val, permutations,
                                      Rng(args.seed).child(7).seed());

  csv::write_file_atomic(args.out_dir + "/importances.csv",
                         imp.to_csv(split.design.feature_names));
  std::ostringstream oob;
  oob << "oob_rmse " << csv::format_double(fit.oob_rmse) << "\n"
      << "oob_rows " << fit.oob_rows << "\n"
      << "rows_never_oob " << fit.never_oob_rows << "\n";
  csv::write_file_atomic(args.out_dir + "/oob.txt", oob.str());
  csv::write_file_atomic(args.out_dir + "/model_rf.txt",
                         forest::forest_to_text(fit, split.design.feature_names));

  const auto rep = harness::severity_report(to_std(forest::predict(fit, split.X_val)),
                                            split.levels_val, "random_forest");
  csv::write_file_atomic(args.out_dir + "/report_rf.csv", report_csv(rep));
  std::cout << "trees " << trees << ", OOB RMSE " << fit.oob_rmse
            << ", validation RMSE " << rep.overall_rmse << "\n";
  return 0;
}

int cmd_fit_lmm(const CommonDataArgs& args, const std::string& features,
                const std::string& en_model_path) {
  const auto split = load_and_split(args);

  std::vector<std::string> wanted;
  if (features == "from-en") {
    std::string path = en_model_path.empty() ? args.out_dir + "/model_en.txt" : en_model_path;
    std::vector<std::string> names;
    elastic_net::ElasticNetFit en_fit;
    try {
      en_fit = elastic_net::en_from_text(slurp(path), names);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("--features from-en needs an elastic net model (run fit-en first, or pass --features all): ") + e.what());
    }
    for (std::size_t j = 0; j < names.size(); ++j) {
      if (en_fit.theta(static_cast<Eigen::Index>(j)) != 0.0) wanted.push_back(names[j]);
    }
    if (wanted.empty()) wanted = split.design.feature_names;
  } else if (features == "all") {
    wanted = split.design.feature_names;
  } else {
    throw std::runtime_error("--features must be from-en or all");
  }

  lmm::LmmDesign d;
  const Eigen::MatrixXd Xsel = select_features(split.design, wanted);
  // Only train-side rows enter the fit.
  d.X.resize(split.X_train.rows(), Xsel.cols() + 1);
  d.X.col(0).setOnes();
  {
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < split.design.X.rows(); ++i) {
      const auto& patient = split.design.cluster_names[static_cast<std::size_t>(
          split.design.patient_index[static_cast<std::size_t>(i)])];
      if (split.plan.is_train(patient)) {
        d.X.row(r).tail(Xsel.cols()) = Xsel.row(i);
        ++r;
      }
    }
  }
  d.y = split.y_train;
  d.cluster = split.groups_train;
  const auto fit = lmm::fit_reml(d);
  const auto lrt = lmm::lrt_random_effect(d);

  std::vector<std::string> lmm_names = {"(intercept)"};
  lmm_names.insert(lmm_names.end(), wanted.begin(), wanted.end());

  std::ostringstream vc;
  vc << "sigma_u2 " << csv::format_double(fit.sigma_u2) << "\n"
     << "sigma_e2 " << csv::format_double(fit.sigma_e2) << "\n"
     << "icc " << csv::format_double(fit.icc) << "\n"
     << "reml_loglik " << csv::format_double(fit.reml_loglik) << "\n"
     << "lrt_stat " << csv::format_double(lrt.stat) << "\n"
     << "lrt_p_value " << csv::format_double(lrt.p_value) << "\n";
  csv::write_file_atomic(args.out_dir + "/variance_components.txt", vc.str());

  std::string fe = "feature,estimate,se\n";
  for (std::size_t j = 0; j < lmm_names.size(); ++j) {
    fe += csv::format_row({lmm_names[j],
                           csv::format_double(fit.beta(static_cast<Eigen::Index>(j))),
                           csv::format_double(fit.beta_se(static_cast<Eigen::Index>(j)))});
  }
  csv::write_file_atomic(args.out_dir + "/fixed_effects.csv", fe);

  std::string blups = "patient_id,blup\n";
  for (std::size_t c = 0; c < split.train_clusters.size(); ++c) {
    blups += csv::format_row({split.train_clusters[c], csv::format_double(fit.blups[c])});
  }
  csv::write_file_atomic(args.out_dir + "/blups.csv", blups);
  csv::write_file_atomic(args.out_dir + "/model_lmm.txt",
                         lmm::lmm_to_text(fit, lmm_names, split.train_clusters));

  std::cout << "sigma_u2 " << fit.sigma_u2 << ", sigma_e2 " << fit.sigma_e2
            << ", ICC " << fit.icc << ", LRT p " << lrt.p_value << "\n";
  return 0;
}

int cmd_evaluate(const CommonDataArgs& args, const std::string& en_path,
                 const std::string& rf_path, const std::string& lmm_path) {
  const auto split = load_and_split(args);
  std::vector<harness::SeverityReport> reports;

  if (!en_path.empty()) {
    std::vector<std::string> names;
    const auto fit = elastic_net::en_from_text(slurp(en_path), names);
    const Eigen::MatrixXd Xsel = select_features(split.design, names);
    Eigen::MatrixXd X_val(split.X_val.rows(), Xsel.cols());
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < split.design.X.rows(); ++i) {
      const auto& patient = split.design.cluster_names[static_cast<std::size_t>(
          split.design.patient_index[static_cast<std::size_t>(i)])];
      if (!split.plan.is_train(patient)) X_val.row(r++) = Xsel.row(i);
    }
    reports.push_back(harness::severity_report(to_std(fit.predict(X_val)),
                                               split.levels_val, "elastic_net"));
  }
  if (!lmm_path.empty()) {
    std::vector<std::string> names, clusters;
    const auto fit = lmm::lmm_from_text(slurp(lmm_path), names, clusters);
    std::vector<std::string> predictors(names.begin() + 1, names.end());  // after intercept
    const Eigen::MatrixXd Xsel = select_features(split.design, predictors);
    Eigen::MatrixXd X_val(split.X_val.rows(), Xsel.cols() + 1);
    X_val.col(0).setOnes();
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < split.design.X.rows(); ++i) {
      const auto& patient = split.design.cluster_names[static_cast<std::size_t>(
          split.design.patient_index[static_cast<std::size_t>(i)])];
      if (!split.plan.is_train(patient)) X_val.row(r++).tail(Xsel.cols()) = Xsel.row(i);
    }
    const std::vector<int> unknown(static_cast<std::size_t>(X_val.rows()), -1);
    reports.push_back(harness::severity_report(to_std(lmm::predict(fit, X_val, unknown).fitted),
                                               split.levels_val, "lmm"));
  }
  if (!rf_path.empty()) {
    std::vector<std::string> names;
    const auto fit = forest::forest_from_text(slurp(rf_path), names);
    const Eigen::MatrixXd Xsel = select_features(split.design, names);
    Eigen::MatrixXd X_val(split.X_val.rows(), Xsel.cols());
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < split.design.X.rows(); ++i) {
      const auto& patient = split.design.cluster_names[static_cast<std::size_t>(
          split.design.patient_index[static_cast<std::size_t>(i)])];
      if (!split.plan.is_train(patient)) X_val.row(r++) = Xsel.row(i);
    }
    reports.push_back(harness::severity_report(to_std(forest::predict(fit, X_val)),
                                               split.levels_val, "random_forest"));
  }
  if (reports.empty()) throw std::runtime_error("evaluate: no model files given");

  csv::write_file_atomic(args.out_dir + "/comparison.csv", harness::comparison_csv(reports));
  for (const auto& rep : reports) {
    std::cout << rep.model_label << " overall RMSE " << rep.overall_rmse << "\n";
  }
  return 0;
}

int cmd_cnn_check(double fd_step) {
  const auto spec = cnn::build_reference_network();
  const auto shapes = cnn::propagate_shapes(spec);
  std::cout << "layer            output shape\n";
  std::cout << "input            " << spec.in_channels << "x" << spec.in_h << "x"
            << spec.in_w << "\n";
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    std::ostringstream row;
    row << layer.name;
    while (row.str().size() < 17) row << ' ';
    row << shapes[i].c << "x" << shapes[i].h << "x" << shapes[i].w;
    std::cout << row.str() << "\n";
  }

  std::cout << "\ngradient check (desk-scale network, double precision)\n";
  cnn::Network net(cnn::build_desk_network(20, 30), 42);
  const auto data = cnn::make_synthetic_images(8, 20, 30, 7);
  const auto res = cnn::gradient_check(net, data.images, data.labels, fd_step);
  std::cout << "parameters checked " << res.checked << "\n";
  std::cout << "max relative error " << res.max_rel_error << " (worst: "
            << res.worst_param << ")\n";
  const bool ok = res.max_rel_error < 1e-4;
  std::cout << (ok ? "PASS" : "FAIL") << " threshold 1e-4\n";
  return ok ? 0 : 1;
}

int cmd_cnn_train(int n_images, int epochs, int batch, int height, int width,
                  std::uint64_t seed, const std::string& out_dir) {
  const auto all = cnn::make_synthetic_images(n_images, height, width, seed);
  // 80/20 train/validation split by index order (images are i.i.d.).
  const int n_train = std::max(1, n_images * 4 / 5);
  cnn::LabeledImages train_set, val_set;
  train_set.images = cnn::Tensor(n_train, 1, height, width);
  val_set.images = cnn::Tensor(n_images - n_train, 1, height, width);
  const std::size_t stride = static_cast<std::size_t>(height) * width;
  for (int i = 0; i < n_images; ++i) {
    auto& dst = i < n_train ? train_set : val_set;
    const int row = i < n_train ? i : i - n_train;
    std::copy_n(all.images.v.begin() + static_cast<std::ptrdiff_t>(i * stride), stride,
                dst.images.v.begin() + static_cast<std::ptrdiff_t>(row * stride));
    dst.labels.push_back(all.labels[static_cast<std::size_t>(i)]);
  }

  cnn::Network net(cnn::build_desk_network(height, width), Rng(seed).child(1).seed());
  const auto history = cnn::train(net, train_set, val_set, epochs, batch, {}, seed);
  csv::write_file_atomic(out_dir + "/history.csv", history.to_csv());

  if (!history.epochs.empty()) {
    const auto& last = history.epochs.back();
    std::cout << "epoch " << last.epoch << ": train_loss " << last.train_loss
              << ", train_acc " << last.train_acc << ", val_loss " << last.val_loss
              << ", val_acc " << last.val_acc << "\n";
    const auto probs = net.forward(val_set.images, false);
    std::cout << "validation grade RMSE (expectation) "
              << cnn::rmse_from_probs(probs, val_set.labels, cnn::GradeMode::expectation)
              << ", (argmax) "
              << cnn::rmse_from_probs(probs, val_set.labels, cnn::GradeMode::argmax) << "\n";
  }
  std::cout << "wrote " << out_dir << "/history.csv\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::uint64_t seed_override, bool seed_given) {
  harness::PipelineConfig cfg;
  if (!config_path.empty()) cfg = harness::parse_config(slurp(config_path));
  if (seed_given) cfg.seed = seed_override;
  const auto result = harness::run_pipeline(cfg, out_dir);
  std::cout << "baseline RMSE " << result.baseline_rmse << "\n"
            << "elastic_net RMSE " << result.elastic_net.overall_rmse
            << " (lambda " << result.chosen_lambda << ")\n"
            << "random_forest RMSE " << result.random_forest.overall_rmse << "\n"
            << "lmm RMSE " << result.lmm.overall_rmse << "\n"
            << result.files_written.size() << " files in " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Questionnaire-based knee osteoarthritis severity modeling toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  int synth_patients = 400;
  double synth_icc = 0.265;
  std::uint64_t synth_seed = 1;
  std::string synth_out = "out";
  synth->add_option("--patients", synth_patients, "number of patients");
  synth->add_option("--icc", synth_icc, "target intraclass correlation");
  synth->add_option("--seed", synth_seed, "seed");
  synth->add_option("--out", synth_out, "output directory");

  // preprocess / correlate / fits / evaluate share the data args
  CommonDataArgs pre_args, en_args, rf_args, lmm_args, eval_args;
  auto* preprocess = app.add_subcommand("preprocess", "filter columns, split patients, summarize");
  add_common(preprocess, pre_args);

  auto* correlate = app.add_subcommand("correlate", "mixed-type correlation matrix");
  std::string corr_data, corr_schema, corr_out = "out";
  correlate->add_option("--data", corr_data, "cohort CSV")->required();
  correlate->add_option("--schema", corr_schema, "schema file")->required();
  correlate->add_option("--out", corr_out, "output directory");

  auto* fit_en = app.add_subcommand("fit-en", "elastic net with repeated grouped CV");
  add_common(fit_en, en_args);
  double en_alpha = 0.5;
  int en_folds = 10, en_repeats = 5;
  fit_en->add_option("--alpha", en_alpha, "L1/L2 mixing parameter");
  fit_en->add_option("--folds", en_folds, "CV folds");
  fit_en->add_option("--repeats", en_repeats, "CV repeats");

  auto* fit_rf = app.add_subcommand("fit-rf", "random forest regression");
  add_common(fit_rf, rf_args);
  int rf_trees = 100, rf_min_leaf = 5, rf_perms = 20;
  std::string rf_mtry = "auto";
  fit_rf->add_option("--trees", rf_trees, "number of trees");
  fit_rf->add_option("--mtry", rf_mtry, "features per split: auto (= ceil(p/3)) or a count");
  fit_rf->add_option("--min-leaf", rf_min_leaf, "minimum samples per leaf");
  fit_rf->add_option("--permutations", rf_perms, "importance permutations");

  auto* fit_lmm = app.add_subcommand("fit-lmm", "random-intercept linear mixed model");
  add_common(fit_lmm, lmm_args);
  std::string lmm_features = "from-en", lmm_en_model;
  fit_lmm->add_option("--features", lmm_features, "from-en or all");
  fit_lmm->add_option("--en-model", lmm_en_model, "elastic net model file for from-en");

  auto* evaluate = app.add_subcommand("evaluate", "severity reports for saved models");
  add_common(evaluate, eval_args);
  std::string eval_en, eval_rf, eval_lmm;
  evaluate->add_option("--en", eval_en, "elastic net model file");
  evaluate->add_option("--rf", eval_rf, "random forest model file");
  evaluate->add_option("--lmm", eval_lmm, "lmm model file");

  auto* cnn_check = app.add_subcommand("cnn-check", "shape table and gradient check");
  double fd_step = 1e-5;
  cnn_check->add_option("--step", fd_step, "finite-difference half-step");

  auto* cnn_train = app.add_subcommand("cnn-train", "train the desk-scale network on synthetic images");
  int ct_n = 100, ct_epochs = 30, ct_batch = 10, ct_h = 20, ct_w = 30;
  std::uint64_t ct_seed = 1;
  std::string ct_out = "out";
  cnn_train->add_option("--synthetic", ct_n, "number of synthetic images");
  cnn_train->add_option("--epochs", ct_epochs, "training epochs");
  cnn_train->add_option("--batch", ct_batch, "batch size");
  cnn_train->add_option("--height", ct_h, "image height");
  cnn_train->add_option("--width", ct_w, "image width");
  cnn_train->add_option("--seed", ct_seed, "seed");
  cnn_train->add_option("--out", ct_out, "output directory");

  auto* run = app.add_subcommand("run", "full pipeline: preprocess, correlate, fit, evaluate");
  std::string run_config, run_out = "out";
  std::uint64_t run_seed = 0;
  run->add_option("--config", run_config, "key-value config file");
  run->add_option("--out", run_out, "output directory");
  auto* run_seed_opt = run->add_option("--seed", run_seed, "override config seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(synth_patients, synth_icc, synth_seed, synth_out);
    if (*preprocess) return cmd_preprocess(pre_args);
    if (*correlate) return cmd_correlate(corr_data, corr_schema, corr_out);
    if (*fit_en) return cmd_fit_en(en_args, en_alpha, en_folds, en_repeats);
    if (*fit_rf) {
      const int mtry = rf_mtry == "auto" ? 0 : std::stoi(rf_mtry);
      return cmd_fit_rf(rf_args, rf_trees, mtry, rf_min_leaf, rf_perms);
    }
    if (*fit_lmm) return cmd_fit_lmm(lmm_args, lmm_features, lmm_en_model);
    if (*evaluate) return cmd_evaluate(eval_args, eval_en, eval_rf, eval_lmm);
    if (*cnn_check) return cmd_cnn_check(fd_step);
    if (*cnn_train) return cmd_cnn_train(ct_n, ct_epochs, ct_batch, ct_h, ct_w, ct_seed, ct_out);
    if (*run) return cmd_run(run_config, run_out, run_seed, run_seed_opt->count() > 0);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
