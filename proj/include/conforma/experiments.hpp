#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conforma/csv.hpp"
#include "conforma/dataset.hpp"
#include "conforma/multiple_testing.hpp"
#include "conforma/scoring.hpp"

namespace conforma {

/// Synthetic data source for an experiment. Kinds:
///   gaussian_mixture - shared frozen component set; inliers/outliers differ
///                      in the scale parameter a
///   logistic         - standard normal features, logistic-link labels with
///                      a calibrated intercept
///   csv              - fixed labeled table; replicates resample the
///                      split/test assignment
struct GeneratorSpec {
  std::string kind = "gaussian_mixture";
  int d = 20;
  double a_inlier = 0.7;
  double a_outlier = 1.0;
  int n_components = 50;
  double component_box = 3.0;
  /// When true the outliers get their own frozen component set instead of
  /// sharing the inliers' (translated classes rather than nested scales).
  bool separate_components = false;
  double beta_variance = 3.0;
  double target_outlier_frac = 0.5;
  int mc_samples = 10000;
  double frac_tol = 0.02;
  std::string csv_path;
};

/// Knobs for every experiment in the harness. Defaults are desk-scale: each
/// study finishes in minutes on one core; the original paper-scale settings
/// stay reachable through the config file.
struct ExperimentConfig {
  GeneratorSpec generator;
  std::vector<ModelSpec> toolbox;  // empty: the native default toolbox

  int n_inliers = 100;
  int n_outliers = 50;
  double train_frac = 0.5;
  int test_size = 200;
  double test_outlier_frac = 0.5;

  std::vector<std::string> methods;  // experiment-specific defaults when empty
  double alpha = 0.1;
  double storey_lambda = 0.5;
  double fixed_threshold = 0.1;  // greedy demo rejection threshold
  std::string pvalue_method = "integrative";  // integrative | ensemble
  std::string cc_selection = "faithful";      // faithful | frozen

  int replicates = 100;
  std::uint64_t seed = 1;
  int K0 = 5;
  int K1 = 5;

  std::vector<int> model_counts = {1, 10, 25, 50};    // greedy demo sweep
  std::vector<int> n0_grid = {20, 50, 100};           // correlation study
  int n0_train = 50;
  std::vector<double> bandwidth_grid = {0.5, 1.0, 2.0, 4.0, 16.0};  // power study
  std::vector<int> n1_grid = {10, 50};

  int n_classes = 3;  // prediction sets
  double class_separation = 4.0;
  std::string predset_model = "naive_bayes";
  bool label_conditional = false;

  int threads = 0;
  std::string out;  // CSV output path; empty = return only
};

/// One labeled dataset drawn from the configured generator.
Dataset generate_labeled(const ExperimentConfig& cfg, int n_inlier, int n_outlier,
                         std::uint64_t noise_seed);

/// Empirical P(u <= alpha) for a null test point, per method
/// (algorithm1 = fixed single model pair, algorithm2 = toolbox selection,
/// tcv = K-fold transductive selection).
/// CSV: method,alpha,rate,stderr,replicates
CsvTable run_validity(const ExperimentConfig& cfg);

/// FDR/power of the configured step-up and conditional-calibration methods
/// applied to integrative p-values, one row per (method, replicate).
/// CSV: method,alpha,rep,rejections,fdp,power,pruned
CsvTable run_fdr_power(const ExperimentConfig& cfg);

/// Greedy model picking versus integrative selection at a fixed rejection
/// threshold, swept over the number of seed-duplicated stochastic models.
/// CSV: n_models,method,tpr,fpr,fpr_stderr,replicates
CsvTable run_greedy_demo(const ExperimentConfig& cfg);

/// Pairwise correlation between p-values of two test points sharing the
/// calibration data, as a function of the inlier calibration count.
/// CSV: n0,method,corr,stderr,reference
CsvTable run_correlation(const ExperimentConfig& cfg);

/// Weighted vs unweighted BH power across a score-sharpness sweep (KDE
/// bandwidth scale), with the informativeness ratio per setting.
/// CSV: n1,bandwidth_scale,ratio,power_weighted,power_unweighted,replicates
CsvTable run_power_analysis(const ExperimentConfig& cfg);

/// Split versus K-fold TCV+ integrative p-values on shared data, evaluated
/// with Storey-BH.
/// CSV: method,alpha,rep,rejections,fdp,power,pruned
CsvTable run_tcv_compare(const ExperimentConfig& cfg);

/// BH vs BY vs conditional calibration on a small test set (10 points,
/// half outliers on average).
/// CSV: method,alpha,rep,rejections,fdp,power,pruned
CsvTable run_conditional_calibration_compare(const ExperimentConfig& cfg);

/// One batch of split-conformal p-values for a generated (or CSV) test set.
/// CSV: test_id,u0,u1,r,u,model0,model1
CsvTable run_pvalues_batch(const ExperimentConfig& cfg);

/// One batch of TCV+ p-values.
/// CSV: test_id,u0,u1,r,u,model0,model1,K0,K1
CsvTable run_tcv_batch(const ExperimentConfig& cfg);

/// TCV+ prediction sets on synthetic class blobs.
/// CSV: test_id,labels (semicolon-joined), plus the true label for scoring.
CsvTable run_predset(const ExperimentConfig& cfg);

/// Labeled dataset for the `gen` subcommand.
Dataset run_gen(const ExperimentConfig& cfg);

}  // namespace conforma
