#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "conforma/matrix.hpp"

namespace conforma {

/// One observation: a finite feature vector plus a binary label
/// (0 = inlier, 1 = outlier).
struct LabeledSample {
  std::vector<double> features;
  int label = 0;
};

/// An ordered collection of labeled samples sharing one feature dimension.
/// Immutable after construction apart from push(); all downstream
/// procedures treat it as read-only.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Matrix x, std::vector<int> y);

  void push(const LabeledSample& s);

  int size() const { return x_.rows(); }
  int dim() const { return x_.cols(); }
  const Matrix& features() const { return x_; }
  const std::vector<int>& labels() const { return y_; }
  std::span<const double> features_of(int i) const { return x_.row(i); }
  int label_of(int i) const { return y_[i]; }

  std::vector<int> inlier_indices() const;
  std::vector<int> outlier_indices() const;
  int count_label(int label) const;

  /// Feature rows for the given sample indices.
  Matrix gather(std::span<const int> idx) const { return x_.gather(idx); }

  bool operator==(const Dataset& other) const = default;

 private:
  void validate_row(std::span<const double> row, int label) const;

  Matrix x_;
  std::vector<int> y_;
};

/// Disjoint train/calibration index sets for inliers and outliers.
struct SplitPartition {
  std::vector<int> d0_train;
  std::vector<int> d0_cal;
  std::vector<int> d1_train;
  std::vector<int> d1_cal;
  std::uint64_t seed = 0;
};

/// Randomly partition a dataset into train/calibration blocks per label.
/// Train sizes are floor(frac * count); the remainder calibrates.
/// Deterministic given (dataset, fracs, seed).
/// Throws ConfigError("insufficient inliers") when the inlier calibration
/// block would be empty.
SplitPartition split(const Dataset& data, double train_frac_inlier,
                     double train_frac_outlier, std::uint64_t seed);

/// Assignment of an index set to K folds whose sizes differ by at most 1.
struct FoldAssignment {
  std::map<int, int> fold_of;
  int K = 0;
  std::uint64_t seed = 0;

  std::vector<int> members(int fold) const;
  std::vector<int> indices() const;
};

/// Deterministically assign |indices| >= K >= 2 indices to K balanced folds.
FoldAssignment assign_folds(std::span<const int> indices, int K, std::uint64_t seed);

/// Finite Gaussian mixture: X = sqrt(a) * V + W with V standard normal and
/// W drawn uniformly from n_components frozen center vectors sampled once
/// from the uniform cube [-component_box, component_box]^d.
///
/// The centers are a pure function of seed; the sampling noise comes from
/// noise_seed when nonzero (else from seed as well). Replicated experiments
/// keep seed fixed (frozen component set) and vary noise_seed.
struct GaussianMixtureConfig {
  int n = 0;
  int d = 0;
  double a = 1.0;
  int n_components = 1;
  double component_box = 3.0;
  std::uint64_t seed = 0;
  std::uint64_t noise_seed = 0;
};

/// The frozen component centers implied by a config (pure function of the
/// config; repeated calls return identical centers).
Matrix mixture_centers(const GaussianMixtureConfig& cfg);

/// Draw n_inlier samples from the inlier config and n_outlier from the
/// outlier config. The two configs must describe the same frozen component
/// set (same d, n_components, component_box, seed); they may differ only in
/// the scale parameter a.
Dataset gen_gaussian_mixture(const GaussianMixtureConfig& inlier_cfg,
                             const GaussianMixtureConfig& outlier_cfg,
                             int n_inlier, int n_outlier);

/// Logistic-link label model: X standard multivariate normal; Y | X = x is
/// Bernoulli with P(Y=1|x) = z1 / (z0 + z1), z0 = exp(x' beta0),
/// z1 = exp(gamma + x' beta1). The intercept gamma is calibrated by Monte
/// Carlo bisection so the expected outlier fraction hits the target.
struct LogisticModelConfig {
  int n = 0;
  int d = 0;
  double beta_variance = 1.0;
  double target_outlier_frac = 0.5;
  int mc_samples = 10000;
  double tol = 0.01;
  std::uint64_t seed = 0;
  std::uint64_t noise_seed = 0;  // 0: draw sample noise from seed
};

/// The frozen coefficient vectors (beta0; beta1) implied by a config.
Matrix logistic_betas(const LogisticModelConfig& cfg);

/// Calibrate the class-1 intercept so that the Monte Carlo estimate of the
/// outlier fraction is within tol of target_frac. betas is the 2 x d matrix
/// (beta0; beta1). Throws NumericError on bracket failure or when 100
/// bisection steps do not converge.
double calibrate_intercept(const Matrix& betas, double target_frac,
                           int mc_samples, double tol, std::uint64_t seed);

/// Draw from the logistic model with a precalibrated intercept (no
/// calibration step); replicated experiments calibrate once and reuse.
Dataset sample_logistic_model(const LogisticModelConfig& cfg, double gamma);

Dataset gen_logistic_model(const LogisticModelConfig& cfg);

/// CSV with header x1,...,xd,y; the label column is last and must be 0 or 1.
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& data, const std::string& path);

}  // namespace conforma
