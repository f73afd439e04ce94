#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "conforma/matrix.hpp"

namespace conforma {

enum class ModelFamily { one_class, binary };

/// Description of one score model: a registry kind plus parameters. The
/// name is the unique identity inside a toolbox (several instances of the
/// same kind may coexist with different parameters, e.g. reseeded forests).
struct ModelSpec {
  std::string name;
  std::string kind;  // empty means same as name
  ModelFamily family = ModelFamily::one_class;
  std::map<std::string, double> params;

  const std::string& effective_kind() const { return kind.empty() ? name : kind; }
};

/// A fitted conformity score. Immutable and safe to share across threads.
/// Convention: larger score means more inlier-like. Each model documents
/// how it maps onto this convention.
class FittedScore {
 public:
  virtual ~FittedScore() = default;
  virtual double score(std::span<const double> x) const = 0;
};

using FittedPtr = std::shared_ptr<const FittedScore>;

/// Sign-flipped view of a fitted score: score(x) -> -score(x).
/// flip(flip(m)) collapses back to m.
FittedPtr flip(FittedPtr inner);

/// Evaluate a fitted score on every row (parallel over rows).
std::vector<double> score_batch(const FittedScore& model, const Matrix& rows);

/// Fit a one-class model on inlier feature rows.
///
/// Native kinds (all with order-invariant fits; minimum sample counts in
/// parentheses):
///   knn              - negative distance to the k-th nearest training row
///                      (param k, default 5, clamped to n; min 1 row)
///   mahalanobis      - negative Mahalanobis distance with ridge-regularized
///                      covariance (param ridge, default 1e-6; min 1 row)
///   kde              - Gaussian product-kernel log-density, per-dimension
///                      Scott's-rule bandwidths (param bandwidth_scale,
///                      default 1; min 1 row)
///   isolation_forest - mean isolation depth over trees (params trees=100,
///                      subsample=256, seed=0; the forest is seeded from a
///                      hash of the training multiset XOR the seed param,
///                      so the fit is order-invariant yet reseedable; min 2
///                      rows)
FittedPtr fit_one_class(const ModelSpec& spec, const Matrix& inlier_rows);

/// Fit a binary model; score(x) estimates P(Y = 0 | x) or a monotone proxy.
///
/// Native kinds:
///   logistic    - L2-regularized logistic regression, deterministic
///                 full-batch descent with backtracking line search
///                 (params l2=1e-4, max_iters=500)
///   naive_bayes - Gaussian naive Bayes posterior for class 0
///   knn_binary  - fraction of class-0 labels among the k nearest rows
///                 (param k, default 5)
///
/// Throws NumericError when only one class is present.
FittedPtr fit_binary(const ModelSpec& spec, const Matrix& rows, std::span<const int> labels);

/// Closure fitting a fixed spec on whatever rows it is handed; used by the
/// cross-validation machinery, which refits the same spec per fold. Binary
/// specs close over a fixed outlier block appended to every training set.
using FitFn = std::function<FittedPtr(const Matrix&)>;
FitFn one_class_fitter(const ModelSpec& spec);
FitFn binary_fitter(const ModelSpec& spec, Matrix outlier_rows);

/// Registered collection of candidate score models. Names must be unique
/// and at least one model must be present before use. Sign-flipped twins of
/// one-class models are expanded downstream (they share the underlying fit).
class Toolbox {
 public:
  void add(ModelSpec spec);

  const std::vector<ModelSpec>& models() const { return models_; }
  std::vector<ModelSpec> one_class_models() const;
  std::vector<ModelSpec> binary_models() const;
  bool empty() const { return models_.empty(); }

  /// knn + mahalanobis + kde + isolation_forest one-class models and
  /// logistic + naive_bayes + knn_binary binary models, default parameters.
  static Toolbox native_default();

  /// The four one-class models only.
  static Toolbox native_one_class();

 private:
  std::vector<ModelSpec> models_;
};

}  // namespace conforma
