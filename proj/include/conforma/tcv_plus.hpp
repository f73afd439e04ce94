#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "conforma/multiclass.hpp"
#include "conforma/scoring.hpp"
#include "conforma/split_conformal.hpp"

namespace conforma {

/// Fold assignment over the rows of a matrix as a symmetric function of the
/// row multiset: rows are ranked canonically (lexicographic sort), fold
/// labels are dealt to the canonical ranks after a seeded shuffle. Any
/// permutation of the input rows therefore yields the same value-to-fold
/// map, which both the exchangeability argument and the conditional
/// calibration sufficient statistic rely on.
std::vector<int> canonical_folds(const Matrix& rows, int K, std::uint64_t seed);

/// Outlier-side fold state: d1 split into K1 folds, the fold-k model
/// trained on d1 minus fold k, hold-out scores cached. Does not involve any
/// test point, so one instance can be shared across many evaluations.
class TcvOutlierSide {
 public:
  TcvOutlierSide(const Matrix& d1, const FitFn& fit1, int K1, std::uint64_t seed);
  TcvOutlierSide(const Matrix& d1, const FitFn& fit1, std::vector<int> folds1);

  /// Preliminary outlier-side p-value of an arbitrary point: each labeled
  /// outlier's hold-out score is compared with x scored under that
  /// outlier's fold model; (1 + #{<=}) / (1 + n1).
  double u1(std::span<const double> x) const;
  /// Numerator count of u1(x) without the explicit +1.
  int u1_count(std::span<const double> x) const;

  int n1() const { return n1_; }
  int k1() const { return K1_; }
  int fold_of(int j) const { return folds1_[j]; }

 private:
  void build(const Matrix& d1, const FitFn& fit1);

  int n1_ = 0, K1_ = 0;
  std::vector<int> folds1_;
  std::vector<FittedPtr> models_;
  std::vector<std::vector<double>> fold_sorted_;
};

/// Transductive cross-validation+ state for one fixed model pair and one
/// test point. The augmented inlier block d0 + {test} (member n0() is the
/// test point) is split into K0 folds and the fold-k inlier model trains on
/// the block minus fold k, so the test point joins training for K0-1 of the
/// K0 models. Immutable once built.
class TcvState {
 public:
  TcvState(const Matrix& d0, const Matrix& d1, std::span<const double> test_x,
           const FitFn& fit0, const FitFn& fit1, int K0, int K1, std::uint64_t seed);

  /// Shared outlier side (built once, reused across test points).
  TcvState(const Matrix& d0, std::span<const double> test_x, const FitFn& fit0,
           std::shared_ptr<const TcvOutlierSide> outlier, int K0, std::uint64_t seed);

  /// Test hook: explicit fold ids for the augmented block (folds0, size
  /// n0+1 with the test last) and for d1 (folds1, size n1).
  TcvState(const Matrix& d0, const Matrix& d1, std::span<const double> test_x,
           const FitFn& fit0, const FitFn& fit1, std::vector<int> folds0,
           std::vector<int> folds1);

  double u1(std::span<const double> x) const { return outlier_->u1(x); }

  /// Preliminary inlier-side p-value of x under the fold-l model: the count
  /// of augmented hold-out scores <= s0_l(x), divided by 1 + n0. Evaluated
  /// at a member with its own fold the self-comparison counts, so the value
  /// is at least 1/(1+n0).
  double u0(std::span<const double> x, int fold) const;

  /// u0 of augmented member i under its own fold model (cached scores).
  double u0_self(int member) const;
  /// u1 of augmented member i (cached).
  double u1_member(int member) const;
  /// Hold-out score of augmented member i under its own fold model.
  double self_score(int member) const;

  /// The final recalibrated p-value of the test point: the rank of the test
  /// ratio among the inlier members' ratios.
  double integrative(CombineRule combine = CombineRule::ratio) const;

  int n0() const { return n0_; }
  int n1() const { return outlier_->n1(); }
  int k0() const { return K0_; }
  int k1() const { return outlier_->k1(); }
  int fold0_of(int member) const { return folds0_[member]; }
  const TcvOutlierSide& outlier_side() const { return *outlier_; }

  /// Count of augmented members p with hold-out score <= x scored under
  /// p's fold model (cross-validation+ comparison for a point outside the
  /// augmented block; used by conditional calibration).
  int u0_external_count(std::span<const double> x) const;
  int u0_self_count(int member) const;

 private:
  void build_inlier_side(const Matrix& d0, std::span<const double> test_x, const FitFn& fit0);

  int n0_ = 0, K0_ = 0;
  std::vector<int> folds0_;
  std::vector<FittedPtr> models0_;
  std::vector<double> self0_;  // hold-out scores over the augmented block
  std::vector<double> self0_sorted_;
  std::vector<std::vector<double>> fold0_sorted_;
  std::vector<double> member_u1_;
  std::shared_ptr<const TcvOutlierSide> outlier_;
};

/// Algorithm output for a fixed model pair. Requires 2 <= K0 <= n0+1 and
/// 2 <= K1 <= n1.
double tcv_integrative_pvalue(const Matrix& d0, const Matrix& d1,
                              std::span<const double> test_feature, const ModelSpec& model0,
                              const ModelSpec& model1, int K0, int K1, std::uint64_t seed);

/// TCV+ with automatic model selection over a toolbox. One-class candidates
/// contribute sign-flipped twins sharing the per-fold fits; binary
/// candidates join the inlier side, trained per fold on the held-in
/// augmented rows plus all labeled outliers. The inlier-side candidate
/// maximizes the median difference in u0 between the augmented members and
/// the labeled outliers (u0 on an outlier is averaged over fold models);
/// the outlier-side candidate minimizes the corresponding u1 difference.
/// Both criteria see only unordered value multisets.
PValueRecord tcv_with_selection(const Matrix& d0, const Matrix& d1,
                                std::span<const double> test_feature, const Toolbox& toolbox,
                                int K0, int K1, std::uint64_t seed,
                                CombineRule combine = CombineRule::ratio);

/// tcv_with_selection over a block of test points; per-test seeds derive
/// from (seed, test index), so results do not depend on the parallel
/// schedule.
std::vector<PValueRecord> tcv_batch(const Matrix& d0, const Matrix& d1, const Matrix& tests,
                                    const Toolbox& toolbox, int K0, int K1, std::uint64_t seed,
                                    CombineRule combine = CombineRule::ratio);

struct PredictionSetOptions {
  int K = 5;
  double alpha = 0.1;
  std::uint64_t seed = 0;
};

/// Marginal-coverage prediction set: candidate label y survives when the
/// rank-based p-value of the test score among the labeled hold-out scores
/// (all models refit on folds of data + {test labeled y}) exceeds alpha.
std::vector<int> tcv_prediction_set(const Matrix& x, std::span<const int> labels, int n_classes,
                                    std::span<const double> test_x, const MulticlassSpec& spec,
                                    const PredictionSetOptions& opt);

/// Label-conditional variant: per candidate y only the class-y rows join
/// the test point in the folds, and the rank is taken within class y. A
/// class with fewer members than K-1 gets a reduced per-class fold count
/// (with a warning on stderr).
std::vector<int> tcv_label_conditional_prediction_set(const Matrix& x,
                                                      std::span<const int> labels, int n_classes,
                                                      std::span<const double> test_x,
                                                      const MulticlassSpec& spec,
                                                      const PredictionSetOptions& opt);

}  // namespace conforma
