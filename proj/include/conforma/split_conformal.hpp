#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "conforma/dataset.hpp"
#include "conforma/scoring.hpp"

namespace conforma {

/// Normalized rank of test_score within {test_score} union cal_scores,
/// counting ties with <=. The test score counts itself, so the result lies
/// on the grid {k/(1+n_cal) : 1 <= k <= 1+n_cal}.
double standard_pvalue_inlier(double test_score, std::span<const double> cal_scores);

/// P-value for the opposite null: (1 + #{cal <= score}) / (1 + n_cal).
/// The tested score is not a member of the compared set; the +1 is explicit.
double standard_pvalue_outlier(double score, std::span<const double> cal_scores);

/// Inlier-side p-values for every member of an augmented block of scores
/// (calibration inliers plus one test point, in any order): element i gets
/// #{j : s_j <= s_i} / (1 + n_cal) with n_cal = scores.size() - 1.
std::vector<double> augmented_u0(std::span<const double> augmented_scores);

/// median(inlier_side) - median(outlier_side); the median of an even-length
/// list is the mean of its central pair.
double median_diff_criterion(std::span<const double> scores_on_inlier_side,
                             std::span<const double> scores_on_outlier_side);

/// Median of a value list (copies and sorts).
double median_of(std::span<const double> values);

/// Per-test-point p-value bundle. u0/u1 are the preliminary p-values of the
/// test point, r = u0/u1 exactly, u the recalibrated output; the model
/// fields record which toolbox entries were selected ("<name>" or
/// "<name>:flip").
struct PValueRecord {
  double u0 = 1.0;
  double u1 = 1.0;
  double r = 1.0;
  double u = 1.0;
  std::string selected_model_0;
  std::string selected_model_1;
};

enum class CombineRule {
  ratio,    // r = u0 / u1 (integrative)
  u0_only,  // r = u0 (ensemble benchmark: selection only, no reweighting)
};

struct SplitOptions {
  CombineRule combine = CombineRule::ratio;
  /// When positive, adds a seeded uniform perturbation of at most
  /// tie_jitter times the smallest positive score gap to every score before
  /// ranking. Off by default; the rank formulas already handle ties
  /// conservatively.
  double tie_jitter = 0.0;
  std::uint64_t jitter_seed = 0;
};

/// Pre-computed conformity scores for a block of test points: everything
/// conditional calibration needs, with no way to reach back to the models.
/// Sign-flipped twins are already expanded as separate entries.
struct SplitScoreTable {
  struct Entry {
    std::string name;
    std::vector<double> cal0;  // scores on the inlier calibration block
    std::vector<double> cal1;  // scores on the outlier calibration block
    std::vector<double> test;  // scores on the test points
  };
  std::vector<Entry> m0;  // inlier-side candidates
  std::vector<Entry> m1;  // outlier-side candidates
  CombineRule combine = CombineRule::ratio;

  int n_cal0() const { return m0.empty() ? 0 : static_cast<int>(m0.front().cal0.size()); }
  int n_cal1() const { return m1.empty() ? 0 : static_cast<int>(m1.front().cal1.size()); }
  int n_test() const { return m0.empty() ? 0 : static_cast<int>(m0.front().test.size()); }
};

/// Fixed model choice per test point (entry indexes into a table's m0/m1),
/// used by the frozen-selection mode of conditional calibration.
struct TableSelection {
  std::vector<int> m0_idx;
  std::vector<int> m1_idx;
};

/// Integrative p-values for every test point of a score table, with
/// automatic model selection. extra_cal_test appends one test point's
/// scores (by index) to the inlier calibration block, as conditional
/// calibration requires; pass -1 for none. When frozen is non-null,
/// selection is skipped and the given per-test entries are used instead.
std::vector<PValueRecord> table_pvalues(const SplitScoreTable& table, int extra_cal_test = -1,
                                        const TableSelection* frozen = nullptr);

/// Split-conformal engine with automatic model selection. Construction
/// trains every inlier-side candidate on d0_train (binary candidates on
/// d0_train plus d1_train) and every outlier-side candidate on d1_train,
/// then caches calibration scores. Each one-class candidate contributes its
/// sign-flipped twin, sharing the underlying fit.
///
/// pvalue(x) scores every candidate on {x} union d0_cal and on d1_cal and
/// picks the pair by the median difference between the two groups: the
/// inlier-side candidate maximizes it (inliers high, labeled outliers low)
/// and the outlier-side candidate minimizes it (its conformity score should
/// be smallest on inliers). Ties break by name. Selection sees only
/// unordered score multisets, so it is invariant to permutations of
/// {x} union d0_cal.
///
/// With an empty outlier calibration block the engine degrades gracefully:
/// u1 is identically 1 (u reduces to the standard p-value of the u0 ranks)
/// and selection falls back to the lexicographically first candidate.
/// Binary candidates are dropped when d1_train is empty.
class SplitEngine {
 public:
  SplitEngine(const Dataset& data, const SplitPartition& part, const Toolbox& toolbox,
              SplitOptions opt = {});

  PValueRecord pvalue(std::span<const double> x) const;
  std::vector<PValueRecord> pvalue_batch(const Matrix& tests) const;

  /// Conformity-score table for the given test block (for conditional
  /// calibration; contains no model objects).
  SplitScoreTable score_table(const Matrix& tests) const;

  int n_cal0() const { return d0_cal_.rows(); }
  int n_cal1() const { return d1_cal_.rows(); }
  std::vector<std::string> entry_names_m0() const;
  std::vector<std::string> entry_names_m1() const;

 private:
  struct Entry {
    std::string name;
    FittedPtr model;
    std::vector<double> cal0;
    std::vector<double> cal1;
  };

  void apply_jitter(SplitScoreTable& table) const;

  std::vector<Entry> m0_, m1_;
  Matrix d0_cal_, d1_cal_;
  SplitOptions opt_;
};

/// Single fixed model pair, no selection: the basic integrative procedure.
/// model0/model1 must be fitted on data disjoint from the calibration
/// blocks and the test point (caller's responsibility).
PValueRecord integrative_pvalue(const FittedScore& model0, const FittedScore& model1,
                                const Matrix& d0_cal_features, const Matrix& d1_cal_features,
                                std::span<const double> test_feature,
                                CombineRule combine = CombineRule::ratio);

}  // namespace conforma
