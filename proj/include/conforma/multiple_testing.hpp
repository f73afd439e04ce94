#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "conforma/scoring.hpp"
#include "conforma/split_conformal.hpp"

namespace conforma {

/// Rejection set plus the intermediate quantities of conditional
/// calibration (empty for the plain step-up procedures).
struct RejectionResult {
  std::vector<int> rejected;                // ascending test indices
  std::vector<double> per_test_thresholds;  // conditional calibration: alpha * R~_i / m
  bool pruned = false;
  std::vector<double> epsilons;  // pruning uniforms (empty when step 3 never ran)
  std::vector<int> r_tilde;      // R~_i per test
};

/// Benjamini-Hochberg step-up at level alpha: reject the k* smallest
/// p-values where k* = max{k : p_(k) <= k alpha / m}; ties at the threshold
/// are kept together.
RejectionResult bh(std::span<const double> pvalues, double alpha);

/// BH with Storey's null-proportion correction at threshold lambda:
/// pi0 = (1 + #{p > lambda}) / (m (1 - lambda)), clipped to (0, 1],
/// then BH at level alpha / pi0.
RejectionResult storey_bh(std::span<const double> pvalues, double alpha, double lambda = 0.5);

/// Benjamini-Yekutieli: BH at level alpha / H_m, H_m = sum_{k<=m} 1/k.
RejectionResult by(std::span<const double> pvalues, double alpha);

enum class CcSelection {
  faithful,  // re-run model selection for every perturbed calibration set
  frozen,    // reuse the models selected for the unperturbed p-values
};

/// Conditional calibration for split integrative p-values. Operates purely
/// on pre-computed conformity scores:
///   step 1: for each test i, recompute every other test's p-value with the
///           inlier calibration block extended by i, plant a zero at i, and
///           let R~_i be the BH rejection count of that vector;
///   step 2: keep R+ = {i : u(X_i) <= alpha R~_i / m}; if |R+| >= R~_i for
///           all kept i, return R+;
///   step 3: otherwise draw per-test uniforms eps_i (derived from seed and
///           i, so the stream is schedule-independent), set
///           R = max{r : #{i in R+ : eps_i <= r / R~_i} >= r}, and return
///           {i in R+ : eps_i <= R / R~_i}.
RejectionResult conditional_calibration_split(const SplitScoreTable& table, double alpha,
                                              std::uint64_t seed,
                                              CcSelection selection = CcSelection::faithful);

struct TcvCcStats {
  int inlier_side_fits = 0;   // m * K0
  int outlier_side_fits = 0;  // K1, shared across tests
};

/// Conditional calibration for TCV+ integrative p-values. For each test i
/// one transductive state is built over the inlier pool d0 + {i} (K0
/// refits); the same state yields both the exact p-value u(X_i) and the
/// perturbed p-values u~_i(X_j), in which the other test point is scored
/// against the pool cross-validation+ style. Steps 2 and 3 as in the split
/// version. The outlier-side fold models are fit once and shared.
RejectionResult conditional_calibration_tcv(const Matrix& d0, const Matrix& d1,
                                            const Matrix& tests, const ModelSpec& model0,
                                            const ModelSpec& model1, int K0, int K1, double alpha,
                                            std::uint64_t seed, TcvCcStats* stats = nullptr);

/// Realized false discovery proportion and power of a rejection set against
/// ground-truth labels (0 = inlier/null, 1 = outlier).
std::pair<double, double> fdp_power(std::span<const int> rejected,
                                    std::span<const int> true_labels);

/// mean(u1 values) * log(n1 + 1); below 1 flags that outlier-informed
/// weighting is expected to help.
double informativeness_ratio(std::span<const double> u1_values_on_null_inliers, int n1);

}  // namespace conforma
