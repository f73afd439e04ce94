#include "conforma/multiple_testing.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <numeric>

#include "conforma/errors.hpp"
#include "conforma/parallel.hpp"
#include "conforma/rng.hpp"
#include "conforma/tcv_plus.hpp"

namespace conforma {

namespace {

void validate_pvalues(std::span<const double> p, double alpha) {
  if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("fdr: alpha must lie in (0,1)");
  for (double v : p) {
    if (std::isnan(v) || v < 0.0 || v > 1.0) throw NumericError("fdr: p-value outside [0,1]");
  }
}

RejectionResult step_up(std::span<const double> p, double level) {
  RejectionResult res;
  const int m = static_cast<int>(p.size());
  if (m == 0) return res;
  std::vector<double> sorted(p.begin(), p.end());
  std::sort(sorted.begin(), sorted.end());
  double threshold = -1.0;
  for (int k = m; k >= 1; --k) {
    if (sorted[k - 1] <= k * level / m) {
      threshold = sorted[k - 1];
      break;
    }
  }
  if (threshold < 0.0) return res;
  for (int i = 0; i < m; ++i) {
    if (p[i] <= threshold) res.rejected.push_back(i);
  }
  return res;
}

}  // namespace

RejectionResult bh(std::span<const double> pvalues, double alpha) {
  validate_pvalues(pvalues, alpha);
  return step_up(pvalues, alpha);
}

RejectionResult storey_bh(std::span<const double> pvalues, double alpha, double lambda) {
  validate_pvalues(pvalues, alpha);
  if (lambda <= 0.0 || lambda >= 1.0) throw ConfigError("storey_bh: lambda must lie in (0,1)");
  const int m = static_cast<int>(pvalues.size());
  if (m == 0) return {};
  int above = 0;
  for (double v : pvalues) above += v > lambda ? 1 : 0;
  double pi0 = (1.0 + above) / (m * (1.0 - lambda));
  pi0 = std::min(pi0, 1.0);
  return step_up(pvalues, alpha / pi0);
}

RejectionResult by(std::span<const double> pvalues, double alpha) {
  validate_pvalues(pvalues, alpha);
  const int m = static_cast<int>(pvalues.size());
  if (m == 0) return {};
  double harmonic = 0.0;
  for (int k = 1; k <= m; ++k) harmonic += 1.0 / k;
  return step_up(pvalues, alpha / harmonic);
}

namespace {

// Steps 2-3 shared by the split and TCV+ conditional calibration variants.
RejectionResult cc_finish(const std::vector<double>& u_hat, const std::vector<int>& r_tilde,
                          double alpha, std::uint64_t seed) {
  const int m = static_cast<int>(u_hat.size());
  RejectionResult res;
  res.r_tilde = r_tilde;
  res.per_test_thresholds.resize(m);
  std::vector<int> r_plus;
  for (int i = 0; i < m; ++i) {
    res.per_test_thresholds[i] = alpha * r_tilde[i] / m;
    if (u_hat[i] <= res.per_test_thresholds[i]) r_plus.push_back(i);
  }

  bool consistent = true;
  for (int i : r_plus) {
    if (static_cast<int>(r_plus.size()) < r_tilde[i]) {
      consistent = false;
      break;
    }
  }
  if (consistent) {
    res.rejected = r_plus;
    return res;
  }

  // Step 3: randomized pruning. eps_i derives from (seed, i) so the stream
  // does not depend on evaluation order.
  res.pruned = true;
  res.epsilons.resize(m, 0.0);
  Rng root(seed);
  for (int i : r_plus) {
    res.epsilons[i] = root.child(static_cast<std::uint64_t>(i)).uniform_open();
  }
  int R = 0;
  for (int r = static_cast<int>(r_plus.size()); r >= 1; --r) {
    int satisfied = 0;
    for (int i : r_plus) {
      if (res.epsilons[i] <= static_cast<double>(r) / r_tilde[i]) ++satisfied;
    }
    if (satisfied >= r) {
      R = r;
      break;
    }
  }
  for (int i : r_plus) {
    if (res.epsilons[i] <= static_cast<double>(R) / r_tilde[i]) res.rejected.push_back(i);
  }
  return res;
}

}  // namespace

RejectionResult conditional_calibration_split(const SplitScoreTable& table, double alpha,
                                              std::uint64_t seed, CcSelection selection) {
  if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("fdr: alpha must lie in (0,1)");
  const int m = table.n_test();
  if (m == 0) return {};

  const std::vector<PValueRecord> base = table_pvalues(table);
  std::vector<double> u_hat(m);
  for (int i = 0; i < m; ++i) u_hat[i] = base[i].u;

  TableSelection frozen;
  if (selection == CcSelection::frozen) {
    frozen.m0_idx.resize(m);
    frozen.m1_idx.resize(m);
    auto find_entry = [](const std::vector<SplitScoreTable::Entry>& side,
                         const std::string& name) {
      for (int e = 0; e < static_cast<int>(side.size()); ++e) {
        if (side[e].name == name) return e;
      }
      return 0;
    };
    for (int i = 0; i < m; ++i) {
      frozen.m0_idx[i] = find_entry(table.m0, base[i].selected_model_0);
      frozen.m1_idx[i] = find_entry(table.m1, base[i].selected_model_1);
    }
  }

  std::vector<int> r_tilde(m, 0);
  parallel_for(m, [&](int i) {
    const std::vector<PValueRecord> perturbed =
        table_pvalues(table, i, selection == CcSelection::frozen ? &frozen : nullptr);
    std::vector<double> vec(m);
    for (int j = 0; j < m; ++j) vec[j] = j == i ? 0.0 : perturbed[j].u;
    r_tilde[i] = static_cast<int>(bh(vec, alpha).rejected.size());
  });

  return cc_finish(u_hat, r_tilde, alpha, seed);
}

RejectionResult conditional_calibration_tcv(const Matrix& d0, const Matrix& d1,
                                            const Matrix& tests, const ModelSpec& model0,
                                            const ModelSpec& model1, int K0, int K1, double alpha,
                                            std::uint64_t seed, TcvCcStats* stats) {
  if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("fdr: alpha must lie in (0,1)");
  const int m = tests.rows();
  if (m == 0) return {};

  std::atomic<int> fits0{0}, fits1{0};
  auto counted = [](FitFn fn, std::atomic<int>& counter) {
    return FitFn([fn = std::move(fn), &counter](const Matrix& rows) {
      counter.fetch_add(1, std::memory_order_relaxed);
      return fn(rows);
    });
  };
  const FitFn fit0 = counted(model0.family == ModelFamily::binary ? binary_fitter(model0, d1)
                                                                  : one_class_fitter(model0),
                             fits0);
  const FitFn fit1 = counted(one_class_fitter(model1), fits1);

  Rng root(seed);
  // One fold-seed tag shared by every pool: the fold maps still differ
  // across pools because the assignment is canonical in the pool rows.
  const std::uint64_t fold_seed = root.child(7001).next_u64();
  const auto outlier_side = std::make_shared<const TcvOutlierSide>(
      d1, fit1, K1, root.child(7002).next_u64());

  std::vector<double> u_hat(m);
  std::vector<int> r_tilde(m, 0);

  struct PerTest {
    std::vector<double> r_pool;  // scale-free pool ratios, sorted
    std::unique_ptr<TcvState> state;
  };
  std::vector<PerTest> per_test(m);

  parallel_for(m, [&](int i) {
    per_test[i].state =
        std::make_unique<TcvState>(d0, tests.row(i), fit0, outlier_side, K0, fold_seed);
    const TcvState& st = *per_test[i].state;
    u_hat[i] = st.integrative(CombineRule::ratio);
    std::vector<double> r_pool(st.n0() + 1);
    for (int q = 0; q <= st.n0(); ++q) {
      r_pool[q] = st.u0_self_count(q) / st.u1_member(q);
    }
    std::sort(r_pool.begin(), r_pool.end());
    per_test[i].r_pool = std::move(r_pool);
  });

  parallel_for(m, [&](int i) {
    const TcvState& st = *per_test[i].state;
    const int pool_size = st.n0() + 1;
    std::vector<double> vec(m, 0.0);
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      const double r_ext = (1.0 + st.u0_external_count(tests.row(j))) / st.u1(tests.row(j));
      const auto below = std::upper_bound(per_test[i].r_pool.begin(), per_test[i].r_pool.end(),
                                          r_ext) -
                         per_test[i].r_pool.begin();
      vec[j] = (1.0 + static_cast<double>(below)) / (1.0 + pool_size);
    }
    r_tilde[i] = static_cast<int>(bh(vec, alpha).rejected.size());
  });

  if (stats) {
    stats->inlier_side_fits = fits0.load();
    stats->outlier_side_fits = fits1.load();
  }
  return cc_finish(u_hat, r_tilde, alpha, seed);
}

std::pair<double, double> fdp_power(std::span<const int> rejected,
                                    std::span<const int> true_labels) {
  int false_rejections = 0;
  int true_rejections = 0;
  for (int i : rejected) {
    if (true_labels[i] == 0) {
      ++false_rejections;
    } else {
      ++true_rejections;
    }
  }
  int outliers = 0;
  for (int l : true_labels) outliers += l;
  const double fdp = rejected.empty() ? 0.0
                                      : static_cast<double>(false_rejections) /
                                            static_cast<double>(rejected.size());
  const double power = outliers == 0 ? 0.0
                                     : static_cast<double>(true_rejections) /
                                           static_cast<double>(outliers);
  return {fdp, power};
}

double informativeness_ratio(std::span<const double> u1_values_on_null_inliers, int n1) {
  if (n1 < 1) throw ConfigError("informativeness_ratio: n1 must be >= 1");
  if (u1_values_on_null_inliers.empty()) {
    throw std::invalid_argument("informativeness_ratio: empty value list");
  }
  double mean = 0.0;
  for (double v : u1_values_on_null_inliers) mean += v;
  mean /= static_cast<double>(u1_values_on_null_inliers.size());
  return mean * std::log(static_cast<double>(n1) + 1.0);
}

}  // namespace conforma
