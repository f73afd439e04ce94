#include "conforma/split_conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "conforma/errors.hpp"
#include "conforma/parallel.hpp"
#include "conforma/rng.hpp"

namespace conforma {

namespace {

void require_finite(double v, const char* what) {
  if (std::isnan(v)) throw NumericError(std::string(what) + ": NaN score");
}

int count_leq(std::span<const double> values, double threshold) {
  int c = 0;
  for (double v : values) c += v <= threshold ? 1 : 0;
  return c;
}

double median_sorted(std::span<const double> sorted) {
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

}  // namespace

double standard_pvalue_inlier(double test_score, std::span<const double> cal_scores) {
  if (cal_scores.empty()) throw std::invalid_argument("standard_pvalue_inlier: empty calibration");
  require_finite(test_score, "standard_pvalue_inlier");
  for (double s : cal_scores) require_finite(s, "standard_pvalue_inlier");
  const int count = count_leq(cal_scores, test_score) + 1;  // the test score counts itself
  return static_cast<double>(count) / (1.0 + static_cast<double>(cal_scores.size()));
}

double standard_pvalue_outlier(double score, std::span<const double> cal_scores) {
  if (cal_scores.empty()) throw std::invalid_argument("standard_pvalue_outlier: empty calibration");
  require_finite(score, "standard_pvalue_outlier");
  for (double s : cal_scores) require_finite(s, "standard_pvalue_outlier");
  const int count = 1 + count_leq(cal_scores, score);
  return static_cast<double>(count) / (1.0 + static_cast<double>(cal_scores.size()));
}

std::vector<double> augmented_u0(std::span<const double> augmented_scores) {
  if (augmented_scores.empty()) throw std::invalid_argument("augmented_u0: empty block");
  for (double s : augmented_scores) require_finite(s, "augmented_u0");
  std::vector<double> sorted(augmented_scores.begin(), augmented_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double denom = static_cast<double>(augmented_scores.size());  // 1 + n_cal
  std::vector<double> out(augmented_scores.size());
  for (std::size_t i = 0; i < augmented_scores.size(); ++i) {
    const auto rank =
        std::upper_bound(sorted.begin(), sorted.end(), augmented_scores[i]) - sorted.begin();
    out[i] = static_cast<double>(rank) / denom;
  }
  return out;
}

double median_of(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("median_of: empty list");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return median_sorted(v);
}

double median_diff_criterion(std::span<const double> scores_on_inlier_side,
                             std::span<const double> scores_on_outlier_side) {
  return median_of(scores_on_inlier_side) - median_of(scores_on_outlier_side);
}

namespace {

// One candidate's scores laid out over the augmented geometry of a single
// test point: base calibration block, optional appended calibration score,
// and the test score itself.
struct EntryView {
  const std::string* name;
  std::span<const double> cal0;
  std::span<const double> cal1;
  double extra = 0.0;
  bool has_extra = false;
  double test = 0.0;
};

double selection_criterion(const EntryView& e, std::vector<double>& scratch) {
  scratch.assign(e.cal0.begin(), e.cal0.end());
  scratch.push_back(e.test);
  if (e.has_extra) scratch.push_back(e.extra);
  std::sort(scratch.begin(), scratch.end());
  const double inlier_median = median_sorted(scratch);
  scratch.assign(e.cal1.begin(), e.cal1.end());
  std::sort(scratch.begin(), scratch.end());
  return inlier_median - median_sorted(scratch);
}

// Pick the candidate by the median-difference criterion; the inlier-side
// model maximizes it (inliers should score high, labeled outliers low)
// while the outlier-side model minimizes it (its score should be smallest
// on the inlier block). Ties break lexicographically by name. With an
// empty outlier block the criterion is undefined and the lexicographically
// first candidate is used.
int select_entry(std::span<const EntryView> entries, bool maximize,
                 std::vector<double>& scratch) {
  int best = 0;
  const bool no_outliers = entries.front().cal1.empty();
  double best_value = maximize ? -std::numeric_limits<double>::infinity()
                               : std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(entries.size()); ++i) {
    if (no_outliers) {
      if (*entries[i].name < *entries[best].name) best = i;
      continue;
    }
    const double v = selection_criterion(entries[i], scratch);
    const bool better = maximize ? v > best_value : v < best_value;
    if (better || (v == best_value && *entries[i].name < *entries[best].name)) {
      best_value = v;
      best = i;
    }
  }
  return best;
}

int count_leq_sorted(const std::vector<double>& sorted, double threshold) {
  return static_cast<int>(std::upper_bound(sorted.begin(), sorted.end(), threshold) -
                          sorted.begin());
}

PValueRecord pvalue_from_views(std::span<const EntryView> m0, std::span<const EntryView> m1,
                               CombineRule combine, const int* frozen0, const int* frozen1) {
  std::vector<double> scratch;
  const int best0 = frozen0 ? *frozen0 : select_entry(m0, /*maximize=*/true, scratch);
  const EntryView& e0 = m0[best0];
  const EntryView* e1 = nullptr;
  std::string m1_name = "none";
  if (!m1.empty()) {
    const int best1 = frozen1 ? *frozen1 : select_entry(m1, /*maximize=*/false, scratch);
    e1 = &m1[best1];
    m1_name = *e1->name;
  }

  const int n_members = static_cast<int>(e0.cal0.size()) + (e0.has_extra ? 1 : 0);
  const double denom = 1.0 + static_cast<double>(n_members);

  std::vector<double> cal0_sorted(e0.cal0.begin(), e0.cal0.end());
  std::sort(cal0_sorted.begin(), cal0_sorted.end());
  std::vector<double> cal1_sorted;
  if (e1) {
    cal1_sorted.assign(e1->cal1.begin(), e1->cal1.end());
    std::sort(cal1_sorted.begin(), cal1_sorted.end());
  }
  auto u1_of = [&](double s) {
    if (cal1_sorted.empty()) return 1.0;
    return (1.0 + count_leq_sorted(cal1_sorted, s)) /
           (1.0 + static_cast<double>(cal1_sorted.size()));
  };

  // u0 of any augmented-block member: its rank among the whole block.
  auto u0_count = [&](double s) {
    int c = count_leq_sorted(cal0_sorted, s);
    if (e0.has_extra && e0.extra <= s) ++c;
    return c;
  };
  const double u0_test = (u0_count(e0.test) + 1) / denom;
  const double u1_test = e1 ? u1_of(e1->test) : 1.0;

  auto combine_r = [combine](double u0, double u1) {
    return combine == CombineRule::ratio ? u0 / u1 : u0;
  };
  const double r_test = combine_r(u0_test, u1_test);

  int below = 0;
  auto member_r = [&](double s0, double s1) {
    const double u0 = (u0_count(s0) + (e0.test <= s0 ? 1 : 0)) / denom;
    const double u1 = e1 ? u1_of(s1) : 1.0;
    return combine_r(u0, u1);
  };
  for (std::size_t i = 0; i < e0.cal0.size(); ++i) {
    const double s1 = e1 ? e1->cal0[i] : 0.0;
    if (member_r(e0.cal0[i], s1) <= r_test) ++below;
  }
  if (e0.has_extra) {
    if (member_r(e0.extra, e1 ? e1->extra : 0.0) <= r_test) ++below;
  }

  PValueRecord rec;
  rec.u0 = u0_test;
  rec.u1 = u1_test;
  rec.r = r_test;
  rec.u = (1.0 + below) / denom;
  rec.selected_model_0 = *e0.name;
  rec.selected_model_1 = m1_name;
  return rec;
}

std::vector<EntryView> views_for_test(const SplitScoreTable& table, bool m0_side, int test_idx,
                                      int extra_cal_test) {
  const auto& entries = m0_side ? table.m0 : table.m1;
  std::vector<EntryView> views;
  views.reserve(entries.size());
  for (const auto& e : entries) {
    EntryView v;
    v.name = &e.name;
    v.cal0 = e.cal0;
    v.cal1 = e.cal1;
    v.test = e.test[test_idx];
    if (extra_cal_test >= 0) {
      v.extra = e.test[extra_cal_test];
      v.has_extra = true;
    }
    views.push_back(v);
  }
  return views;
}

}  // namespace

std::vector<PValueRecord> table_pvalues(const SplitScoreTable& table, int extra_cal_test,
                                        const TableSelection* frozen) {
  if (table.m0.empty()) throw std::invalid_argument("table_pvalues: no inlier-side candidates");
  const int m = table.n_test();
  std::vector<PValueRecord> out(m);
  for (int j = 0; j < m; ++j) {
    const auto v0 = views_for_test(table, true, j, extra_cal_test);
    const auto v1 = views_for_test(table, false, j, extra_cal_test);
    const int* f0 = frozen ? &frozen->m0_idx[j] : nullptr;
    const int* f1 = frozen && !v1.empty() ? &frozen->m1_idx[j] : nullptr;
    out[j] = pvalue_from_views(v0, v1, table.combine, f0, f1);
  }
  return out;
}

SplitEngine::SplitEngine(const Dataset& data, const SplitPartition& part, const Toolbox& toolbox,
                         SplitOptions opt)
    : opt_(opt) {
  if (toolbox.empty()) throw ConfigError("SplitEngine: empty toolbox");
  d0_cal_ = data.gather(part.d0_cal);
  d1_cal_ = data.gather(part.d1_cal);
  const Matrix d0_train = data.gather(part.d0_train);
  const Matrix d1_train = data.gather(part.d1_train);

  Matrix binary_train = d0_train;
  std::vector<int> binary_labels(d0_train.rows(), 0);
  for (int i = 0; i < d1_train.rows(); ++i) {
    binary_train.push_row(d1_train.row(i));
    binary_labels.push_back(1);
  }

  auto add_expanded = [this](std::vector<Entry>& side, const std::string& name, FittedPtr fitted) {
    Entry natural{name, fitted, score_batch(*fitted, d0_cal_), score_batch(*fitted, d1_cal_)};
    Entry twin{name + ":flip", flip(fitted), {}, {}};
    twin.cal0 = natural.cal0;
    twin.cal1 = natural.cal1;
    for (double& s : twin.cal0) s = -s;
    for (double& s : twin.cal1) s = -s;
    side.push_back(std::move(natural));
    side.push_back(std::move(twin));
  };

  for (const ModelSpec& spec : toolbox.one_class_models()) {
    add_expanded(m0_, spec.name, fit_one_class(spec, d0_train));
    if (d1_train.rows() > 0) {
      add_expanded(m1_, spec.name, fit_one_class(spec, d1_train));
    }
  }
  if (d1_train.rows() > 0) {
    for (const ModelSpec& spec : toolbox.binary_models()) {
      FittedPtr fitted = fit_binary(spec, binary_train, binary_labels);
      m0_.push_back(Entry{spec.name, fitted, score_batch(*fitted, d0_cal_),
                          score_batch(*fitted, d1_cal_)});
    }
  }
  if (m0_.empty()) throw ConfigError("SplitEngine: no usable inlier-side models");
}

std::vector<std::string> SplitEngine::entry_names_m0() const {
  std::vector<std::string> names;
  for (const auto& e : m0_) names.push_back(e.name);
  return names;
}

std::vector<std::string> SplitEngine::entry_names_m1() const {
  std::vector<std::string> names;
  for (const auto& e : m1_) names.push_back(e.name);
  return names;
}

SplitScoreTable SplitEngine::score_table(const Matrix& tests) const {
  SplitScoreTable table;
  table.combine = opt_.combine;
  auto build = [&tests](const std::vector<Entry>& side) {
    std::vector<SplitScoreTable::Entry> out;
    out.reserve(side.size());
    for (const auto& e : side) {
      out.push_back({e.name, e.cal0, e.cal1, score_batch(*e.model, tests)});
    }
    return out;
  };
  table.m0 = build(m0_);
  table.m1 = build(m1_);
  if (opt_.tie_jitter > 0.0) apply_jitter(table);
  return table;
}

void SplitEngine::apply_jitter(SplitScoreTable& table) const {
  auto perturb = [this](std::vector<SplitScoreTable::Entry>& side, std::uint64_t side_tag) {
    for (std::size_t e = 0; e < side.size(); ++e) {
      auto& entry = side[e];
      std::vector<double> all;
      all.insert(all.end(), entry.cal0.begin(), entry.cal0.end());
      all.insert(all.end(), entry.cal1.begin(), entry.cal1.end());
      all.insert(all.end(), entry.test.begin(), entry.test.end());
      std::sort(all.begin(), all.end());
      double gap = std::numeric_limits<double>::infinity();
      for (std::size_t i = 1; i < all.size(); ++i) {
        const double g = all[i] - all[i - 1];
        if (g > 0.0) gap = std::min(gap, g);
      }
      if (!std::isfinite(gap)) gap = 1.0;
      const double eps = opt_.tie_jitter * gap;
      Rng rng = Rng(opt_.jitter_seed).child(side_tag).child(e);
      for (double& s : entry.cal0) s += eps * rng.uniform();
      for (double& s : entry.cal1) s += eps * rng.uniform();
      for (double& s : entry.test) s += eps * rng.uniform();
    }
  };
  perturb(table.m0, 0);
  perturb(table.m1, 1);
}

PValueRecord SplitEngine::pvalue(std::span<const double> x) const {
  Matrix one(0, 0);
  one.push_row(x);
  return pvalue_batch(one).front();
}

std::vector<PValueRecord> SplitEngine::pvalue_batch(const Matrix& tests) const {
  const SplitScoreTable table = score_table(tests);
  const int m = tests.rows();
  std::vector<PValueRecord> out(m);
  parallel_for(m, [&](int j) {
    const auto v0 = views_for_test(table, true, j, -1);
    const auto v1 = views_for_test(table, false, j, -1);
    out[j] = pvalue_from_views(v0, v1, table.combine, nullptr, nullptr);
  });
  return out;
}

PValueRecord integrative_pvalue(const FittedScore& model0, const FittedScore& model1,
                                const Matrix& d0_cal_features, const Matrix& d1_cal_features,
                                std::span<const double> test_feature, CombineRule combine) {
  SplitScoreTable table;
  table.combine = combine;
  Matrix one(0, 0);
  one.push_row(test_feature);
  table.m0.push_back({"model0", score_batch(model0, d0_cal_features),
                      score_batch(model0, d1_cal_features), score_batch(model0, one)});
  table.m1.push_back({"model1", score_batch(model1, d0_cal_features),
                      score_batch(model1, d1_cal_features), score_batch(model1, one)});
  return table_pvalues(table).front();
}

}  // namespace conforma
