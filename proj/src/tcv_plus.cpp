#include "conforma/tcv_plus.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "conforma/errors.hpp"
#include "conforma/parallel.hpp"
#include "conforma/rng.hpp"

namespace conforma {

namespace {

int count_leq_sorted(const std::vector<double>& sorted, double threshold) {
  return static_cast<int>(std::upper_bound(sorted.begin(), sorted.end(), threshold) -
                          sorted.begin());
}

Matrix rows_excluding_fold(const Matrix& all, std::span<const int> folds, int fold) {
  Matrix out(0, 0);
  for (int i = 0; i < all.rows(); ++i) {
    if (folds[i] != fold) out.push_row(all.row(i));
  }
  return out;
}

void check_fold_counts(int K0, int n0, int K1, int n1) {
  if (K0 < 2 || K0 > n0 + 1) {
    throw ConfigError("tcv: K0 must satisfy 2 <= K0 <= |D0|+1");
  }
  if (K1 < 2 || K1 > n1) {
    throw ConfigError("tcv: K1 must satisfy 2 <= K1 <= |D1|");
  }
}

}  // namespace

std::vector<int> canonical_folds(const Matrix& rows, int K, std::uint64_t seed) {
  const int n = rows.rows();
  if (K < 1 || K > n) throw ConfigError("canonical_folds: need 1 <= K <= #rows");
  const std::vector<int> order = canonical_order(rows);
  std::vector<int> deal(n);
  for (int i = 0; i < n; ++i) deal[i] = i % K;
  Rng rng(seed);
  rng.shuffle(deal);
  std::vector<int> folds(n);
  for (int rank = 0; rank < n; ++rank) folds[order[rank]] = deal[rank];
  return folds;
}

// ---------------------------------------------------------------------------
// TcvOutlierSide
// ---------------------------------------------------------------------------

TcvOutlierSide::TcvOutlierSide(const Matrix& d1, const FitFn& fit1, int K1, std::uint64_t seed) {
  if (K1 < 2 || K1 > d1.rows()) throw ConfigError("tcv: K1 must satisfy 2 <= K1 <= |D1|");
  K1_ = K1;
  folds1_ = canonical_folds(d1, K1, seed);
  build(d1, fit1);
}

TcvOutlierSide::TcvOutlierSide(const Matrix& d1, const FitFn& fit1, std::vector<int> folds1)
    : folds1_(std::move(folds1)) {
  if (static_cast<int>(folds1_.size()) != d1.rows()) {
    throw std::invalid_argument("TcvOutlierSide: fold vector size does not match data");
  }
  K1_ = *std::max_element(folds1_.begin(), folds1_.end()) + 1;
  build(d1, fit1);
}

void TcvOutlierSide::build(const Matrix& d1, const FitFn& fit1) {
  n1_ = d1.rows();
  models_.resize(K1_);
  parallel_for(K1_, [&](int k) { models_[k] = fit1(rows_excluding_fold(d1, folds1_, k)); });
  fold_sorted_.assign(K1_, {});
  for (int j = 0; j < n1_; ++j) {
    fold_sorted_[folds1_[j]].push_back(models_[folds1_[j]]->score(d1.row(j)));
  }
  for (auto& f : fold_sorted_) std::sort(f.begin(), f.end());
}

int TcvOutlierSide::u1_count(std::span<const double> x) const {
  int total = 0;
  for (int k = 0; k < K1_; ++k) {
    total += count_leq_sorted(fold_sorted_[k], models_[k]->score(x));
  }
  return total;
}

double TcvOutlierSide::u1(std::span<const double> x) const {
  return (1.0 + u1_count(x)) / (1.0 + n1_);
}

// ---------------------------------------------------------------------------
// TcvState
// ---------------------------------------------------------------------------

TcvState::TcvState(const Matrix& d0, const Matrix& d1, std::span<const double> test_x,
                   const FitFn& fit0, const FitFn& fit1, int K0, int K1, std::uint64_t seed) {
  check_fold_counts(K0, d0.rows(), K1, d1.rows());
  K0_ = K0;
  Rng root(seed);
  Matrix augmented = d0;
  augmented.push_row(test_x);
  folds0_ = canonical_folds(augmented, K0, root.child(0).next_u64());
  outlier_ = std::make_shared<TcvOutlierSide>(d1, fit1, K1, root.child(1).next_u64());
  build_inlier_side(d0, test_x, fit0);
}

TcvState::TcvState(const Matrix& d0, std::span<const double> test_x, const FitFn& fit0,
                   std::shared_ptr<const TcvOutlierSide> outlier, int K0, std::uint64_t seed)
    : outlier_(std::move(outlier)) {
  if (K0 < 2 || K0 > d0.rows() + 1) throw ConfigError("tcv: K0 must satisfy 2 <= K0 <= |D0|+1");
  K0_ = K0;
  Matrix augmented = d0;
  augmented.push_row(test_x);
  folds0_ = canonical_folds(augmented, K0, Rng(seed).child(0).next_u64());
  build_inlier_side(d0, test_x, fit0);
}

TcvState::TcvState(const Matrix& d0, const Matrix& d1, std::span<const double> test_x,
                   const FitFn& fit0, const FitFn& fit1, std::vector<int> folds0,
                   std::vector<int> folds1)
    : folds0_(std::move(folds0)) {
  if (static_cast<int>(folds0_.size()) != d0.rows() + 1) {
    throw std::invalid_argument("TcvState: fold vector size does not match data");
  }
  K0_ = *std::max_element(folds0_.begin(), folds0_.end()) + 1;
  outlier_ = std::make_shared<TcvOutlierSide>(d1, fit1, std::move(folds1));
  build_inlier_side(d0, test_x, fit0);
}

void TcvState::build_inlier_side(const Matrix& d0, std::span<const double> test_x,
                                 const FitFn& fit0) {
  n0_ = d0.rows();
  Matrix augmented = d0;
  augmented.push_row(test_x);

  models0_.resize(K0_);
  parallel_for(K0_, [&](int k) { models0_[k] = fit0(rows_excluding_fold(augmented, folds0_, k)); });

  self0_.resize(n0_ + 1);
  for (int i = 0; i <= n0_; ++i) self0_[i] = models0_[folds0_[i]]->score(augmented.row(i));
  self0_sorted_ = self0_;
  std::sort(self0_sorted_.begin(), self0_sorted_.end());
  fold0_sorted_.assign(K0_, {});
  for (int i = 0; i <= n0_; ++i) fold0_sorted_[folds0_[i]].push_back(self0_[i]);
  for (auto& f : fold0_sorted_) std::sort(f.begin(), f.end());

  member_u1_.resize(n0_ + 1);
  for (int i = 0; i <= n0_; ++i) member_u1_[i] = outlier_->u1(augmented.row(i));
}

double TcvState::u0(std::span<const double> x, int fold) const {
  if (fold < 0 || fold >= K0_) throw std::invalid_argument("tcv u0: invalid fold id");
  const double s = models0_[fold]->score(x);
  return count_leq_sorted(self0_sorted_, s) / (1.0 + n0_);
}

int TcvState::u0_self_count(int member) const {
  return count_leq_sorted(self0_sorted_, self0_[member]);
}

double TcvState::u0_self(int member) const { return u0_self_count(member) / (1.0 + n0_); }

double TcvState::u1_member(int member) const { return member_u1_[member]; }

double TcvState::self_score(int member) const { return self0_[member]; }

int TcvState::u0_external_count(std::span<const double> x) const {
  int total = 0;
  for (int k = 0; k < K0_; ++k) {
    total += count_leq_sorted(fold0_sorted_[k], models0_[k]->score(x));
  }
  return total;
}

double TcvState::integrative(CombineRule combine) const {
  auto ratio = [&](int member) {
    const double u0v = u0_self(member);
    return combine == CombineRule::ratio ? u0v / member_u1_[member] : u0v;
  };
  const double r_test = ratio(n0_);
  int below = 0;
  for (int i = 0; i < n0_; ++i) below += ratio(i) <= r_test ? 1 : 0;
  return (1.0 + below) / (1.0 + n0_);
}

double tcv_integrative_pvalue(const Matrix& d0, const Matrix& d1,
                              std::span<const double> test_feature, const ModelSpec& model0,
                              const ModelSpec& model1, int K0, int K1, std::uint64_t seed) {
  const FitFn fit0 = model0.family == ModelFamily::binary ? binary_fitter(model0, d1)
                                                          : one_class_fitter(model0);
  TcvState state(d0, d1, test_feature, fit0, one_class_fitter(model1), K0, K1, seed);
  return state.integrative(CombineRule::ratio);
}

// ---------------------------------------------------------------------------
// Model selection
// ---------------------------------------------------------------------------

namespace {

// Per-candidate views for tcv_with_selection: every candidate is fit on the
// same fold split; sign-flipped twins reuse the fits with negated scores.
struct InlierCandidate {
  std::string name;
  std::vector<double> u0_members;   // per augmented member
  std::vector<double> u0_outliers;  // per labeled outlier (fold-averaged)
};

struct OutlierCandidate {
  std::string name;
  std::vector<double> u1_members;
  std::vector<double> u1_outliers;
};

double apply_sign(double s, bool flipped) { return flipped ? -s : s; }

template <typename Candidate>
int select_candidate(const std::vector<Candidate>& candidates,
                     std::vector<double> Candidate::* member_values,
                     std::vector<double> Candidate::* outlier_values, bool maximize) {
  int best = 0;
  double best_value = maximize ? -std::numeric_limits<double>::infinity()
                               : std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(candidates.size()); ++i) {
    const auto& c = candidates[i];
    const double v = median_of(c.*member_values) - median_of(c.*outlier_values);
    const bool better = maximize ? v > best_value : v < best_value;
    if (better || (v == best_value && c.name < candidates[best].name)) {
      best_value = v;
      best = i;
    }
  }
  return best;
}

}  // namespace

PValueRecord tcv_with_selection(const Matrix& d0, const Matrix& d1,
                                std::span<const double> test_feature, const Toolbox& toolbox,
                                int K0, int K1, std::uint64_t seed, CombineRule combine) {
  if (toolbox.empty()) throw ConfigError("tcv_with_selection: empty toolbox");
  check_fold_counts(K0, d0.rows(), K1, d1.rows());
  const int n0 = d0.rows();
  const int n1 = d1.rows();
  Matrix augmented = d0;
  augmented.push_row(test_feature);

  Rng root(seed);
  const std::vector<int> folds0 = canonical_folds(augmented, K0, root.child(0).next_u64());
  const std::vector<int> folds1 = canonical_folds(d1, K1, root.child(1).next_u64());

  // Inlier-side candidates: one-class models (plus flips) and binary models.
  std::vector<InlierCandidate> m0;
  std::vector<std::vector<double>> m0_self;  // hold-out scores per candidate (sign applied)
  {
    std::vector<std::pair<ModelSpec, FitFn>> base;
    for (const ModelSpec& spec : toolbox.one_class_models()) {
      base.emplace_back(spec, one_class_fitter(spec));
    }
    for (const ModelSpec& spec : toolbox.binary_models()) {
      base.emplace_back(spec, binary_fitter(spec, d1));
    }
    std::vector<std::vector<FittedPtr>> fits(base.size(), std::vector<FittedPtr>(K0));
    parallel_for(static_cast<int>(base.size()) * K0, [&](int i) {
      const int b = i / K0;
      const int k = i % K0;
      fits[b][k] = base[b].second(rows_excluding_fold(augmented, folds0, k));
    });
    for (std::size_t b = 0; b < base.size(); ++b) {
      std::vector<double> self(n0 + 1);
      for (int i = 0; i <= n0; ++i) self[i] = fits[b][folds0[i]]->score(augmented.row(i));
      // Fold scores on the labeled outliers, used only for selection.
      std::vector<std::vector<double>> outlier_scores(K0, std::vector<double>(n1));
      for (int k = 0; k < K0; ++k)
        for (int j = 0; j < n1; ++j) outlier_scores[k][j] = fits[b][k]->score(d1.row(j));

      const int twins = base[b].first.family == ModelFamily::one_class ? 2 : 1;
      for (int t = 0; t < twins; ++t) {
        const bool flipped = t == 1;
        InlierCandidate c;
        c.name = base[b].first.name + (flipped ? ":flip" : "");
        std::vector<double> signed_self(n0 + 1);
        for (int i = 0; i <= n0; ++i) signed_self[i] = apply_sign(self[i], flipped);
        std::vector<double> sorted = signed_self;
        std::sort(sorted.begin(), sorted.end());
        c.u0_members.resize(n0 + 1);
        for (int i = 0; i <= n0; ++i) {
          c.u0_members[i] = count_leq_sorted(sorted, signed_self[i]) / (1.0 + n0);
        }
        c.u0_outliers.assign(n1, 0.0);
        for (int j = 0; j < n1; ++j) {
          double total = 0.0;
          for (int k = 0; k < K0; ++k) {
            total += count_leq_sorted(sorted, apply_sign(outlier_scores[k][j], flipped)) /
                     (1.0 + n0);
          }
          c.u0_outliers[j] = total / K0;
        }
        m0.push_back(std::move(c));
        m0_self.push_back(std::move(signed_self));
      }
    }
  }

  // Outlier-side candidates: one-class models plus flips.
  std::vector<OutlierCandidate> m1;
  {
    const std::vector<ModelSpec> specs = toolbox.one_class_models();
    std::vector<std::vector<FittedPtr>> fits(specs.size(), std::vector<FittedPtr>(K1));
    parallel_for(static_cast<int>(specs.size()) * K1, [&](int i) {
      const int b = i / K1;
      const int k = i % K1;
      fits[b][k] = fit_one_class(specs[b], rows_excluding_fold(d1, folds1, k));
    });
    for (std::size_t b = 0; b < specs.size(); ++b) {
      std::vector<double> self(n1);
      for (int j = 0; j < n1; ++j) self[j] = fits[b][folds1[j]]->score(d1.row(j));
      std::vector<std::vector<double>> member_scores(K1, std::vector<double>(n0 + 1));
      std::vector<std::vector<double>> outlier_scores(K1, std::vector<double>(n1));
      for (int k = 0; k < K1; ++k) {
        for (int i = 0; i <= n0; ++i) member_scores[k][i] = fits[b][k]->score(augmented.row(i));
        for (int j = 0; j < n1; ++j) outlier_scores[k][j] = fits[b][k]->score(d1.row(j));
      }
      for (int t = 0; t < 2; ++t) {
        const bool flipped = t == 1;
        OutlierCandidate c;
        c.name = specs[b].name + (flipped ? ":flip" : "");
        std::vector<std::vector<double>> fold_sorted(K1);
        for (int j = 0; j < n1; ++j) {
          fold_sorted[folds1[j]].push_back(apply_sign(self[j], flipped));
        }
        for (auto& f : fold_sorted) std::sort(f.begin(), f.end());
        auto u1_at = [&](const std::vector<std::vector<double>>& scores, int col) {
          int total = 0;
          for (int k = 0; k < K1; ++k) {
            total += count_leq_sorted(fold_sorted[k], apply_sign(scores[k][col], flipped));
          }
          return (1.0 + total) / (1.0 + n1);
        };
        c.u1_members.resize(n0 + 1);
        for (int i = 0; i <= n0; ++i) c.u1_members[i] = u1_at(member_scores, i);
        c.u1_outliers.resize(n1);
        for (int j = 0; j < n1; ++j) c.u1_outliers[j] = u1_at(outlier_scores, j);
        m1.push_back(std::move(c));
      }
    }
  }

  const int best0 = select_candidate(m0, &InlierCandidate::u0_members,
                                     &InlierCandidate::u0_outliers, /*maximize=*/true);
  const int best1 = select_candidate(m1, &OutlierCandidate::u1_members,
                                     &OutlierCandidate::u1_outliers, /*maximize=*/false);
  const InlierCandidate& c0 = m0[best0];
  const OutlierCandidate& c1 = m1[best1];

  auto ratio = [&](int member) {
    return combine == CombineRule::ratio ? c0.u0_members[member] / c1.u1_members[member]
                                         : c0.u0_members[member];
  };
  const double r_test = ratio(n0);
  int below = 0;
  for (int i = 0; i < n0; ++i) below += ratio(i) <= r_test ? 1 : 0;

  PValueRecord rec;
  rec.u0 = c0.u0_members[n0];
  rec.u1 = c1.u1_members[n0];
  rec.r = r_test;
  rec.u = (1.0 + below) / (1.0 + n0);
  rec.selected_model_0 = c0.name;
  rec.selected_model_1 = c1.name;
  return rec;
}

std::vector<PValueRecord> tcv_batch(const Matrix& d0, const Matrix& d1, const Matrix& tests,
                                    const Toolbox& toolbox, int K0, int K1, std::uint64_t seed,
                                    CombineRule combine) {
  check_fold_counts(K0, d0.rows(), K1, d1.rows());
  std::vector<PValueRecord> out(tests.rows());
  Rng root(seed);
  parallel_for(tests.rows(), [&](int t) {
    out[t] = tcv_with_selection(d0, d1, tests.row(t), toolbox, K0, K1,
                                root.child(static_cast<std::uint64_t>(t)).next_u64(), combine);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Prediction sets (multi-class)
// ---------------------------------------------------------------------------

namespace {

std::vector<int> canonical_folds_labeled(const Matrix& rows, std::span<const int> labels, int K,
                                         std::uint64_t seed) {
  const int n = rows.rows();
  const std::vector<int> order = canonical_order(rows, labels);
  std::vector<int> deal(n);
  for (int i = 0; i < n; ++i) deal[i] = i % K;
  Rng rng(seed);
  rng.shuffle(deal);
  std::vector<int> folds(n);
  for (int rank = 0; rank < n; ++rank) folds[order[rank]] = deal[rank];
  return folds;
}

void validate_predset_inputs(const Matrix& x, std::span<const int> labels, int n_classes,
                             const PredictionSetOptions& opt) {
  if (n_classes < 2) throw ConfigError("prediction set: need at least 2 classes");
  if (x.rows() != static_cast<int>(labels.size())) {
    throw std::invalid_argument("prediction set: row/label count mismatch");
  }
  if (opt.K < 2 || opt.K > x.rows() + 1) {
    throw ConfigError("prediction set: K exceeds fold feasibility");
  }
  if (opt.alpha < 0.0 || opt.alpha > 1.0) throw ConfigError("prediction set: alpha outside [0,1]");
}

}  // namespace

std::vector<int> tcv_prediction_set(const Matrix& x, std::span<const int> labels, int n_classes,
                                    std::span<const double> test_x, const MulticlassSpec& spec,
                                    const PredictionSetOptions& opt) {
  validate_predset_inputs(x, labels, n_classes, opt);
  const int n = x.rows();
  Matrix augmented = x;
  augmented.push_row(test_x);

  std::vector<int> included;
  Rng root(opt.seed);
  for (int y = 0; y < n_classes; ++y) {
    std::vector<int> aug_labels(labels.begin(), labels.end());
    aug_labels.push_back(y);
    const std::vector<int> folds =
        canonical_folds_labeled(augmented, aug_labels, opt.K, root.child(y).next_u64());

    std::vector<FittedMcPtr> models(opt.K);
    parallel_for(opt.K, [&](int k) {
      Matrix train(0, 0);
      std::vector<int> train_y;
      for (int i = 0; i <= n; ++i) {
        if (folds[i] != k) {
          train.push_row(augmented.row(i));
          train_y.push_back(aug_labels[i]);
        }
      }
      models[k] = fit_multiclass(spec, train, train_y, n_classes);
    });

    const double s_test = models[folds[n]]->prob(test_x, y);
    int below = 0;
    for (int i = 0; i < n; ++i) {
      if (models[folds[i]]->prob(augmented.row(i), labels[i]) <= s_test) ++below;
    }
    const double u = (1.0 + below) / (1.0 + n);
    if (u > opt.alpha) included.push_back(y);
  }
  return included;
}

std::vector<int> tcv_label_conditional_prediction_set(const Matrix& x,
                                                      std::span<const int> labels, int n_classes,
                                                      std::span<const double> test_x,
                                                      const MulticlassSpec& spec,
                                                      const PredictionSetOptions& opt) {
  validate_predset_inputs(x, labels, n_classes, opt);
  const int n = x.rows();

  std::vector<int> included;
  Rng root(opt.seed);
  for (int y = 0; y < n_classes; ++y) {
    std::vector<int> class_rows;
    for (int i = 0; i < n; ++i)
      if (labels[i] == y) class_rows.push_back(i);
    const int ny = static_cast<int>(class_rows.size());

    if (ny == 0) {
      // No class members to rank against: u = 1, the label is always kept.
      included.push_back(y);
      continue;
    }

    int K = opt.K;
    if (K > ny + 1) {
      K = ny + 1;
      std::cerr << "tcv_label_conditional_prediction_set: class " << y << " has only " << ny
                << " members; reducing K to " << K << "\n";
    }

    // Fold the class-y rows plus the test point; everything else always
    // stays in training.
    Matrix class_aug(0, 0);
    for (int i : class_rows) class_aug.push_row(x.row(i));
    class_aug.push_row(test_x);
    const std::vector<int> folds = canonical_folds(class_aug, K, root.child(y).next_u64());

    std::vector<FittedMcPtr> models(K);
    parallel_for(K, [&](int k) {
      Matrix train(0, 0);
      std::vector<int> train_y;
      for (int i = 0; i < n; ++i) {
        if (labels[i] != y) {
          train.push_row(x.row(i));
          train_y.push_back(labels[i]);
        }
      }
      for (int c = 0; c <= ny; ++c) {
        if (folds[c] != k) {
          train.push_row(class_aug.row(c));
          train_y.push_back(y);
        }
      }
      models[k] = fit_multiclass(spec, train, train_y, n_classes);
    });

    const double s_test = models[folds[ny]]->prob(test_x, y);
    int below = 0;
    for (int c = 0; c < ny; ++c) {
      if (models[folds[c]]->prob(class_aug.row(c), y) <= s_test) ++below;
    }
    const double u = (1.0 + below) / (1.0 + ny);
    if (u > opt.alpha) included.push_back(y);
  }
  return included;
}

}  // namespace conforma
