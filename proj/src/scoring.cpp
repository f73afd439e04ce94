#include "conforma/scoring.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "conforma/errors.hpp"
#include "conforma/rng.hpp"

namespace conforma {

namespace {

double param_or(const ModelSpec& spec, const std::string& key, double fallback) {
  auto it = spec.params.find(key);
  return it == spec.params.end() ? fallback : it->second;
}

Matrix canonical_copy(const Matrix& rows) {
  const std::vector<int> order = canonical_order(rows);
  return rows.gather(order);
}

void require_rows(const Matrix& rows, int minimum, const std::string& kind) {
  if (rows.rows() < minimum) {
    throw NumericError("fit " + kind + ": needs at least " + std::to_string(minimum) +
                       " training rows, got " + std::to_string(rows.rows()));
  }
}

// ---------------------------------------------------------------------------
// One-class models
// ---------------------------------------------------------------------------

class KnnOneClass final : public FittedScore {
 public:
  KnnOneClass(Matrix train, int k) : train_(std::move(train)), k_(k) {}

  double score(std::span<const double> x) const override {
    std::vector<double> d2(train_.rows());
    for (int i = 0; i < train_.rows(); ++i) d2[i] = euclidean_sq(train_.row(i), x);
    std::nth_element(d2.begin(), d2.begin() + (k_ - 1), d2.end());
    return -std::sqrt(d2[k_ - 1]);
  }

 private:
  Matrix train_;
  int k_;
};

class Mahalanobis final : public FittedScore {
 public:
  Mahalanobis(const Matrix& train, double ridge) {
    const int n = train.rows();
    const int d = train.cols();
    mean_.assign(d, 0.0);
    for (int i = 0; i < n; ++i) {
      auto r = train.row(i);
      for (int j = 0; j < d; ++j) mean_[j] += r[j];
    }
    for (double& m : mean_) m /= n;

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    if (n > 1) {
      Eigen::MatrixXd centered(n, d);
      for (int i = 0; i < n; ++i) {
        auto r = train.row(i);
        for (int j = 0; j < d; ++j) centered(i, j) = r[j] - mean_[j];
      }
      cov = centered.transpose() * centered / static_cast<double>(n - 1);
    }

    double eps = ridge * (cov.trace() > 0.0 ? cov.trace() / d : 1.0);
    if (eps <= 0.0) eps = ridge > 0.0 ? ridge : 1e-12;
    for (int attempt = 0; attempt < 60; ++attempt) {
      llt_.compute(cov + eps * Eigen::MatrixXd::Identity(d, d));
      if (llt_.info() == Eigen::Success) return;
      eps *= 10.0;
    }
    throw NumericError("fit mahalanobis: covariance regularization failed");
  }

  double score(std::span<const double> x) const override {
    Eigen::VectorXd v(static_cast<int>(x.size()));
    for (int j = 0; j < v.size(); ++j) v(j) = x[j] - mean_[j];
    const double q = v.dot(llt_.solve(v));
    return -std::sqrt(std::max(q, 0.0));
  }

 private:
  std::vector<double> mean_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

class GaussianKde final : public FittedScore {
 public:
  GaussianKde(Matrix train, double bandwidth_scale) : train_(std::move(train)) {
    const int n = train_.rows();
    const int d = train_.cols();
    bandwidth_.assign(d, 0.0);
    std::vector<double> mean(d, 0.0);
    for (int i = 0; i < n; ++i) {
      auto r = train_.row(i);
      for (int j = 0; j < d; ++j) mean[j] += r[j];
    }
    for (double& m : mean) m /= n;
    const double scott = std::pow(static_cast<double>(n), -1.0 / (d + 4.0));
    for (int j = 0; j < d; ++j) {
      double ss = 0.0;
      for (int i = 0; i < n; ++i) {
        const double c = train_(i, j) - mean[j];
        ss += c * c;
      }
      const double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
      double h = bandwidth_scale * sd * scott;
      if (h <= 0.0) h = 1e-9 * (1.0 + std::abs(mean[j]));
      bandwidth_[j] = h;
    }
    log_norm_ = -std::log(static_cast<double>(n)) -
                0.5 * d * std::log(2.0 * std::numbers::pi);
    for (double h : bandwidth_) log_norm_ -= std::log(h);
  }

  double score(std::span<const double> x) const override {
    const int n = train_.rows();
    const int d = train_.cols();
    double max_e = -std::numeric_limits<double>::infinity();
    std::vector<double> expo(n);
    for (int i = 0; i < n; ++i) {
      auto r = train_.row(i);
      double q = 0.0;
      for (int j = 0; j < d; ++j) {
        const double z = (x[j] - r[j]) / bandwidth_[j];
        q += z * z;
      }
      expo[i] = -0.5 * q;
      max_e = std::max(max_e, expo[i]);
    }
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(expo[i] - max_e);
    return max_e + std::log(s) + log_norm_;
  }

 private:
  Matrix train_;
  std::vector<double> bandwidth_;
  double log_norm_ = 0.0;
};

/// Isolation forest. Mean isolation depth across trees (with the usual
/// harmonic continuation at unsplit leaves): deep points are hard to
/// isolate, i.e. inlier-like, matching the global score convention.
class IsolationForest final : public FittedScore {
 public:
  IsolationForest(const Matrix& train, int n_trees, int subsample, std::uint64_t user_seed) {
    const int n = train.rows();
    const int s = std::min(subsample, n);
    const int max_depth = static_cast<int>(std::ceil(std::log2(std::max(2, s))));
    const std::uint64_t seed = canonical_hash(train) ^ user_seed;
    trees_.resize(n_trees);
    for (int t = 0; t < n_trees; ++t) {
      Rng rng = Rng(seed).child(static_cast<std::uint64_t>(t));
      std::vector<int> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      rng.shuffle(idx);
      idx.resize(s);
      build(trees_[t], train, idx, 0, max_depth, rng);
    }
  }

  double score(std::span<const double> x) const override {
    double total = 0.0;
    for (const auto& tree : trees_) {
      int node = 0;
      int depth = 0;
      while (tree[node].dim >= 0) {
        node = x[tree[node].dim] < tree[node].split ? tree[node].left : tree[node].right;
        ++depth;
      }
      total += depth + harmonic_adjust(tree[node].size);
    }
    return total / static_cast<double>(trees_.size());
  }

 private:
  struct Node {
    int dim = -1;  // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    int size = 0;
  };
  using Tree = std::vector<Node>;

  static double harmonic_adjust(int m) {
    if (m <= 1) return 0.0;
    if (m == 2) return 1.0;
    const double h = std::log(m - 1.0) + 0.5772156649015329;
    return 2.0 * h - 2.0 * (m - 1.0) / m;
  }

  static int build(Tree& tree, const Matrix& data, const std::vector<int>& rows, int depth,
                   int max_depth, Rng& rng) {
    const int me = static_cast<int>(tree.size());
    tree.push_back(Node{});
    tree[me].size = static_cast<int>(rows.size());
    if (rows.size() <= 1 || depth >= max_depth) return me;

    const int d = data.cols();
    std::vector<int> usable;
    std::vector<std::pair<double, double>> ranges(d);
    for (int j = 0; j < d; ++j) {
      double lo = data(rows[0], j), hi = lo;
      for (int r : rows) {
        lo = std::min(lo, data(r, j));
        hi = std::max(hi, data(r, j));
      }
      ranges[j] = {lo, hi};
      if (hi > lo) usable.push_back(j);
    }
    if (usable.empty()) return me;

    const int dim = usable[rng.index(static_cast<int>(usable.size()))];
    const auto [lo, hi] = ranges[dim];
    const double split = lo + rng.uniform() * (hi - lo);

    std::vector<int> left_rows, right_rows;
    for (int r : rows) (data(r, dim) < split ? left_rows : right_rows).push_back(r);
    if (left_rows.empty() || right_rows.empty()) return me;

    const int li = build(tree, data, left_rows, depth + 1, max_depth, rng);
    const int ri = build(tree, data, right_rows, depth + 1, max_depth, rng);
    tree[me].dim = dim;
    tree[me].split = split;
    tree[me].left = li;
    tree[me].right = ri;
    return me;
  }

  std::vector<Tree> trees_;
};

// ---------------------------------------------------------------------------
// Binary models
// ---------------------------------------------------------------------------

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double log1p_exp(double t) {  // log(1 + exp(t)), stable
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

class LogisticBinary final : public FittedScore {
 public:
  LogisticBinary(const Matrix& x, std::span<const int> y, double l2, int max_iters) {
    const int n = x.rows();
    const int d = x.cols();
    w_.assign(d, 0.0);
    b_ = 0.0;

    std::vector<double> w(d, 0.0);
    double b = 0.0;
    auto objective_grad = [&](const std::vector<double>& wv, double bv,
                              std::vector<double>* gw, double* gb) {
      double f = 0.0;
      if (gw) std::fill(gw->begin(), gw->end(), 0.0);
      if (gb) *gb = 0.0;
      for (int i = 0; i < n; ++i) {
        auto r = x.row(i);
        double z = bv;
        for (int j = 0; j < d; ++j) z += wv[j] * r[j];
        const double ysign = y[i] == 1 ? 1.0 : -1.0;
        f += log1p_exp(-ysign * z);
        if (gw) {
          const double g = -ysign * sigmoid(-ysign * z);
          for (int j = 0; j < d; ++j) (*gw)[j] += g * r[j];
          *gb += g;
        }
      }
      f /= n;
      for (int j = 0; j < d; ++j) f += 0.5 * l2 * wv[j] * wv[j];
      if (gw) {
        for (int j = 0; j < d; ++j) (*gw)[j] = (*gw)[j] / n + l2 * wv[j];
        *gb /= n;
      }
      return f;
    };

    std::vector<double> grad(d, 0.0), trial_w(d, 0.0);
    double grad_b = 0.0;
    double f = objective_grad(w, b, &grad, &grad_b);
    for (int iter = 0; iter < max_iters; ++iter) {
      double gnorm2 = grad_b * grad_b;
      for (double g : grad) gnorm2 += g * g;
      if (gnorm2 < 1e-20) break;

      double step = 1.0;
      double trial_f = 0.0;
      double trial_b = 0.0;
      bool moved = false;
      for (int bt = 0; bt < 50; ++bt) {
        for (int j = 0; j < d; ++j) trial_w[j] = w[j] - step * grad[j];
        trial_b = b - step * grad_b;
        trial_f = objective_grad(trial_w, trial_b, nullptr, nullptr);
        if (trial_f <= f - 1e-4 * step * gnorm2) {
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
      const double delta = f - trial_f;
      w = trial_w;
      b = trial_b;
      f = objective_grad(w, b, &grad, &grad_b);
      if (delta <= 1e-12 * (1.0 + std::abs(f))) break;
    }
    w_ = w;
    b_ = b;
  }

  double score(std::span<const double> x) const override {
    double z = b_;
    for (std::size_t j = 0; j < x.size(); ++j) z += w_[j] * x[j];
    return 1.0 - sigmoid(z);  // estimated P(Y = 0 | x)
  }

 private:
  std::vector<double> w_;
  double b_;
};

class GaussianNaiveBayes final : public FittedScore {
 public:
  GaussianNaiveBayes(const Matrix& x, std::span<const int> y) {
    const int n = x.rows();
    const int d = x.cols();
    int n1 = 0;
    for (int i = 0; i < n; ++i) n1 += y[i];
    const int n0 = n - n1;
    log_prior_[0] = std::log(static_cast<double>(n0) / n);
    log_prior_[1] = std::log(static_cast<double>(n1) / n);
    for (int c = 0; c < 2; ++c) {
      mean_[c].assign(d, 0.0);
      var_[c].assign(d, 0.0);
    }
    for (int i = 0; i < n; ++i) {
      auto r = x.row(i);
      for (int j = 0; j < d; ++j) mean_[y[i]][j] += r[j];
    }
    const int counts[2] = {n0, n1};
    for (int c = 0; c < 2; ++c)
      for (int j = 0; j < d; ++j) mean_[c][j] /= counts[c];
    double max_var = 0.0;
    for (int i = 0; i < n; ++i) {
      auto r = x.row(i);
      for (int j = 0; j < d; ++j) {
        const double cdev = r[j] - mean_[y[i]][j];
        var_[y[i]][j] += cdev * cdev;
      }
    }
    for (int c = 0; c < 2; ++c)
      for (int j = 0; j < d; ++j) {
        var_[c][j] /= counts[c];
        max_var = std::max(max_var, var_[c][j]);
      }
    const double floor = 1e-9 * std::max(max_var, 1e-3);
    for (int c = 0; c < 2; ++c)
      for (int j = 0; j < d; ++j) var_[c][j] = std::max(var_[c][j], floor);
  }

  double score(std::span<const double> x) const override {
    double log_like[2];
    for (int c = 0; c < 2; ++c) {
      double ll = log_prior_[c];
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double dev = x[j] - mean_[c][j];
        ll += -0.5 * std::log(2.0 * std::numbers::pi * var_[c][j]) -
              0.5 * dev * dev / var_[c][j];
      }
      log_like[c] = ll;
    }
    const double m = std::max(log_like[0], log_like[1]);
    const double p0 = std::exp(log_like[0] - m);
    return p0 / (p0 + std::exp(log_like[1] - m));
  }

 private:
  double log_prior_[2] = {0.0, 0.0};
  std::vector<double> mean_[2];
  std::vector<double> var_[2];
};

class KnnBinary final : public FittedScore {
 public:
  KnnBinary(Matrix x, std::vector<int> y, int k)
      : train_(std::move(x)), labels_(std::move(y)), k_(k) {}

  double score(std::span<const double> x) const override {
    const int n = train_.rows();
    std::vector<std::pair<double, int>> d2(n);
    for (int i = 0; i < n; ++i) d2[i] = {euclidean_sq(train_.row(i), x), i};
    std::partial_sort(d2.begin(), d2.begin() + k_, d2.end());
    int zeros = 0;
    for (int i = 0; i < k_; ++i) zeros += labels_[d2[i].second] == 0 ? 1 : 0;
    return static_cast<double>(zeros) / k_;
  }

 private:
  Matrix train_;
  std::vector<int> labels_;
  int k_;
};

class Flipped final : public FittedScore {
 public:
  explicit Flipped(FittedPtr inner) : inner_(std::move(inner)) {}
  double score(std::span<const double> x) const override { return -inner_->score(x); }
  const FittedPtr& inner() const { return inner_; }

 private:
  FittedPtr inner_;
};

}  // namespace

FittedPtr flip(FittedPtr inner) {
  if (const auto* f = dynamic_cast<const Flipped*>(inner.get())) return f->inner();
  return std::make_shared<Flipped>(std::move(inner));
}

std::vector<double> score_batch(const FittedScore& model, const Matrix& rows) {
  std::vector<double> out(rows.rows());
#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < rows.rows(); ++i) out[i] = model.score(rows.row(i));
  return out;
}

FittedPtr fit_one_class(const ModelSpec& spec, const Matrix& inlier_rows) {
  const std::string& kind = spec.effective_kind();
  const Matrix train = canonical_copy(inlier_rows);
  if (kind == "knn") {
    require_rows(train, 1, kind);
    const int k = std::clamp(static_cast<int>(param_or(spec, "k", 5)), 1, train.rows());
    return std::make_shared<KnnOneClass>(train, k);
  }
  if (kind == "mahalanobis") {
    require_rows(train, 1, kind);
    return std::make_shared<Mahalanobis>(train, param_or(spec, "ridge", 1e-6));
  }
  if (kind == "kde") {
    require_rows(train, 1, kind);
    return std::make_shared<GaussianKde>(train, param_or(spec, "bandwidth_scale", 1.0));
  }
  if (kind == "isolation_forest") {
    require_rows(train, 2, kind);
    const int trees = std::max(1, static_cast<int>(param_or(spec, "trees", 100)));
    const int subsample = std::max(2, static_cast<int>(param_or(spec, "subsample", 256)));
    const auto user_seed = static_cast<std::uint64_t>(param_or(spec, "seed", 0));
    return std::make_shared<IsolationForest>(train, trees, subsample, user_seed);
  }
  throw ConfigError("fit_one_class: unknown model kind '" + kind + "'");
}

FittedPtr fit_binary(const ModelSpec& spec, const Matrix& rows, std::span<const int> labels) {
  const std::string& kind = spec.effective_kind();
  if (rows.rows() != static_cast<int>(labels.size())) {
    throw std::invalid_argument("fit_binary: row/label count mismatch");
  }
  require_rows(rows, 2, kind);
  int n1 = 0;
  for (int l : labels) n1 += l;
  if (n1 == 0 || n1 == rows.rows()) {
    throw NumericError("fit " + kind + ": single-class input");
  }

  const std::vector<int> order = canonical_order(rows, labels);
  Matrix x = rows.gather(order);
  std::vector<int> y(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) y[i] = labels[order[i]];

  if (kind == "logistic") {
    const double l2 = param_or(spec, "l2", 1e-4);
    const int iters = static_cast<int>(param_or(spec, "max_iters", 500));
    return std::make_shared<LogisticBinary>(x, y, l2, iters);
  }
  if (kind == "naive_bayes") {
    return std::make_shared<GaussianNaiveBayes>(x, y);
  }
  if (kind == "knn_binary") {
    const int k = std::clamp(static_cast<int>(param_or(spec, "k", 5)), 1, x.rows());
    return std::make_shared<KnnBinary>(std::move(x), std::move(y), k);
  }
  throw ConfigError("fit_binary: unknown model kind '" + kind + "'");
}

FitFn one_class_fitter(const ModelSpec& spec) {
  return [spec](const Matrix& rows) { return fit_one_class(spec, rows); };
}

FitFn binary_fitter(const ModelSpec& spec, Matrix outlier_rows) {
  return [spec, outliers = std::move(outlier_rows)](const Matrix& rows) {
    Matrix all = rows;
    std::vector<int> labels(rows.rows(), 0);
    for (int i = 0; i < outliers.rows(); ++i) {
      all.push_row(outliers.row(i));
      labels.push_back(1);
    }
    return fit_binary(spec, all, labels);
  };
}

void Toolbox::add(ModelSpec spec) {
  if (spec.name.empty()) throw ConfigError("toolbox: model name must be non-empty");
  for (const auto& m : models_) {
    if (m.name == spec.name) throw ConfigError("toolbox: duplicate model name '" + spec.name + "'");
  }
  static const std::vector<std::string> one_class_kinds = {"knn", "mahalanobis", "kde",
                                                           "isolation_forest"};
  static const std::vector<std::string> binary_kinds = {"logistic", "naive_bayes", "knn_binary"};
  const auto& kinds = spec.family == ModelFamily::one_class ? one_class_kinds : binary_kinds;
  if (std::find(kinds.begin(), kinds.end(), spec.effective_kind()) == kinds.end()) {
    throw ConfigError("toolbox: unknown model kind '" + spec.effective_kind() + "'");
  }
  models_.push_back(std::move(spec));
}

std::vector<ModelSpec> Toolbox::one_class_models() const {
  std::vector<ModelSpec> out;
  for (const auto& m : models_)
    if (m.family == ModelFamily::one_class) out.push_back(m);
  return out;
}

std::vector<ModelSpec> Toolbox::binary_models() const {
  std::vector<ModelSpec> out;
  for (const auto& m : models_)
    if (m.family == ModelFamily::binary) out.push_back(m);
  return out;
}

Toolbox Toolbox::native_default() {
  Toolbox tb = native_one_class();
  tb.add({.name = "logistic", .family = ModelFamily::binary});
  tb.add({.name = "naive_bayes", .family = ModelFamily::binary});
  tb.add({.name = "knn_binary", .family = ModelFamily::binary});
  return tb;
}

Toolbox Toolbox::native_one_class() {
  Toolbox tb;
  tb.add({.name = "knn", .family = ModelFamily::one_class});
  tb.add({.name = "mahalanobis", .family = ModelFamily::one_class});
  tb.add({.name = "kde", .family = ModelFamily::one_class});
  tb.add({.name = "isolation_forest", .family = ModelFamily::one_class});
  return tb;
}

}  // namespace conforma
