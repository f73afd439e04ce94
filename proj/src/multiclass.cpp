#include "conforma/multiclass.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "conforma/errors.hpp"

namespace conforma {

namespace {

class McNaiveBayes final : public FittedMulticlass {
 public:
  McNaiveBayes(const Matrix& x, std::span<const int> y, int n_classes)
      : n_classes_(n_classes) {
    const int n = x.rows();
    const int d = x.cols();
    counts_.assign(n_classes, 0);
    mean_.assign(n_classes, std::vector<double>(d, 0.0));
    var_.assign(n_classes, std::vector<double>(d, 0.0));
    for (int i = 0; i < n; ++i) {
      ++counts_[y[i]];
      auto r = x.row(i);
      for (int j = 0; j < d; ++j) mean_[y[i]][j] += r[j];
    }
    for (int c = 0; c < n_classes; ++c) {
      if (counts_[c] == 0) continue;
      for (int j = 0; j < d; ++j) mean_[c][j] /= counts_[c];
    }
    double max_var = 0.0;
    for (int i = 0; i < n; ++i) {
      auto r = x.row(i);
      for (int j = 0; j < d; ++j) {
        const double dev = r[j] - mean_[y[i]][j];
        var_[y[i]][j] += dev * dev;
      }
    }
    for (int c = 0; c < n_classes; ++c) {
      if (counts_[c] == 0) continue;
      for (int j = 0; j < d; ++j) {
        var_[c][j] /= counts_[c];
        max_var = std::max(max_var, var_[c][j]);
      }
    }
    const double floor = 1e-9 * std::max(max_var, 1e-3);
    for (int c = 0; c < n_classes; ++c)
      for (int j = 0; j < d; ++j) var_[c][j] = std::max(var_[c][j], floor);
    n_total_ = n;
  }

  double prob(std::span<const double> x, int label) const override {
    std::vector<double> ll(n_classes_, -std::numeric_limits<double>::infinity());
    for (int c = 0; c < n_classes_; ++c) {
      if (counts_[c] == 0) continue;
      double v = std::log(static_cast<double>(counts_[c]) / n_total_);
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double dev = x[j] - mean_[c][j];
        v += -0.5 * std::log(2.0 * std::numbers::pi * var_[c][j]) - 0.5 * dev * dev / var_[c][j];
      }
      ll[c] = v;
    }
    const double m = *std::max_element(ll.begin(), ll.end());
    double total = 0.0;
    for (double v : ll) total += std::exp(v - m);
    return std::exp(ll[label] - m) / total;
  }

 private:
  int n_classes_;
  int n_total_ = 0;
  std::vector<int> counts_;
  std::vector<std::vector<double>> mean_;
  std::vector<std::vector<double>> var_;
};

class McKnn final : public FittedMulticlass {
 public:
  McKnn(Matrix x, std::vector<int> y, int n_classes, int k)
      : train_(std::move(x)), labels_(std::move(y)), n_classes_(n_classes), k_(k) {}

  double prob(std::span<const double> x, int label) const override {
    (void)n_classes_;
    const int n = train_.rows();
    std::vector<std::pair<double, int>> d2(n);
    for (int i = 0; i < n; ++i) d2[i] = {euclidean_sq(train_.row(i), x), i};
    std::partial_sort(d2.begin(), d2.begin() + k_, d2.end());
    int votes = 0;
    for (int i = 0; i < k_; ++i) votes += labels_[d2[i].second] == label ? 1 : 0;
    return static_cast<double>(votes) / k_;
  }

 private:
  Matrix train_;
  std::vector<int> labels_;
  int n_classes_;
  int k_;
};

}  // namespace

FittedMcPtr fit_multiclass(const MulticlassSpec& spec, const Matrix& x,
                           std::span<const int> labels, int n_classes) {
  if (x.rows() != static_cast<int>(labels.size())) {
    throw std::invalid_argument("fit_multiclass: row/label count mismatch");
  }
  if (x.rows() < 1) throw NumericError("fit_multiclass: empty training set");
  for (int l : labels) {
    if (l < 0 || l >= n_classes) throw std::invalid_argument("fit_multiclass: label out of range");
  }

  const std::vector<int> order = canonical_order(x, labels);
  Matrix xs = x.gather(order);
  std::vector<int> ys(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) ys[i] = labels[order[i]];

  if (spec.kind == "naive_bayes") {
    return std::make_shared<McNaiveBayes>(xs, ys, n_classes);
  }
  if (spec.kind == "knn") {
    int k = 5;
    if (auto it = spec.params.find("k"); it != spec.params.end()) k = static_cast<int>(it->second);
    k = std::clamp(k, 1, xs.rows());
    return std::make_shared<McKnn>(std::move(xs), std::move(ys), n_classes, k);
  }
  throw ConfigError("fit_multiclass: unknown model kind '" + spec.kind + "'");
}

}  // namespace conforma
