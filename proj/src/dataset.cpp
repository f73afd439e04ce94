#include "conforma/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "conforma/errors.hpp"
#include "conforma/rng.hpp"

namespace conforma {

namespace {
constexpr std::uint64_t kTagCenters = 101;
constexpr std::uint64_t kTagInliers = 102;
constexpr std::uint64_t kTagOutliers = 103;
constexpr std::uint64_t kTagBetas = 104;
constexpr std::uint64_t kTagInterceptMc = 105;
constexpr std::uint64_t kTagFeatures = 106;
constexpr std::uint64_t kTagLabels = 107;
}  // namespace

Dataset::Dataset(Matrix x, std::vector<int> y) : x_(std::move(x)), y_(std::move(y)) {
  if (x_.rows() != static_cast<int>(y_.size())) {
    throw std::invalid_argument("Dataset: feature/label count mismatch");
  }
  for (int i = 0; i < x_.rows(); ++i) validate_row(x_.row(i), y_[i]);
}

void Dataset::push(const LabeledSample& s) {
  validate_row(s.features, s.label);
  x_.push_row(s.features);
  y_.push_back(s.label);
}

void Dataset::validate_row(std::span<const double> row, int label) const {
  if (row.empty()) throw std::invalid_argument("Dataset: feature dimension must be >= 1");
  for (double v : row) {
    if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite feature value");
  }
  if (label != 0 && label != 1) throw std::invalid_argument("Dataset: label must be 0 or 1");
}

std::vector<int> Dataset::inlier_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (y_[i] == 0) out.push_back(i);
  return out;
}

std::vector<int> Dataset::outlier_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (y_[i] == 1) out.push_back(i);
  return out;
}

int Dataset::count_label(int label) const {
  return static_cast<int>(std::count(y_.begin(), y_.end(), label));
}

SplitPartition split(const Dataset& data, double train_frac_inlier,
                     double train_frac_outlier, std::uint64_t seed) {
  if (train_frac_inlier <= 0.0 || train_frac_inlier >= 1.0 ||
      train_frac_outlier <= 0.0 || train_frac_outlier >= 1.0) {
    throw ConfigError("split: fractions must lie in (0,1)");
  }
  std::vector<int> inliers = data.inlier_indices();
  std::vector<int> outliers = data.outlier_indices();
  if (inliers.size() < 2) throw ConfigError("split: insufficient inliers");

  Rng root(seed);
  auto cut = [](std::vector<int> idx, double frac, Rng rng) {
    rng.shuffle(idx);
    const auto n_train =
        static_cast<std::size_t>(std::floor(frac * static_cast<double>(idx.size())));
    std::vector<int> train(idx.begin(), idx.begin() + n_train);
    std::vector<int> cal(idx.begin() + n_train, idx.end());
    std::sort(train.begin(), train.end());
    std::sort(cal.begin(), cal.end());
    return std::pair{train, cal};
  };

  SplitPartition part;
  part.seed = seed;
  std::tie(part.d0_train, part.d0_cal) = cut(inliers, train_frac_inlier, root.child(0));
  std::tie(part.d1_train, part.d1_cal) = cut(outliers, train_frac_outlier, root.child(1));
  if (part.d0_cal.empty()) throw ConfigError("split: insufficient inliers");
  return part;
}

std::vector<int> FoldAssignment::members(int fold) const {
  std::vector<int> out;
  for (const auto& [idx, f] : fold_of)
    if (f == fold) out.push_back(idx);
  return out;
}

std::vector<int> FoldAssignment::indices() const {
  std::vector<int> out;
  out.reserve(fold_of.size());
  for (const auto& [idx, f] : fold_of) out.push_back(idx);
  return out;
}

FoldAssignment assign_folds(std::span<const int> indices, int K, std::uint64_t seed) {
  if (K < 2) throw ConfigError("assign_folds: K must be >= 2");
  if (static_cast<int>(indices.size()) < K) {
    throw ConfigError("assign_folds: K exceeds the number of indices");
  }
  std::vector<int> shuffled(indices.begin(), indices.end());
  std::sort(shuffled.begin(), shuffled.end());
  Rng rng(seed);
  rng.shuffle(shuffled);

  FoldAssignment fa;
  fa.K = K;
  fa.seed = seed;
  for (std::size_t i = 0; i < shuffled.size(); ++i) {
    fa.fold_of[shuffled[i]] = static_cast<int>(i % static_cast<std::size_t>(K));
  }
  return fa;
}

Matrix mixture_centers(const GaussianMixtureConfig& cfg) {
  if (cfg.d < 1 || cfg.n_components < 1 || cfg.component_box <= 0.0 || cfg.a < 0.0) {
    throw ConfigError("gaussian mixture: d, n_components, component_box must be positive");
  }
  Rng rng = Rng(cfg.seed).child(kTagCenters);
  Matrix centers(cfg.n_components, cfg.d);
  for (int c = 0; c < cfg.n_components; ++c) {
    for (int j = 0; j < cfg.d; ++j) {
      centers(c, j) = (2.0 * rng.uniform() - 1.0) * cfg.component_box;
    }
  }
  return centers;
}

namespace {
void sample_mixture(Dataset& out, const GaussianMixtureConfig& cfg, const Matrix& centers,
                    int n, int label, Rng rng) {
  const double root_a = std::sqrt(cfg.a);
  std::vector<double> row(cfg.d);
  for (int i = 0; i < n; ++i) {
    const int c = rng.index(centers.rows());
    for (int j = 0; j < cfg.d; ++j) {
      row[j] = root_a * rng.normal() + centers(c, j);
    }
    out.push(LabeledSample{row, label});
  }
}
}  // namespace

Dataset gen_gaussian_mixture(const GaussianMixtureConfig& inlier_cfg,
                             const GaussianMixtureConfig& outlier_cfg,
                             int n_inlier, int n_outlier) {
  if (inlier_cfg.d != outlier_cfg.d) {
    throw ConfigError("gen_gaussian_mixture: mismatched dimension");
  }
  if (inlier_cfg.n_components != outlier_cfg.n_components ||
      inlier_cfg.component_box != outlier_cfg.component_box ||
      inlier_cfg.seed != outlier_cfg.seed) {
    throw ConfigError("gen_gaussian_mixture: configs describe different component sets");
  }
  const Matrix centers = mixture_centers(inlier_cfg);
  Dataset out;
  auto noise_root = [](const GaussianMixtureConfig& cfg) {
    return Rng(cfg.noise_seed != 0 ? cfg.noise_seed : cfg.seed);
  };
  sample_mixture(out, inlier_cfg, centers, n_inlier, 0, noise_root(inlier_cfg).child(kTagInliers));
  sample_mixture(out, outlier_cfg, centers, n_outlier, 1,
                 noise_root(outlier_cfg).child(kTagOutliers));
  return out;
}

Matrix logistic_betas(const LogisticModelConfig& cfg) {
  if (cfg.d < 1) throw ConfigError("logistic model: d must be >= 1");
  Rng rng = Rng(cfg.seed).child(kTagBetas);
  const double sd = std::sqrt(cfg.beta_variance);
  Matrix betas(2, cfg.d);
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < cfg.d; ++j) betas(k, j) = sd * rng.normal();
  return betas;
}

namespace {
double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }
}  // namespace

double calibrate_intercept(const Matrix& betas, double target_frac, int mc_samples,
                           double tol, std::uint64_t seed) {
  if (target_frac <= 0.0 || target_frac >= 1.0) {
    throw ConfigError("calibrate_intercept: target fraction must lie in (0,1)");
  }
  if (mc_samples < 1000) throw ConfigError("calibrate_intercept: mc_samples must be >= 1000");
  const int d = betas.cols();

  // One frozen Monte Carlo sample reused for every gamma, so the estimated
  // fraction is exactly monotone in gamma and bisection is well posed.
  Rng rng = Rng(seed).child(kTagInterceptMc);
  std::vector<double> margins(mc_samples);
  std::vector<double> x(d);
  for (int i = 0; i < mc_samples; ++i) {
    double m = 0.0;
    for (int j = 0; j < d; ++j) {
      const double xj = rng.normal();
      m += xj * (betas(1, j) - betas(0, j));
    }
    margins[i] = m;
  }
  auto frac_at = [&](double gamma) {
    double s = 0.0;
    for (double m : margins) s += sigmoid(gamma + m);
    return s / static_cast<double>(mc_samples);
  };

  double lo = -1.0, hi = 1.0;
  int expansions = 0;
  while (frac_at(lo) > target_frac) {
    lo *= 2.0;
    if (++expansions > 60) throw NumericError("calibrate_intercept: failed to bracket target");
  }
  expansions = 0;
  while (frac_at(hi) < target_frac) {
    hi *= 2.0;
    if (++expansions > 60) throw NumericError("calibrate_intercept: failed to bracket target");
  }

  for (int step = 0; step < 100; ++step) {
    const double mid = 0.5 * (lo + hi);
    const double f = frac_at(mid);
    if (std::abs(f - target_frac) <= tol) return mid;
    (f < target_frac ? lo : hi) = mid;
  }
  throw NumericError("calibrate_intercept: bisection did not converge in 100 steps");
}

Dataset sample_logistic_model(const LogisticModelConfig& cfg, double gamma) {
  if (cfg.n < 1) throw ConfigError("gen_logistic_model: n must be >= 1");
  const Matrix betas = logistic_betas(cfg);
  Rng root(cfg.noise_seed != 0 ? cfg.noise_seed : cfg.seed);
  Rng feat = root.child(kTagFeatures);
  Rng lab = root.child(kTagLabels);
  Dataset out;
  std::vector<double> row(cfg.d);
  for (int i = 0; i < cfg.n; ++i) {
    double margin = gamma;
    for (int j = 0; j < cfg.d; ++j) {
      row[j] = feat.normal();
      margin += row[j] * (betas(1, j) - betas(0, j));
    }
    const int y = lab.uniform() < sigmoid(margin) ? 1 : 0;
    out.push(LabeledSample{row, y});
  }
  return out;
}

Dataset gen_logistic_model(const LogisticModelConfig& cfg) {
  const Matrix betas = logistic_betas(cfg);
  const double gamma =
      calibrate_intercept(betas, cfg.target_outlier_frac, cfg.mc_samples, cfg.tol, cfg.seed);
  return sample_logistic_model(cfg, gamma);
}

}  // namespace conforma
