#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "conforma/csv.hpp"
#include "conforma/dataset.hpp"
#include "conforma/errors.hpp"
#include "conforma/rng.hpp"

using namespace conforma;

namespace {

Dataset tiny_dataset(int n_inliers, int n_outliers, std::uint64_t seed = 3) {
  Dataset d;
  Rng rng(seed);
  for (int i = 0; i < n_inliers + n_outliers; ++i) {
    d.push(LabeledSample{{rng.normal(), rng.normal()}, i < n_inliers ? 0 : 1});
  }
  return d;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("split sizes follow floor(frac*count) with the rest calibrating") {
  const Dataset d = tiny_dataset(4, 2);
  const SplitPartition part = split(d, 0.5, 0.5, 7);
  CHECK(part.d0_train.size() == 2);
  CHECK(part.d0_cal.size() == 2);
  CHECK(part.d1_train.size() == 1);
  CHECK(part.d1_cal.size() == 1);

  // Pairwise disjoint, labels respected, unions complete.
  std::set<int> all;
  for (const auto* block : {&part.d0_train, &part.d0_cal, &part.d1_train, &part.d1_cal}) {
    for (int i : *block) CHECK(all.insert(i).second);
  }
  CHECK(all.size() == 6);
  for (int i : part.d0_train) CHECK(d.label_of(i) == 0);
  for (int i : part.d0_cal) CHECK(d.label_of(i) == 0);
  for (int i : part.d1_train) CHECK(d.label_of(i) == 1);
  for (int i : part.d1_cal) CHECK(d.label_of(i) == 1);
}

TEST_CASE("split rejects an empty inlier calibration block") {
  const Dataset d = tiny_dataset(1, 2);
  CHECK_THROWS_WITH_AS(split(d, 0.5, 0.5, 1), doctest::Contains("insufficient inliers"),
                       ConfigError);
}

TEST_CASE("split is deterministic in the seed") {
  const Dataset d = tiny_dataset(20, 10);
  const SplitPartition a = split(d, 0.5, 0.5, 99);
  const SplitPartition b = split(d, 0.5, 0.5, 99);
  CHECK(a.d0_train == b.d0_train);
  CHECK(a.d0_cal == b.d0_cal);
  CHECK(a.d1_train == b.d1_train);
  CHECK(a.d1_cal == b.d1_cal);
  const SplitPartition c = split(d, 0.5, 0.5, 100);
  CHECK(a.d0_train != c.d0_train);
}

TEST_CASE("assign_folds balances and validates") {
  std::vector<int> idx(10);
  for (int i = 0; i < 10; ++i) idx[i] = i;
  const FoldAssignment fa = assign_folds(idx, 5, 1);
  for (int k = 0; k < 5; ++k) CHECK(fa.members(k).size() == 2);

  std::vector<int> idx11(11);
  for (int i = 0; i < 11; ++i) idx11[i] = i;
  const FoldAssignment fb = assign_folds(idx11, 5, 1);
  std::multiset<std::size_t> sizes;
  for (int k = 0; k < 5; ++k) sizes.insert(fb.members(k).size());
  CHECK(sizes == std::multiset<std::size_t>{2, 2, 2, 2, 3});

  CHECK_THROWS_AS(assign_folds(idx, 12, 1), ConfigError);
  CHECK_THROWS_AS(assign_folds(idx, 1, 1), ConfigError);
}

TEST_CASE("fold balance holds across many shapes") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + rng.index(40);
    const int K = 2 + rng.index(std::max(1, n - 1));
    if (K > n) continue;
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i * 3 + 1;
    const FoldAssignment fa = assign_folds(idx, K, rng.next_u64());
    std::size_t lo = idx.size(), hi = 0;
    for (int k = 0; k < K; ++k) {
      lo = std::min(lo, fa.members(k).size());
      hi = std::max(hi, fa.members(k).size());
    }
    CHECK(hi - lo <= 1);
  }
}

TEST_CASE("gaussian mixture generator matches its closed-form mean") {
  GaussianMixtureConfig inlier{.n = 0, .d = 3, .a = 0.7, .n_components = 4,
                               .component_box = 3.0, .seed = 21};
  GaussianMixtureConfig outlier = inlier;
  outlier.a = 1.0;

  const Matrix centers = mixture_centers(inlier);
  std::vector<double> center_mean(3, 0.0);
  for (int c = 0; c < centers.rows(); ++c)
    for (int j = 0; j < 3; ++j) center_mean[j] += centers(c, j) / centers.rows();

  const int n = 100000;
  const Dataset d = gen_gaussian_mixture(inlier, outlier, n, 0);
  // Monte Carlo oracle: the sample mean must approach the center average;
  // the per-coordinate sd is bounded by sqrt(a + box^2).
  const double mc_sd = std::sqrt(0.7 + 9.0);
  for (int j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += d.features_of(i)[j];
    mean /= n;
    CHECK(std::abs(mean - center_mean[j]) < 3.0 * mc_sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("gaussian mixture with a=0 emits exact component centers") {
  GaussianMixtureConfig cfg{.n = 0, .d = 2, .a = 0.0, .n_components = 3,
                            .component_box = 2.0, .seed = 5};
  const Matrix centers = mixture_centers(cfg);
  const Dataset d = gen_gaussian_mixture(cfg, cfg, 50, 0);
  for (int i = 0; i < d.size(); ++i) {
    bool found = false;
    for (int c = 0; c < centers.rows(); ++c) {
      if (d.features_of(i)[0] == centers(c, 0) && d.features_of(i)[1] == centers(c, 1)) {
        found = true;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("gaussian mixture reaches the original scale (d = 1000, 1000 components)") {
  GaussianMixtureConfig cfg{.n = 0, .d = 1000, .a = 0.7, .n_components = 1000,
                            .component_box = 3.0, .seed = 77};
  const Dataset d = gen_gaussian_mixture(cfg, cfg, 3, 2);
  CHECK(d.dim() == 1000);
  CHECK(d.size() == 5);
  const Matrix centers = mixture_centers(cfg);
  CHECK(centers.rows() == 1000);
  for (int c = 0; c < 5; ++c) {
    CHECK(std::abs(centers(c, 0)) <= 3.0);
  }
}

TEST_CASE("gaussian mixture validates shared component sets") {
  GaussianMixtureConfig a{.n = 0, .d = 2, .a = 1.0, .n_components = 3,
                          .component_box = 2.0, .seed = 5};
  GaussianMixtureConfig b = a;
  b.d = 3;
  CHECK_THROWS_AS(gen_gaussian_mixture(a, b, 1, 1), ConfigError);
  GaussianMixtureConfig c = a;
  c.seed = 6;
  CHECK_THROWS_AS(gen_gaussian_mixture(a, c, 1, 1), ConfigError);
}

TEST_CASE("calibrate_intercept: symmetric betas give gamma near zero") {
  Matrix betas(2, 3);
  for (int j = 0; j < 3; ++j) {
    betas(0, j) = 0.8 * (j + 1);
    betas(1, j) = 0.8 * (j + 1);
  }
  const double gamma = calibrate_intercept(betas, 0.5, 2000, 0.005, 11);
  // f(gamma) = sigmoid(gamma) exactly here, so |gamma| <= ~4.1 * tol.
  CHECK(std::abs(gamma) < 0.03);
}

TEST_CASE("calibrate_intercept is monotone and converges at small targets") {
  LogisticModelConfig cfg{.n = 0, .d = 5, .beta_variance = 2.0, .target_outlier_frac = 0.2,
                          .mc_samples = 5000, .tol = 0.01, .seed = 17};
  const Matrix betas = logistic_betas(cfg);
  const double g_low = calibrate_intercept(betas, 0.1, 5000, 0.005, 17);
  const double g_mid = calibrate_intercept(betas, 0.3, 5000, 0.005, 17);
  const double g_high = calibrate_intercept(betas, 0.7, 5000, 0.005, 17);
  CHECK(g_low < g_mid);
  CHECK(g_mid < g_high);

  const double g_tiny = calibrate_intercept(betas, 0.01, 20000, 0.005, 17);
  CHECK(std::isfinite(g_tiny));
}

TEST_CASE("logistic generator hits the target outlier fraction") {
  LogisticModelConfig cfg{.n = 100000, .d = 8, .beta_variance = 3.0,
                          .target_outlier_frac = 0.2, .mc_samples = 20000, .tol = 0.01,
                          .seed = 31};
  const Dataset d = gen_logistic_model(cfg);
  const double frac = static_cast<double>(d.count_label(1)) / d.size();
  // tol 0.01 on the calibrated expectation plus MC noise on 1e5 draws.
  CHECK(frac > 0.2 - 0.02);
  CHECK(frac < 0.2 + 0.02);
}

TEST_CASE("logistic generator at d = 100 with coefficient variance 3") {
  LogisticModelConfig cfg{.n = 400, .d = 100, .beta_variance = 3.0,
                          .target_outlier_frac = 0.5, .mc_samples = 2000, .tol = 0.02,
                          .seed = 41};
  const Dataset d = gen_logistic_model(cfg);
  CHECK(d.dim() == 100);
  CHECK(d.size() == 400);
  const double frac = static_cast<double>(d.count_label(1)) / d.size();
  CHECK(frac > 0.35);
  CHECK(frac < 0.65);
}

TEST_CASE("csv round-trips a dataset exactly") {
  Dataset d;
  d.push(LabeledSample{{1.5, -2.25, 1e-17}, 0});
  d.push(LabeledSample{{0.1, 0.2, 0.3}, 1});
  d.push(LabeledSample{{-1e300, 3.141592653589793, 0.0}, 0});
  const std::string path = temp_path("conforma_roundtrip.csv");
  save_csv(d, path);
  const Dataset back = load_csv(path);
  CHECK(back == d);
  std::remove(path.c_str());
}

TEST_CASE("csv rejects malformed tables") {
  const std::string path = temp_path("conforma_bad.csv");
  auto write_file = [&](const std::string& body) {
    std::ofstream out(path);
    out << body;
  };

  write_file("x1,x2,y\n1.0,2.0,2\n");
  CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("label"), ConfigError);

  write_file("x1,x2,y\n1.0,2.0\n");
  CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("ragged"), ConfigError);

  write_file("x1,x2,y\n1.0,abc,0\n");
  CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("non-numeric"), ConfigError);

  write_file("a,b\n");
  CHECK_THROWS_AS(load_csv(path), ConfigError);
  std::remove(path.c_str());
}

TEST_CASE("csv loads a thyroid-style 6-feature table") {
  const std::string path = temp_path("conforma_thyroid.csv");
  std::ofstream out(path);
  out << "x1,x2,x3,x4,x5,x6,y\n";
  Rng rng(2);
  for (int i = 0; i < 12; ++i) {
    for (int j = 0; j < 6; ++j) out << format_double(rng.normal()) << ",";
    out << (i % 4 == 0 ? 1 : 0) << "\n";
  }
  out.close();
  const Dataset d = load_csv(path);
  CHECK(d.dim() == 6);
  CHECK(d.size() == 12);
  CHECK(d.count_label(1) == 3);
  std::remove(path.c_str());
}

TEST_CASE("dataset rejects non-finite features and bad labels") {
  Dataset d;
  CHECK_THROWS(d.push(LabeledSample{{1.0, std::nan("")}, 0}));
  CHECK_THROWS(d.push(LabeledSample{{1.0, 2.0}, 2}));
  CHECK_THROWS(d.push(LabeledSample{{}, 0}));
}
