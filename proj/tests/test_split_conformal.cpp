#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "conforma/dataset.hpp"
#include "conforma/errors.hpp"
#include "conforma/rng.hpp"
#include "conforma/split_conformal.hpp"
#include "reference.hpp"

using namespace conforma;

namespace {

std::vector<double> random_scores(int n, Rng& rng) {
  std::vector<double> v(n);
  for (double& s : v) s = rng.normal();
  return v;
}

// A random single-pair score table over n0 calibration inliers, n1
// calibration outliers, and m test points. with_ties occasionally
// quantizes scores so the <= conventions get exercised.
SplitScoreTable random_table(int n0, int n1, int m, Rng& rng, bool with_ties = false) {
  auto draw = [&](int n) {
    std::vector<double> v = random_scores(n, rng);
    if (with_ties) {
      for (double& s : v) s = std::round(s * 2.0) / 2.0;
    }
    return v;
  };
  SplitScoreTable table;
  table.m0.push_back({"m0", draw(n0), draw(n1), draw(m)});
  table.m1.push_back({"m1", draw(n0), draw(n1), draw(m)});
  return table;
}

}  // namespace

TEST_CASE("standard inlier p-value counts itself") {
  const std::vector<double> cal{1.0, 2.0, 3.0, 4.0};
  CHECK(standard_pvalue_inlier(2.5, cal) == doctest::Approx(0.6));
  CHECK(standard_pvalue_inlier(0.5, cal) == doctest::Approx(1.0 / 5.0));
  CHECK(standard_pvalue_inlier(9.0, cal) == doctest::Approx(1.0));
  CHECK_THROWS_AS(standard_pvalue_inlier(std::nan(""), cal), NumericError);
  CHECK_THROWS_AS(standard_pvalue_inlier(1.0, std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("standard outlier p-value adds one without self-membership") {
  const std::vector<double> cal{1.0, 2.0, 3.0};
  CHECK(standard_pvalue_outlier(0.5, cal) == doctest::Approx(0.25));
  CHECK(standard_pvalue_outlier(3.0, cal) == doctest::Approx(1.0));
  CHECK(standard_pvalue_outlier(99.0, cal) == doctest::Approx(1.0));
  // For identical inputs the two formulas may differ only through the
  // self-count convention.
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> c = random_scores(6, rng);
    const double s = rng.normal();
    CHECK(standard_pvalue_outlier(s, c) == doctest::Approx(standard_pvalue_inlier(s, c)));
  }
}

TEST_CASE("augmented_u0 is the normalized rank within the block") {
  const std::vector<double> scores{3.0, 1.0, 2.0};
  const std::vector<double> u = augmented_u0(scores);
  CHECK(u[0] == doctest::Approx(1.0));
  CHECK(u[1] == doctest::Approx(1.0 / 3.0));
  CHECK(u[2] == doctest::Approx(2.0 / 3.0));

  const std::vector<double> ties{5.0, 5.0, 5.0};
  for (double v : augmented_u0(ties)) CHECK(v == doctest::Approx(1.0));

  // Distinct scores: the outputs are exactly {1/(n+1), ..., 1}.
  Rng rng(2);
  std::vector<double> s = random_scores(7, rng);
  std::vector<double> out = augmented_u0(s);
  std::sort(out.begin(), out.end());
  for (int k = 0; k < 7; ++k) CHECK(out[k] == doctest::Approx((k + 1) / 7.0));
}

TEST_CASE("augmented_u0 matches the enumeration oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<double> s = random_scores(1 + rng.index(8), rng);
    const std::vector<double> got = augmented_u0(s);
    const std::vector<double> want = refimpl::augmented_u0(s);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
  }
}

TEST_CASE("median difference follows the even-length convention") {
  CHECK(median_diff_criterion(std::vector<double>{1, 2, 3}, std::vector<double>{0, 0, 1}) ==
        doctest::Approx(2.0));
  CHECK(median_diff_criterion(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}) ==
        doctest::Approx(0.0));
  CHECK(median_diff_criterion(std::vector<double>{1, 2, 3, 4}, std::vector<double>{0}) ==
        doctest::Approx(2.5));
}

TEST_CASE("integrative p-value: hand-computed four-point example") {
  // s0 on {test} + cal0: test 15 vs {10, 20, 30}; s1 vs cal1 {0, 1}.
  SplitScoreTable table;
  table.m0.push_back({"m0", {10.0, 20.0, 30.0}, {}, {15.0}});
  table.m1.push_back({"m1", {-1.0, 0.5, 2.0}, {0.0, 1.0}, {0.5}});
  const PValueRecord rec = table_pvalues(table).front();
  CHECK(rec.u0 == doctest::Approx(0.5));
  CHECK(rec.u1 == doctest::Approx(2.0 / 3.0));
  CHECK(rec.r == doctest::Approx(0.75));
  // Calibration ratios are {0.75, 1.125, 1.0}; the tie at 0.75 counts.
  CHECK(rec.u == doctest::Approx(0.5));
}

TEST_CASE("integrative p-values match the enumeration oracle on random tables") {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const int n0 = 1 + rng.index(8);
    const int n1 = rng.index(6);
    const bool ties = trial % 3 == 0;
    const SplitScoreTable table = random_table(n0, n1, 3, rng, ties);
    const std::vector<PValueRecord> recs = table_pvalues(table);
    for (int t = 0; t < 3; ++t) {
      std::vector<double> s0_aug{table.m0[0].test[t]};
      std::vector<double> s1_aug{table.m1[0].test[t]};
      s0_aug.insert(s0_aug.end(), table.m0[0].cal0.begin(), table.m0[0].cal0.end());
      s1_aug.insert(s1_aug.end(), table.m1[0].cal0.begin(), table.m1[0].cal0.end());
      const auto want = refimpl::integrative(s0_aug, s1_aug, table.m1[0].cal1);
      CHECK(recs[t].u0 == want.u0);
      CHECK(recs[t].u1 == want.u1);
      CHECK(recs[t].r == want.r);
      CHECK(recs[t].u == want.u);
      // Grid membership and the Eq-(3) lower bound.
      CHECK(recs[t].u * (n0 + 1) == doctest::Approx(std::round(recs[t].u * (n0 + 1))));
      if (n1 > 0) CHECK(recs[t].u1 >= 1.0 / (n1 + 1));
      CHECK(std::isfinite(recs[t].r));
    }
  }
}

TEST_CASE("constant u1 reduces the integrative p-value to the u0 rank") {
  Rng rng(5);
  SplitScoreTable table = random_table(6, 4, 2, rng);
  // Equal outlier-side scores everywhere: u1 is the same for all points.
  std::fill(table.m1[0].cal0.begin(), table.m1[0].cal0.end(), 0.3);
  std::fill(table.m1[0].test.begin(), table.m1[0].test.end(), 0.3);
  for (const PValueRecord& rec : table_pvalues(table)) {
    CHECK(rec.u == doctest::Approx(rec.u0));
  }
}

TEST_CASE("empty outlier calibration degrades to the standard p-value") {
  Rng rng(6);
  SplitScoreTable table;
  table.m0.push_back({"m0", random_scores(7, rng), {}, random_scores(3, rng)});
  const std::vector<PValueRecord> recs = table_pvalues(table);
  for (int t = 0; t < 3; ++t) {
    CHECK(recs[t].u1 == 1.0);
    CHECK(recs[t].u ==
          doctest::Approx(refimpl::standard_pvalue_inlier(table.m0[0].test[t],
                                                          table.m0[0].cal0)));
    CHECK(recs[t].selected_model_1 == "none");
  }
}

TEST_CASE("monotone transforms of either score leave every p-value unchanged") {
  Rng rng(7);
  const SplitScoreTable table = random_table(8, 5, 4, rng);
  SplitScoreTable warped = table;
  auto warp0 = [](double s) { return std::exp(s) + 3.0 * s; };
  auto warp1 = [](double s) { return std::atan(s) * 2.0 + s * s * s; };
  for (auto* v : {&warped.m0[0].cal0, &warped.m0[0].cal1, &warped.m0[0].test}) {
    for (double& s : *v) s = warp0(s);
  }
  for (auto* v : {&warped.m1[0].cal0, &warped.m1[0].cal1, &warped.m1[0].test}) {
    for (double& s : *v) s = warp1(s);
  }
  const auto a = table_pvalues(table);
  const auto b = table_pvalues(warped);
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].u0 == b[t].u0);
    CHECK(a[t].u1 == b[t].u1);
    CHECK(a[t].u == b[t].u);
  }
}

TEST_CASE("exhaustive super-uniformity over the augmented block (small n)") {
  // With tie-free preliminary ratios, rotating every member of the
  // augmented block through the test slot hits each grid value exactly
  // once. (Ratios can tie even for distinct raw scores because u1 lives on
  // a coarse grid; ties only make the p-value conservative, so the exact
  // check needs a tie-free draw.)
  Rng rng(8);
  for (int n_cal = 1; n_cal <= 4; ++n_cal) {
    std::vector<double> s0, s1, cal1;
    bool tie_free = false;
    while (!tie_free) {
      s0 = random_scores(n_cal + 1, rng);
      s1 = random_scores(n_cal + 1, rng);
      cal1 = random_scores(3, rng);
      const std::vector<double> u0 = refimpl::augmented_u0(s0);
      std::set<double> ratios;
      tie_free = true;
      for (int i = 0; i <= n_cal; ++i) {
        const double r = u0[i] / refimpl::standard_pvalue_outlier(s1[i], cal1);
        tie_free = tie_free && ratios.insert(r).second;
      }
    }
    std::multiset<double> values;
    for (int test_slot = 0; test_slot <= n_cal; ++test_slot) {
      SplitScoreTable table;
      SplitScoreTable::Entry e0{"m0", {}, {}, {s0[test_slot]}};
      SplitScoreTable::Entry e1{"m1", {}, cal1, {s1[test_slot]}};
      for (int i = 0; i <= n_cal; ++i) {
        if (i == test_slot) continue;
        e0.cal0.push_back(s0[i]);
        e1.cal0.push_back(s1[i]);
      }
      table.m0.push_back(e0);
      table.m1.push_back(e1);
      values.insert(table_pvalues(table).front().u);
    }
    int k = 1;
    for (double v : values) {
      CHECK(v == doctest::Approx(static_cast<double>(k) / (n_cal + 1)));
      ++k;
    }
  }
}

namespace {

// Geometry where the natural one-class orientation is informative: inliers
// tight around the origin, outliers far away.
Dataset separated_data(int n_in, int n_out, std::uint64_t seed) {
  Dataset d;
  Rng rng(seed);
  for (int i = 0; i < n_in; ++i) {
    d.push(LabeledSample{{rng.normal(), rng.normal()}, 0});
  }
  for (int i = 0; i < n_out; ++i) {
    d.push(LabeledSample{{8.0 + rng.normal(), 8.0 + rng.normal()}, 1});
  }
  return d;
}

// Inverted geometry: outliers concentrate in the middle of a widely spread
// inlier cloud, so a one-class model scores them as highly conforming.
Dataset inverted_data(int n_in, int n_out, std::uint64_t seed) {
  Dataset d;
  Rng rng(seed);
  const int dim = 8;
  for (int i = 0; i < n_in; ++i) {
    std::vector<double> x(dim);
    for (double& v : x) v = 2.0 * rng.normal();
    d.push(LabeledSample{x, 0});
  }
  for (int i = 0; i < n_out; ++i) {
    std::vector<double> x(dim);
    for (double& v : x) v = 0.3 * rng.normal();
    d.push(LabeledSample{x, 1});
  }
  return d;
}

Toolbox knn_only() {
  Toolbox tb;
  tb.add({.name = "knn", .family = ModelFamily::one_class});
  return tb;
}

}  // namespace

TEST_CASE("single-model engine reproduces the fixed-pair procedure") {
  const Dataset data = separated_data(24, 12, 9);
  const SplitPartition part = split(data, 0.5, 0.5, 10);
  SplitEngine engine(data, part, knn_only());

  const ModelSpec knn{.name = "knn", .family = ModelFamily::one_class};
  const FittedPtr f0 = fit_one_class(knn, data.gather(part.d0_train));
  const FittedPtr f1 = fit_one_class(knn, data.gather(part.d1_train));

  Rng rng(11);
  for (int t = 0; t < 10; ++t) {
    const std::vector<double> x{rng.normal() * 3.0, rng.normal() * 3.0};
    const PValueRecord via_engine = engine.pvalue(x);
    // On this geometry the natural orientation wins the selection.
    REQUIRE(via_engine.selected_model_0 == "knn");
    REQUIRE(via_engine.selected_model_1 == "knn");
    const PValueRecord direct = integrative_pvalue(
        *f0, *f1, data.gather(part.d0_cal), data.gather(part.d1_cal), x);
    CHECK(via_engine.u == direct.u);
    CHECK(via_engine.u0 == direct.u0);
    CHECK(via_engine.u1 == direct.u1);
  }
}

TEST_CASE("the flipped twin is selected on score-inverted data and restores power") {
  const Dataset data = inverted_data(80, 40, 12);
  const SplitPartition part = split(data, 0.5, 0.5, 13);
  SplitEngine engine(data, part, knn_only());

  const Dataset outlier_tests = inverted_data(0, 20, 14);
  int engine_small = 0;
  int flips = 0;
  const auto recs = engine.pvalue_batch(outlier_tests.features());
  for (const auto& rec : recs) {
    flips += rec.selected_model_0 == "knn:flip" ? 1 : 0;
    engine_small += rec.u <= 0.2 ? 1 : 0;
  }
  CHECK(flips == 20);
  CHECK(engine_small >= 15);

  // The fixed natural orientation is powerless here.
  const ModelSpec knn{.name = "knn", .family = ModelFamily::one_class};
  const FittedPtr f0 = fit_one_class(knn, data.gather(part.d0_train));
  const std::vector<double> cal = score_batch(*f0, data.gather(part.d0_cal));
  int standard_small = 0;
  for (int t = 0; t < outlier_tests.size(); ++t) {
    const double p = standard_pvalue_inlier(f0->score(outlier_tests.features_of(t)), cal);
    standard_small += p <= 0.2 ? 1 : 0;
  }
  CHECK(standard_small <= 2);
}

TEST_CASE("model selection is invariant to swapping the test point into the calibration block") {
  const Dataset base = separated_data(14, 10, 15);
  // Six extra inliers form the augmented block; each in turn plays the
  // test point while the rest join the calibration set.
  Rng rng(16);
  std::vector<std::vector<double>> block;
  for (int i = 0; i < 6; ++i) block.push_back({rng.normal(), rng.normal()});

  std::set<std::pair<std::string, std::string>> selections;
  for (int test_slot = 0; test_slot < 6; ++test_slot) {
    Dataset with_block = base;
    SplitPartition part = split(base, 0.5, 0.5, 17);
    std::vector<int> cal_block;
    for (int i = 0; i < 6; ++i) {
      if (i == test_slot) continue;
      with_block.push(LabeledSample{block[i], 0});
      cal_block.push_back(with_block.size() - 1);
    }
    part.d0_cal = cal_block;
    SplitEngine engine(with_block, part, Toolbox::native_one_class());
    const PValueRecord rec = engine.pvalue(block[test_slot]);
    selections.insert({rec.selected_model_0, rec.selected_model_1});
  }
  CHECK(selections.size() == 1);
}

TEST_CASE("ensemble selection also rescues inverted scores") {
  // Selection without reweighting: on inverted data the flip is still
  // chosen and the standard fixed-sign procedure is still beaten.
  const Dataset data = inverted_data(80, 40, 27);
  const SplitPartition part = split(data, 0.5, 0.5, 28);
  SplitEngine ensemble(data, part, knn_only(), SplitOptions{.combine = CombineRule::u0_only});

  const Dataset outlier_tests = inverted_data(0, 20, 29);
  int ensemble_small = 0;
  for (const auto& rec : ensemble.pvalue_batch(outlier_tests.features())) {
    CHECK(rec.selected_model_0 == "knn:flip");
    ensemble_small += rec.u <= 0.2 ? 1 : 0;
  }

  const ModelSpec knn{.name = "knn", .family = ModelFamily::one_class};
  const FittedPtr f0 = fit_one_class(knn, data.gather(part.d0_train));
  const std::vector<double> cal = score_batch(*f0, data.gather(part.d0_cal));
  int standard_small = 0;
  for (int t = 0; t < outlier_tests.size(); ++t) {
    const double p = standard_pvalue_inlier(f0->score(outlier_tests.features_of(t)), cal);
    standard_small += p <= 0.2 ? 1 : 0;
  }
  CHECK(ensemble_small > standard_small);
  CHECK(ensemble_small >= 15);
}

TEST_CASE("ensemble variant: constant u1 makes ensemble and integrative identical") {
  Rng rng(18);
  SplitScoreTable table = random_table(6, 3, 4, rng);
  std::fill(table.m1[0].cal0.begin(), table.m1[0].cal0.end(), 0.0);
  std::fill(table.m1[0].test.begin(), table.m1[0].test.end(), 0.0);
  SplitScoreTable ensemble = table;
  ensemble.combine = CombineRule::u0_only;
  const auto a = table_pvalues(table);
  const auto b = table_pvalues(ensemble);
  for (std::size_t t = 0; t < a.size(); ++t) CHECK(a[t].u == b[t].u);
}

TEST_CASE("ensemble with a single unflipped model equals the standard p-value") {
  const Dataset data = separated_data(30, 16, 19);
  const SplitPartition part = split(data, 0.5, 0.5, 20);
  SplitEngine engine(data, part, knn_only(), SplitOptions{.combine = CombineRule::u0_only});

  const ModelSpec knn{.name = "knn", .family = ModelFamily::one_class};
  const FittedPtr f0 = fit_one_class(knn, data.gather(part.d0_train));
  const std::vector<double> cal = score_batch(*f0, data.gather(part.d0_cal));

  Rng rng(21);
  for (int t = 0; t < 10; ++t) {
    const std::vector<double> x{rng.normal(), rng.normal()};
    const PValueRecord rec = engine.pvalue(x);
    if (rec.selected_model_0 == "knn") {
      CHECK(rec.u == doctest::Approx(standard_pvalue_inlier(f0->score(x), cal)));
    }
  }
}

TEST_CASE("tie-breaking jitter keeps p-values on the grid and is reproducible") {
  // Scores engineered with heavy ties.
  Dataset data;
  Rng rng(22);
  for (int i = 0; i < 24; ++i) {
    data.push(LabeledSample{{std::round(rng.normal()), std::round(rng.normal())}, 0});
  }
  for (int i = 0; i < 12; ++i) {
    data.push(LabeledSample{{4.0 + std::round(rng.normal()), 4.0}, 1});
  }
  const SplitPartition part = split(data, 0.5, 0.5, 23);
  const SplitOptions jittered{.combine = CombineRule::ratio, .tie_jitter = 1e-3,
                              .jitter_seed = 77};
  SplitEngine a(data, part, knn_only(), jittered);
  SplitEngine b(data, part, knn_only(), jittered);
  Matrix tests(0, 0);
  for (int t = 0; t < 8; ++t) tests.push_row(std::vector<double>{rng.normal(), rng.normal()});
  const auto ra = a.pvalue_batch(tests);
  const auto rb = b.pvalue_batch(tests);
  const int n0 = a.n_cal0();
  for (std::size_t t = 0; t < ra.size(); ++t) {
    CHECK(ra[t].u == rb[t].u);
    CHECK(ra[t].u * (n0 + 1) == doctest::Approx(std::round(ra[t].u * (n0 + 1))));
  }
}

TEST_CASE("pvalue_batch agrees with one-at-a-time evaluation") {
  const Dataset data = separated_data(20, 10, 24);
  const SplitPartition part = split(data, 0.5, 0.5, 25);
  SplitEngine engine(data, part, Toolbox::native_default());
  Rng rng(26);
  Matrix tests(0, 0);
  for (int t = 0; t < 6; ++t) tests.push_row(std::vector<double>{rng.normal(), rng.normal()});
  const auto batch = engine.pvalue_batch(tests);
  for (int t = 0; t < 6; ++t) {
    const PValueRecord one = engine.pvalue(tests.row(t));
    CHECK(one.u == batch[t].u);
    CHECK(one.selected_model_0 == batch[t].selected_model_0);
    CHECK(one.selected_model_1 == batch[t].selected_model_1);
  }
}
