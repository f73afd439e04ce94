#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "conforma/errors.hpp"
#include "conforma/rng.hpp"
#include "conforma/scoring.hpp"
#include "reference.hpp"

using namespace conforma;

namespace {

Matrix random_rows(int n, int d, std::uint64_t seed) {
  Matrix m(0, 0);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(d);
    for (int j = 0; j < d; ++j) row[j] = rng.normal();
    m.push_row(row);
  }
  return m;
}

Matrix permuted(const Matrix& m, std::uint64_t seed) {
  std::vector<int> idx(m.rows());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  return m.gather(idx);
}

std::vector<std::vector<double>> to_rows(const Matrix& m) {
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < m.rows(); ++i) {
    rows.emplace_back(m.row(i).begin(), m.row(i).end());
  }
  return rows;
}

const ModelSpec kKnn{.name = "knn", .family = ModelFamily::one_class, .params = {{"k", 5}}};

}  // namespace

TEST_CASE("knn one-class matches the brute-force distance oracle") {
  const Matrix train = random_rows(100, 4, 10);
  const FittedPtr model = fit_one_class(kKnn, train);
  const Matrix queries = random_rows(20, 4, 11);
  const auto rows = to_rows(train);
  for (int q = 0; q < queries.rows(); ++q) {
    const std::vector<double> x(queries.row(q).begin(), queries.row(q).end());
    CHECK(model->score(queries.row(q)) ==
          doctest::Approx(-refimpl::knn_kth_distance(rows, x, 5)).epsilon(1e-12));
  }
}

TEST_CASE("mahalanobis regularizes a degenerate covariance") {
  Matrix train(0, 0);
  for (int i = 0; i < 10; ++i) train.push_row(std::vector<double>{1.0, 2.0, 3.0});
  const ModelSpec spec{.name = "mahalanobis", .family = ModelFamily::one_class};
  const FittedPtr model = fit_one_class(spec, train);
  CHECK(std::isfinite(model->score(std::vector<double>{1.0, 2.0, 3.0})));
  CHECK(std::isfinite(model->score(std::vector<double>{5.0, 5.0, 5.0})));
  // Farther points still score lower (more outlying).
  CHECK(model->score(std::vector<double>{1.0, 2.0, 3.0}) >
        model->score(std::vector<double>{9.0, 9.0, 9.0}));
}

TEST_CASE("mahalanobis matches the quadratic form on well-conditioned data") {
  const Matrix train = random_rows(200, 3, 12);
  const ModelSpec spec{.name = "mahalanobis", .family = ModelFamily::one_class,
                       .params = {{"ridge", 1e-12}}};
  const FittedPtr model = fit_one_class(spec, train);
  // The training mean is the best-scoring point.
  std::vector<double> mean(3, 0.0);
  for (int i = 0; i < train.rows(); ++i)
    for (int j = 0; j < 3; ++j) mean[j] += train(i, j) / train.rows();
  const double at_mean = model->score(mean);
  CHECK(at_mean == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(model->score(std::vector<double>{4.0, 4.0, 4.0}) < at_mean);
}

TEST_CASE("kde scores dense regions above empty ones") {
  const Matrix train = random_rows(80, 2, 13);
  const ModelSpec spec{.name = "kde", .family = ModelFamily::one_class};
  const FittedPtr model = fit_one_class(spec, train);
  CHECK(model->score(std::vector<double>{0.0, 0.0}) >
        model->score(std::vector<double>{25.0, -30.0}));
}

TEST_CASE("isolation forest separates a far point from the cluster bulk") {
  Matrix train(0, 0);
  Rng rng(14);
  for (int i = 0; i < 128; ++i) {
    train.push_row(std::vector<double>{rng.normal() + (i % 2 ? 5.0 : -5.0), rng.normal()});
  }
  const ModelSpec spec{.name = "isolation_forest", .family = ModelFamily::one_class,
                       .params = {{"trees", 100}, {"subsample", 64}}};
  const FittedPtr model = fit_one_class(spec, train);
  CHECK(model->score(std::vector<double>{5.0, 0.0}) >
        model->score(std::vector<double>{40.0, 40.0}));
}

TEST_CASE("isolation forest single tree on two points isolates at depth one") {
  // With a 2-row subsample every tree splits once into two singleton
  // leaves, so the path-length formula gives depth 1 + c(1) = 1 exactly,
  // for any query.
  Matrix train(0, 0);
  train.push_row(std::vector<double>{0.0});
  train.push_row(std::vector<double>{10.0});
  const ModelSpec spec{.name = "isolation_forest", .family = ModelFamily::one_class,
                       .params = {{"trees", 1}, {"subsample", 2}, {"seed", 4}}};
  const FittedPtr model = fit_one_class(spec, train);
  CHECK(model->score(std::vector<double>{-3.0}) == doctest::Approx(1.0));
  CHECK(model->score(std::vector<double>{4.0}) == doctest::Approx(1.0));
  CHECK(model->score(std::vector<double>{12.0}) == doctest::Approx(1.0));
}

TEST_CASE("one-class fits are exactly order-invariant") {
  const Matrix train = random_rows(40, 3, 15);
  const Matrix shuffled = permuted(train, 16);
  const Matrix queries = random_rows(10, 3, 17);

  for (const char* kind : {"knn", "mahalanobis", "kde", "isolation_forest"}) {
    const ModelSpec spec{.name = kind, .family = ModelFamily::one_class};
    const FittedPtr a = fit_one_class(spec, train);
    const FittedPtr b = fit_one_class(spec, shuffled);
    for (int q = 0; q < queries.rows(); ++q) {
      CHECK(a->score(queries.row(q)) == b->score(queries.row(q)));
    }
  }
}

TEST_CASE("binary fits are exactly order-invariant") {
  const Matrix x = random_rows(30, 3, 18);
  std::vector<int> y(30);
  for (int i = 0; i < 30; ++i) y[i] = i % 3 == 0 ? 1 : 0;

  std::vector<int> idx(30);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(19);
  rng.shuffle(idx);
  const Matrix xs = x.gather(idx);
  std::vector<int> ys(30);
  for (int i = 0; i < 30; ++i) ys[i] = y[idx[i]];

  const Matrix queries = random_rows(10, 3, 20);
  for (const char* kind : {"logistic", "naive_bayes", "knn_binary"}) {
    const ModelSpec spec{.name = kind, .family = ModelFamily::binary};
    const FittedPtr a = fit_binary(spec, x, y);
    const FittedPtr b = fit_binary(spec, xs, ys);
    for (int q = 0; q < queries.rows(); ++q) {
      CHECK(a->score(queries.row(q)) == b->score(queries.row(q)));
    }
  }
}

TEST_CASE("logistic regression separates linearly separated classes") {
  Matrix x(0, 0);
  std::vector<int> y;
  Rng rng(21);
  for (int i = 0; i < 40; ++i) {
    const bool outlier = i % 2 == 0;
    x.push_row(std::vector<double>{(outlier ? 3.0 : -3.0) + 0.3 * rng.normal(),
                                   0.5 * rng.normal()});
    y.push_back(outlier ? 1 : 0);
  }
  const ModelSpec spec{.name = "logistic", .family = ModelFamily::binary};
  const FittedPtr model = fit_binary(spec, x, y);
  // score estimates P(Y=0|x): the inlier side sits above 1/2, the outlier
  // side below.
  CHECK(model->score(std::vector<double>{-3.0, 0.0}) > 0.5);
  CHECK(model->score(std::vector<double>{3.0, 0.0}) < 0.5);
  CHECK(model->score(std::vector<double>{-3.0, 0.0}) >
        model->score(std::vector<double>{-1.0, 0.0}));
}

TEST_CASE("naive bayes with identical class likelihoods returns the class-0 prior") {
  Matrix x(0, 0);
  std::vector<int> y;
  // Same two points in both classes: identical per-class mean and variance.
  for (int rep = 0; rep < 2; ++rep) {
    x.push_row(std::vector<double>{-1.0});
    x.push_row(std::vector<double>{1.0});
    y.push_back(0);
    y.push_back(0);
  }
  x.push_row(std::vector<double>{-1.0});
  x.push_row(std::vector<double>{1.0});
  y.push_back(1);
  y.push_back(1);

  const ModelSpec spec{.name = "naive_bayes", .family = ModelFamily::binary};
  const FittedPtr model = fit_binary(spec, x, y);
  CHECK(model->score(std::vector<double>{0.3}) == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("knn binary votes the class-0 fraction") {
  Matrix x(0, 0);
  std::vector<int> y;
  x.push_row(std::vector<double>{0.0});
  y.push_back(0);
  x.push_row(std::vector<double>{0.1});
  y.push_back(0);
  x.push_row(std::vector<double>{0.2});
  y.push_back(1);
  x.push_row(std::vector<double>{50.0});
  y.push_back(1);
  const ModelSpec spec{.name = "knn_binary", .family = ModelFamily::binary,
                       .params = {{"k", 3}}};
  const FittedPtr model = fit_binary(spec, x, y);
  CHECK(model->score(std::vector<double>{0.05}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("binary fit rejects single-class input") {
  const Matrix x = random_rows(10, 2, 22);
  const std::vector<int> y(10, 0);
  for (const char* kind : {"logistic", "naive_bayes", "knn_binary"}) {
    const ModelSpec spec{.name = kind, .family = ModelFamily::binary};
    CHECK_THROWS_WITH_AS(fit_binary(spec, x, y), doctest::Contains("single-class"),
                         NumericError);
  }
}

TEST_CASE("flip negates scores, reverses rankings, and is an involution") {
  const Matrix train = random_rows(30, 2, 23);
  const FittedPtr model = fit_one_class(kKnn, train);
  const FittedPtr flipped = flip(model);
  const FittedPtr twice = flip(flipped);
  const Matrix queries = random_rows(15, 2, 24);

  std::vector<double> s = score_batch(*model, queries);
  std::vector<double> sf = score_batch(*flipped, queries);
  for (int q = 0; q < queries.rows(); ++q) {
    CHECK(sf[q] == -s[q]);
    CHECK(twice->score(queries.row(q)) == s[q]);
  }
  // flip(flip(m)) is the original object again, not a double wrapper.
  CHECK(twice.get() == model.get());

  std::vector<int> order(s.size()), order_f(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::iota(order_f.begin(), order_f.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return s[a] < s[b]; });
  std::sort(order_f.begin(), order_f.end(), [&](int a, int b) { return sf[a] < sf[b]; });
  std::reverse(order_f.begin(), order_f.end());
  CHECK(order == order_f);
}

TEST_CASE("scores are pure: repeated evaluation is identical") {
  const Matrix train = random_rows(25, 2, 25);
  const ModelSpec spec{.name = "isolation_forest", .family = ModelFamily::one_class,
                       .params = {{"trees", 20}}};
  const FittedPtr model = fit_one_class(spec, train);
  const std::vector<double> q{0.4, -1.2};
  const double first = model->score(q);
  for (int i = 0; i < 5; ++i) CHECK(model->score(q) == first);
}

TEST_CASE("toolbox validates names and kinds") {
  Toolbox tb;
  tb.add({.name = "knn", .family = ModelFamily::one_class});
  CHECK_THROWS_AS(tb.add({.name = "knn", .family = ModelFamily::one_class}), ConfigError);
  CHECK_THROWS_AS(tb.add({.name = "mystery", .family = ModelFamily::one_class}), ConfigError);
  CHECK_THROWS_AS(tb.add({.name = "knn2", .kind = "logistic", .family = ModelFamily::one_class}),
                  ConfigError);
  tb.add({.name = "forest-a", .kind = "isolation_forest", .family = ModelFamily::one_class,
          .params = {{"seed", 1}}});
  CHECK(tb.models().size() == 2);
  CHECK(Toolbox::native_default().models().size() == 7);
  CHECK(Toolbox::native_one_class().binary_models().empty());
}
