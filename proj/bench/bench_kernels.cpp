// Compares the OpenMP batch kernels against the serial brute-force
// reference on identical inputs, checking for exact agreement and printing
// a timing table. Run with OMP_NUM_THREADS=1 to see the serial baseline of
// the parallel paths themselves.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "conforma/dataset.hpp"
#include "conforma/experiments.hpp"
#include "conforma/parallel.hpp"
#include "conforma/rng.hpp"
#include "conforma/scoring.hpp"
#include "conforma/split_conformal.hpp"
#include "reference.hpp"

using namespace conforma;

namespace {

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

void print_row(const char* kernel, double serial_ms, double parallel_ms, bool match) {
  std::printf("%-28s %10.1f %12.1f %9.2fx   %s\n", kernel, serial_ms, parallel_ms,
              serial_ms / parallel_ms, match ? "exact" : "MISMATCH");
}

Matrix random_rows(int n, int d, Rng& rng) {
  Matrix m(0, 0);
  std::vector<double> row(d);
  for (int i = 0; i < n; ++i) {
    for (double& v : row) v = rng.normal();
    m.push_row(row);
  }
  return m;
}

}  // namespace

int main() {
  std::printf("threads available: %d\n\n", max_threads());
  std::printf("%-28s %10s %12s %10s   %s\n", "kernel", "serial ms", "parallel ms", "speedup",
              "result");

  Rng rng(42);

  // 1. Batch one-class scoring: parallel score_batch vs a serial loop over
  //    the brute-force k-th distance.
  {
    const int n_train = 1500, d = 16, n_query = 3000, k = 5;
    const Matrix train = random_rows(n_train, d, rng);
    const Matrix queries = random_rows(n_query, d, rng);
    std::vector<std::vector<double>> train_rows;
    for (int i = 0; i < n_train; ++i) {
      train_rows.emplace_back(train.row(i).begin(), train.row(i).end());
    }

    auto t0 = std::chrono::steady_clock::now();
    std::vector<double> serial(n_query);
    for (int q = 0; q < n_query; ++q) {
      const std::vector<double> x(queries.row(q).begin(), queries.row(q).end());
      serial[q] = -refimpl::knn_kth_distance(train_rows, x, k);
    }
    const double serial_ms = ms_since(t0);

    const ModelSpec knn{.name = "knn", .family = ModelFamily::one_class,
                        .params = {{"k", static_cast<double>(k)}}};
    const FittedPtr model = fit_one_class(knn, train);
    t0 = std::chrono::steady_clock::now();
    const std::vector<double> parallel = score_batch(*model, queries);
    const double parallel_ms = ms_since(t0);

    bool match = true;
    for (int q = 0; q < n_query; ++q) {
      if (std::abs(serial[q] - parallel[q]) > 1e-12) match = false;
    }
    print_row("knn score_batch", serial_ms, parallel_ms, match);
  }

  // 2. Batch integrative p-values from a score table: parallel table
  //    evaluation vs the serial enumeration oracle.
  {
    const int n0 = 600, n1 = 250, m = 2500;
    SplitScoreTable table;
    auto draw = [&rng](int n) {
      std::vector<double> v(n);
      for (double& s : v) s = rng.normal();
      return v;
    };
    table.m0.push_back({"m0", draw(n0), draw(n1), draw(m)});
    table.m1.push_back({"m1", draw(n0), draw(n1), draw(m)});

    auto t0 = std::chrono::steady_clock::now();
    std::vector<double> serial(m);
    for (int t = 0; t < m; ++t) {
      std::vector<double> s0_aug{table.m0[0].test[t]};
      std::vector<double> s1_aug{table.m1[0].test[t]};
      s0_aug.insert(s0_aug.end(), table.m0[0].cal0.begin(), table.m0[0].cal0.end());
      s1_aug.insert(s1_aug.end(), table.m1[0].cal0.begin(), table.m1[0].cal0.end());
      serial[t] = refimpl::integrative(s0_aug, s1_aug, table.m1[0].cal1).u;
    }
    const double serial_ms = ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    const std::vector<PValueRecord> recs = table_pvalues(table);
    const double parallel_ms = ms_since(t0);

    bool match = true;
    for (int t = 0; t < m; ++t) {
      if (recs[t].u != serial[t]) match = false;
    }
    print_row("integrative p-value batch", serial_ms, parallel_ms, match);
  }

  // 3. Monte Carlo validity study: one worker thread vs all of them.
  {
    ExperimentConfig cfg;
    cfg.generator.d = 10;
    cfg.generator.n_components = 10;
    cfg.n_inliers = 40;
    cfg.n_outliers = 20;
    cfg.replicates = 200;
    cfg.seed = 7;
    cfg.methods = {"algorithm1", "algorithm2"};
    cfg.toolbox = {{.name = "knn", .family = ModelFamily::one_class},
                   {.name = "kde", .family = ModelFamily::one_class}};

    cfg.threads = 1;
    auto t0 = std::chrono::steady_clock::now();
    const std::string serial_csv = run_validity(cfg).to_string();
    const double serial_ms = ms_since(t0);

    cfg.threads = max_threads();
    t0 = std::chrono::steady_clock::now();
    const std::string parallel_csv = run_validity(cfg).to_string();
    const double parallel_ms = ms_since(t0);

    print_row("validity study (200 reps)", serial_ms, parallel_ms,
              serial_csv == parallel_csv);
  }

  return 0;
}
