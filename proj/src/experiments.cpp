#include "conforma/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "conforma/errors.hpp"
#include "conforma/parallel.hpp"
#include "conforma/rng.hpp"
#include "conforma/split_conformal.hpp"
#include "conforma/tcv_plus.hpp"

namespace conforma {

namespace {

Toolbox toolbox_of(const ExperimentConfig& cfg) {
  if (cfg.toolbox.empty()) return Toolbox::native_default();
  Toolbox tb;
  for (const auto& spec : cfg.toolbox) tb.add(spec);
  return tb;
}

// Frozen generator state shared by every replicate of one experiment: the
// mixture component set (or logistic coefficients and intercept) is drawn
// once, only the sampling noise varies per replicate.
struct GeneratorRuntime {
  GeneratorSpec spec;
  std::uint64_t frozen_seed = 0;
  double gamma = 0.0;
  Dataset csv_data;

  Dataset labeled(int n_inlier, int n_outlier, std::uint64_t noise_seed) const {
    if (spec.kind == "gaussian_mixture") {
      GaussianMixtureConfig inlier{.n = n_inlier,
                                   .d = spec.d,
                                   .a = spec.a_inlier,
                                   .n_components = spec.n_components,
                                   .component_box = spec.component_box,
                                   .seed = frozen_seed,
                                   .noise_seed = noise_seed};
      GaussianMixtureConfig outlier = inlier;
      outlier.n = n_outlier;
      outlier.a = spec.a_outlier;
      if (!spec.separate_components) {
        return gen_gaussian_mixture(inlier, outlier, n_inlier, n_outlier);
      }
      // Translated classes: the outliers draw from their own frozen center
      // set, so the class distributions differ in location, not just scale.
      outlier.seed = Rng(frozen_seed).child(12).next_u64();
      Dataset out = gen_gaussian_mixture(inlier, inlier, n_inlier, 0);
      const Dataset outliers = gen_gaussian_mixture(outlier, outlier, 0, n_outlier);
      for (int i = 0; i < outliers.size(); ++i) {
        out.push(LabeledSample{
            {outliers.features_of(i).begin(), outliers.features_of(i).end()}, 1});
      }
      return out;
    }
    if (spec.kind == "logistic") {
      // Labels come out Bernoulli; draw until the requested composition is
      // reached so the caller gets exact counts.
      LogisticModelConfig c{.n = n_inlier + n_outlier,
                            .d = spec.d,
                            .beta_variance = spec.beta_variance,
                            .target_outlier_frac = spec.target_outlier_frac,
                            .mc_samples = spec.mc_samples,
                            .tol = spec.frac_tol,
                            .seed = frozen_seed,
                            .noise_seed = 0};
      Dataset out;
      int need[2] = {n_inlier, n_outlier};
      Rng seq(noise_seed);
      int guard = 0;
      while (need[0] > 0 || need[1] > 0) {
        c.n = std::max(need[0] + need[1], 16);
        c.noise_seed = seq.next_u64();
        const Dataset draw = sample_logistic_model(c, gamma);
        for (int i = 0; i < draw.size() && (need[0] > 0 || need[1] > 0); ++i) {
          const int y = draw.label_of(i);
          if (need[y] > 0) {
            out.push(LabeledSample{{draw.features_of(i).begin(), draw.features_of(i).end()}, y});
            --need[y];
          }
        }
        if (++guard > 10000) throw NumericError("logistic generator: class starvation");
      }
      return out;
    }
    throw ConfigError("generator: unknown kind '" + spec.kind + "'");
  }

  Dataset test_set(int size, double outlier_frac, std::uint64_t noise_seed) const {
    Rng root(noise_seed);
    Rng label_stream = root.child(0);
    std::vector<int> labels(size);
    int n1 = 0;
    for (int t = 0; t < size; ++t) {
      labels[t] = label_stream.uniform() < outlier_frac ? 1 : 0;
      n1 += labels[t];
    }
    const Dataset block = labeled(size - n1, n1, root.child(1).next_u64());
    // The block holds inliers first, then outliers; deal them out in the
    // drawn label order.
    Dataset out;
    int next0 = 0;
    int next1 = size - n1;
    for (int t = 0; t < size; ++t) {
      const int i = labels[t] == 0 ? next0++ : next1++;
      out.push(LabeledSample{{block.features_of(i).begin(), block.features_of(i).end()},
                             labels[t]});
    }
    return out;
  }
};

GeneratorRuntime make_runtime(const ExperimentConfig& cfg) {
  GeneratorRuntime rt;
  rt.spec = cfg.generator;
  rt.frozen_seed = Rng(cfg.seed).child(11).next_u64();
  if (rt.spec.kind == "logistic") {
    LogisticModelConfig c{.n = 1,
                          .d = rt.spec.d,
                          .beta_variance = rt.spec.beta_variance,
                          .target_outlier_frac = rt.spec.target_outlier_frac,
                          .mc_samples = rt.spec.mc_samples,
                          .tol = rt.spec.frac_tol,
                          .seed = rt.frozen_seed};
    rt.gamma = calibrate_intercept(logistic_betas(c), c.target_outlier_frac, c.mc_samples, c.tol,
                                   rt.frozen_seed);
  } else if (rt.spec.kind == "csv") {
    if (rt.spec.csv_path.empty()) throw ConfigError("generator: csv kind needs csv_path");
    rt.csv_data = load_csv(rt.spec.csv_path);
  }
  return rt;
}

struct RepData {
  Dataset labeled;
  Dataset test;
};

RepData replicate_data(const GeneratorRuntime& rt, const ExperimentConfig& cfg,
                       std::uint64_t rep) {
  Rng root = Rng(cfg.seed).child(rep);
  if (rt.spec.kind == "csv") {
    // Resample the test assignment from the fixed table.
    std::vector<int> idx(rt.csv_data.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng shuffler = root.child(0);
    shuffler.shuffle(idx);
    if (cfg.test_size >= rt.csv_data.size()) {
      throw ConfigError("csv generator: test_size must be below the table size");
    }
    RepData data;
    for (int i = 0; i < static_cast<int>(idx.size()); ++i) {
      const LabeledSample s{
          {rt.csv_data.features_of(idx[i]).begin(), rt.csv_data.features_of(idx[i]).end()},
          rt.csv_data.label_of(idx[i])};
      (i < cfg.test_size ? data.test : data.labeled).push(s);
    }
    return data;
  }
  RepData data;
  data.labeled = rt.labeled(cfg.n_inliers, cfg.n_outliers, root.child(1).next_u64());
  data.test = rt.test_set(cfg.test_size, cfg.test_outlier_frac, root.child(2).next_u64());
  return data;
}

double binomial_stderr(double rate, double n) {
  return n > 0 ? std::sqrt(std::max(rate * (1.0 - rate), 0.0) / n) : 0.0;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return saa > 0.0 && sbb > 0.0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

std::vector<double> u_values(const std::vector<PValueRecord>& recs) {
  std::vector<double> u(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) u[i] = recs[i].u;
  return u;
}

ModelSpec first_one_class(const Toolbox& tb) {
  const auto one_class = tb.one_class_models();
  if (one_class.empty()) throw ConfigError("experiment: toolbox has no one-class model");
  return one_class.front();
}

}  // namespace

Dataset generate_labeled(const ExperimentConfig& cfg, int n_inlier, int n_outlier,
                         std::uint64_t noise_seed) {
  return make_runtime(cfg).labeled(n_inlier, n_outlier, noise_seed);
}

Dataset run_gen(const ExperimentConfig& cfg) {
  set_threads(cfg.threads);
  const GeneratorRuntime rt = make_runtime(cfg);
  if (rt.spec.kind == "csv") return rt.csv_data;
  return rt.labeled(cfg.n_inliers, cfg.n_outliers, Rng(cfg.seed).child(1).next_u64());
}

CsvTable run_validity(const ExperimentConfig& cfg) {
  set_threads(cfg.threads);
  const GeneratorRuntime rt = make_runtime(cfg);
  const Toolbox tb = toolbox_of(cfg);
  const ModelSpec single = first_one_class(tb);
  std::vector<std::string> methods =
      cfg.methods.empty() ? std::vector<std::string>{"algorithm1", "algorithm2", "tcv"}
                          : cfg.methods;

  const int R = cfg.replicates;
  std::vector<std::vector<double>> u(methods.size(), std::vector<double>(R, 1.0));

  parallel_for(R, [&](int rep) {
    Rng root = Rng(cfg.seed).child(rep);
    const Dataset labeled = rt.labeled(cfg.n_inliers, cfg.n_outliers, root.child(1).next_u64());
    const Dataset null_point = rt.test_set(1, 0.0, root.child(2).next_u64());
    const auto x = null_point.features_of(0);
    const SplitPartition part =
        split(labeled, cfg.train_frac, cfg.train_frac, root.child(3).next_u64());

    for (std::size_t m = 0; m < methods.size(); ++m) {
      if (methods[m] == "algorithm1") {
        const FittedPtr f0 = fit_one_class(single, labeled.gather(part.d0_train));
        const FittedPtr f1 = fit_one_class(single, labeled.gather(part.d1_train));
        u[m][rep] = integrative_pvalue(*f0, *f1, labeled.gather(part.d0_cal),
                                       labeled.gather(part.d1_cal), x)
                        .u;
      } else if (methods[m] == "algorithm2") {
        SplitEngine engine(labeled, part, tb);
        u[m][rep] = engine.pvalue(x).u;
      } else if (methods[m] == "tcv") {
        const Matrix d0 = labeled.gather(labeled.inlier_indices());
        const Matrix d1 = labeled.gather(labeled.outlier_indices());
        u[m][rep] = tcv_with_selection(d0, d1, x, tb, cfg.K0, cfg.K1,
                                       root.child(4).next_u64())
                        .u;
      } else {
        throw ConfigError("run_validity: unknown method '" + methods[m] + "'");
      }
    }
  });

  CsvTable out;
  out.header = {"method", "alpha", "rate", "stderr", "replicates"};
  for (std::size_t m = 0; m < methods.size(); ++m) {
    int hits = 0;
    for (double v : u[m]) hits += v <= cfg.alpha ? 1 : 0;
    const double rate = static_cast<double>(hits) / R;
    out.add_row({methods[m], format_double(cfg.alpha), format_double(rate),
                 format_double(binomial_stderr(rate, R)), std::to_string(R)});
  }
  if (!cfg.out.empty()) out.write(cfg.out);
  return out;
}

namespace {

struct FdrRow {
  std::string method;
  int rep;
  int rejections;
  double fdp;
  double power;
  bool pruned;
};

void emit_fdr_rows(CsvTable& out, const std::vector<std::vector<FdrRow>>& per_rep, double alpha) {
  out.header = {"method", "alpha", "rep", "rejections", "fdp", "power", "pruned"};
  for (const auto& rows : per_rep) {
    for (const auto& r : rows) {
      out.add_row({r.method, format_double(alpha), std::to_string(r.rep),
                   std::to_string(r.rejections), format_double(r.fdp), format_double(r.power),
                   r.pruned ? "1" : "0"});
    }
  }
}

}  // namespace

CsvTable run_fdr_power(const ExperimentConfig& cfg) {
  set_threads(cfg.threads);
  const GeneratorRuntime rt = make_runtime(cfg);
  const Toolbox tb = toolbox_of(cfg);
  const std::vector<std::string> methods =
      cfg.methods.empty() ? std::vector<std::string>{"bh", "storey", "by"} : cfg.methods;
  const CombineRule combine =
      cfg.pvalue_method == "ensemble" ? CombineRule::u0_only : CombineRule::ratio;
  const CcSelection cc_mode =
      cfg.cc_selection == "frozen" ? CcSelection::frozen : CcSelection::faithful;

  const int R = cfg.replicates;
  std::vector<std::vector<FdrRow>> rows(R);

  parallel_for(R, [&](int rep) {
    Rng root = Rng(cfg.seed).child(rep);
    const RepData data = replicate_data(rt, cfg, rep);
    const SplitPartition part =
        split(data.labeled, cfg.train_frac, cfg.train_frac, root.child(3).next_u64());
    SplitEngine engine(data.labeled, part, tb, SplitOptions{.combine = combine});
    const SplitScoreTable table = engine.score_table(data.test.features());
    const std::vector<double> u = u_values(table_pvalues(table));

    for (const auto& method : methods) {
      RejectionResult res;
      if (method == "bh") {
        res = bh(u, cfg.alpha);
      } else if (method == "storey") {
        res = storey_bh(u, cfg.alpha, cfg.storey_lambda);
      } else if (method == "by") {
        res = by(u, cfg.alpha);
      } else if (method == "cc") {
        res = conditional_calibration_split(table, cfg.alpha, root.child(4).next_u64(), cc_mode);
      } else {
        throw ConfigError("run_fdr_power: unknown method '" + method + "'");
      }
      const auto [fdp, power] = fdp_power(res.rejected, data.test.labels());
      rows[rep].push_back(
          {method, rep, static_cast<int>(res.rejected.size()), fdp, power, res.pruned});
    }
  });

  CsvTable out;
  emit_fdr_rows(out, rows, cfg.alpha);
  if (!cfg.out.empty()) out.write(cfg.out);
  return out;
}

CsvTable run_conditional_calibration_compare(const ExperimentConfig& cfg) {
  ExperimentConfig preset = cfg;
  if (preset.methods.empty()) preset.methods = {"bh", "by", "cc"};
  preset.test_size = cfg.test_size == 200 ? 10 : cfg.test_size;  // small test set by default
  return run_fdr_power(preset);
}

CsvTable run_tcv_compare(const ExperimentConfig& cfg) {
  set_threads(cfg.threads);
  const GeneratorRuntime rt = make_runtime(cfg);
  const Toolbox tb = toolbox_of(cfg);

  const int R = cfg.replicates;
  std::vector<std::vector<FdrRow>> rows(R);

  parallel_for(R, [&](int rep) {
    Rng root = Rng(cfg.seed).child(rep);
    const RepData data = replicate_data(rt, cfg, rep);
    const SplitPartition part =
        split(data.labeled, cfg.train_frac, cfg.train_frac, root.child(3).next_u64());

    SplitEngine engine(data.labeled, part, tb);
    const std::vector<double> u_split = u_values(engine.pvalue_batch(data.test.features()));

    const Matrix d0 = data.labeled.gather(data.labeled.inlier_indices());
    const Matrix d1 = data.labeled.gather(data.labeled.outlier_indices());
    const std::vector<double> u_tcv = u_values(
        tcv_batch(d0, d1, data.test.features(), tb, cfg.K0, cfg.K1, root.child(4).next_u64()));

    for (const auto& [name, u] : {std::pair{"split", &u_split}, std::pair{"tcv", &u_tcv}}) {
      const RejectionResult res = storey_bh(*u, cfg.alpha, cfg.storey_lambda);
      const auto [fdp, power] = fdp_power(res.rejected, data.test.labels());
      rows[rep].push_back({name, rep, static_cast<int>(res.rejected.size()), fdp, power, false});
    }
  });

  CsvTable out;
  emit_fdr_rows(out, rows, cfg.alpha);
  if (!cfg.out.empty()) out.write(cfg.out);
  return out;
}

CsvTable run_greedy_demo(const ExperimentConfig& cfg) {
  set_threads(cfg.threads);
  const GeneratorRuntime rt = make_runtime(cfg);
  const int n_models_max = *std::max_element(cfg.model_counts.begin(), cfg.model_counts.end());
  const int R = cfg.replicates;

  // Seed-duplicated stochastic one-class models.
  std::vector<ModelSpec> specs;
  for (int i = 0; i < n_models_max; ++i) {
    specs.push_back(ModelSpec{.name = "iforest#" + std::to_string(i),
                              .kind = "isolation_forest",
                              .family = ModelFamily::one_class,
                              .params = {{"seed", static_cast<double>(i)},
                                         {"trees", 25},
                                         {"subsample", 64}}});
  }

  struct Counts {
    long fp = 0, nulls = 0, tp = 0, outliers = 0;
  };
  const std::vector<std::string> methods = {"greedy", "standard", "integrative"};
  // counts[count_index][method]
  std::vector<std::vector<Counts>> counts(R);

  parallel_for(R, [&](int rep) {
    Rng root = Rng(cfg.seed).child(rep);
    const RepData data = replicate_data(rt, cfg, rep);
    const SplitPartition part =
        split(data.labeled, cfg.train_frac, cfg.train_frac, root.child(3).next_u64());
    const Matrix d0_train = data.labeled.gather(part.d0_train);
    const Matrix d0_cal = data.labeled.gather(part.d0_cal);
    const Matrix d1_train = data.labeled.gather(part.d1_train);
    const Matrix d1_cal = data.labeled.gather(part.d1_cal);
    const Matrix& tests = data.test.features();
    const std::vector<int>& labels = data.test.labels();
    const int n_tests = tests.rows();

    // Fit the full model bank once; prefixes serve every sweep point.
    struct Bank {
      std::vector<double> cal0, cal1, test;
    };
    std::vector<Bank> bank0(n_models_max), bank1(n_models_max);
    for (int m = 0; m < n_models_max; ++m) {
      const FittedPtr f0 = fit_one_class(specs[m], d0_train);
      bank0[m] = {score_batch(*f0, d0_cal), score_batch(*f0, d1_cal), score_batch(*f0, tests)};
      const FittedPtr f1 = fit_one_class(specs[m], d1_train);
      bank1[m] = {score_batch(*f1, d0_cal), score_batch(*f1, d1_cal), score_batch(*f1, tests)};
    }

    // Standard p-values per model and test point.
    std::vector<std::vector<double>> p_std(n_models_max, std::vector<double>(n_tests));
    for (int m = 0; m < n_models_max; ++m) {
      for (int t = 0; t < n_tests; ++t) {
        p_std[m][t] = standard_pvalue_inlier(bank0[m].test[t], bank0[m].cal0);
      }
    }

    counts[rep].assign(cfg.model_counts.size() * methods.size(), Counts{});
    for (std::size_t ci = 0; ci < cfg.model_counts.size(); ++ci) {
      const int M = cfg.model_counts[ci];

      int greedy_pick = 0;
      int best_rejections = -1;
      for (int m = 0; m < M; ++m) {
        int rejections = 0;
        for (int t = 0; t < n_tests; ++t) rejections += p_std[m][t] <= cfg.fixed_threshold;
        if (rejections > best_rejections) {
          best_rejections = rejections;
          greedy_pick = m;
        }
      }

      SplitScoreTable table;
      for (int m = 0; m < M; ++m) {
        table.m0.push_back({specs[m].name, bank0[m].cal0, bank0[m].cal1, bank0[m].test});
        SplitScoreTable::Entry flip0{specs[m].name + ":flip", bank0[m].cal0, bank0[m].cal1,
                                     bank0[m].test};
        for (auto* v : {&flip0.cal0, &flip0.cal1, &flip0.test})
          for (double& s : *v) s = -s;
        table.m0.push_back(std::move(flip0));
        table.m1.push_back({specs[m].name, bank1[m].cal0, bank1[m].cal1, bank1[m].test});
        SplitScoreTable::Entry flip1{specs[m].name + ":flip", bank1[m].cal0, bank1[m].cal1,
                                     bank1[m].test};
        for (auto* v : {&flip1.cal0, &flip1.cal1, &flip1.test})
          for (double& s : *v) s = -s;
        table.m1.push_back(std::move(flip1));
      }
      const std::vector<double> u_int = u_values(table_pvalues(table));

      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        Counts& c = counts[rep][ci * methods.size() + mi];
        for (int t = 0; t < n_tests; ++t) {
          double p = 1.0;
          if (methods[mi] == "greedy") {
            p = p_std[greedy_pick][t];
          } else if (methods[mi] == "standard") {
            p = p_std[0][t];
          } else {
            p = u_int[t];
          }
          const bool reject = p <= cfg.fixed_threshold;
          if (labels[t] == 0) {
            ++c.nulls;
            c.fp += reject;
          } else {
            ++c.outliers;
            c.tp += reject;
          }
        }
      }
    }
  });

  CsvTable out;
  out.header = {"n_models", "method", "tpr", "fpr", "fpr_stderr", "replicates"};
  for (std::size_t ci = 0; ci < cfg.model_counts.size(); ++ci) {
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      Counts total;
      for (int rep = 0; rep < R; ++rep) {
        const Counts& c = counts[rep][ci * methods.size() + mi];
        total.fp += c.fp;
        total.nulls += c.nulls;
        total.tp += c.tp;
        total.outliers += c.outliers;
      }
      const double fpr = total.nulls > 0 ? static_cast<double>(total.fp) / total.nulls : 0.0;
      const double tpr = total.outliers > 0 ? static_cast<double>(total.tp) / total.outliers : 0.0;
      out.add_row({std::to_string(cfg.model_counts[ci]), methods[mi], format_double(tpr),
                   format_double(fpr),
                   format_double(binomial_stderr(fpr, static_cast<double>(total.nulls))),
                   std::to_string(R)});
    }
  }
  if (!cfg.out.empty()) out.write(cfg.out);
  return out;
}

CsvTable run_correlation(const ExperimentConfig& cfg) {
  set_threads(cfg.threads);
  const GeneratorRuntime rt = make_runtime(cfg);
  const ModelSpec model = first_one_class(toolbox_of(cfg));
  const std::vector<std::string> methods =
      cfg.methods.empty() ? std::vector<std::string>{"integrative", "standard", "independent"}
                          : cfg.methods;
  const int R = cfg.replicates;

  CsvTable out;
  out.header = {"n0", "method", "corr", "stderr", "reference"};
  for (int n0 : cfg.n0_grid) {
    // u-value pairs per method
    std::vector<std::vector<double>> ua(methods.size(), std::vector<double>(R));
    std::vector<std::vector<double>> ub(methods.size(), std::vector<double>(R));

    parallel_for(R, [&](int rep) {
      Rng root = Rng(cfg.seed).child(static_cast<std::uint64_t>(n0)).child(rep);
      const double frac = (cfg.n0_train + 0.5) / (cfg.n0_train + n0);
      const Dataset labeled =
          rt.labeled(cfg.n0_train + n0, cfg.n_outliers, root.child(1).next_u64());
      const SplitPartition part = split(labeled, frac, cfg.train_frac, root.child(2).next_u64());
      const Matrix d0_cal = labeled.gather(part.d0_cal);
      const Matrix d1_cal = labeled.gather(part.d1_cal);
      const FittedPtr f0 = fit_one_class(model, labeled.gather(part.d0_train));
      const FittedPtr f1 = fit_one_class(model, labeled.gather(part.d1_train));

      const Dataset pair = rt.test_set(2, 0.0, root.child(3).next_u64());
      const auto xa = pair.features_of(0);
      const auto xb = pair.features_of(1);

      for (std::size_t m = 0; m < methods.size(); ++m) {
        if (methods[m] == "integrative") {
          ua[m][rep] = integrative_pvalue(*f0, *f1, d0_cal, d1_cal, xa).u;
          ub[m][rep] = integrative_pvalue(*f0, *f1, d0_cal, d1_cal, xb).u;
        } else if (methods[m] == "standard") {
          const std::vector<double> cal = score_batch(*f0, d0_cal);
          ua[m][rep] = standard_pvalue_inlier(f0->score(xa), cal);
          ub[m][rep] = standard_pvalue_inlier(f0->score(xb), cal);
        } else if (methods[m] == "independent") {
          const Dataset cal_b = rt.labeled(n0, 0, root.child(4).next_u64());
          const std::vector<double> cal1 = score_batch(*f0, d0_cal);
          const std::vector<double> cal2 = score_batch(*f0, cal_b.features());
          ua[m][rep] = standard_pvalue_inlier(f0->score(xa), cal1);
          ub[m][rep] = standard_pvalue_inlier(f0->score(xb), cal2);
        } else {
          throw ConfigError("run_correlation: unknown method '" + methods[m] + "'");
        }
      }
    });

    for (std::size_t m = 0; m < methods.size(); ++m) {
      const double r = pearson(ua[m], ub[m]);
      const double se = (1.0 - r * r) / std::sqrt(std::max(R - 3, 1));
      out.add_row({std::to_string(n0), methods[m], format_double(r), format_double(se),
                   format_double(1.0 / n0)});
    }
  }
  if (!cfg.out.empty()) out.write(cfg.out);
  return out;
}

CsvTable run_power_analysis(const ExperimentConfig& cfg) {
  set_threads(cfg.threads);
  const GeneratorRuntime rt = make_runtime(cfg);
  const int R = cfg.replicates;

  CsvTable out;
  out.header = {"n1", "bandwidth_scale", "ratio", "power_weighted", "power_unweighted",
                "replicates"};
  for (int n1 : cfg.n1_grid) {
    for (double bw : cfg.bandwidth_grid) {
      const ModelSpec kde{.name = "kde",
                          .family = ModelFamily::one_class,
                          .params = {{"bandwidth_scale", bw}}};
      std::vector<double> power_w(R), power_u(R), ratios(R);

      parallel_for(R, [&](int rep) {
        Rng root = Rng(cfg.seed)
                       .child(static_cast<std::uint64_t>(n1))
                       .child(static_cast<std::uint64_t>(bw * 1024))
                       .child(rep);
        const Dataset labeled = rt.labeled(cfg.n_inliers, 2 * n1, root.child(1).next_u64());
        const Dataset test =
            rt.test_set(cfg.test_size, cfg.test_outlier_frac, root.child(2).next_u64());
        const SplitPartition part =
            split(labeled, cfg.train_frac, 0.5, root.child(3).next_u64());
        const Matrix d0_cal = labeled.gather(part.d0_cal);
        const Matrix d1_cal = labeled.gather(part.d1_cal);
        const FittedPtr f0 = fit_one_class(kde, labeled.gather(part.d0_train));
        const FittedPtr f1 = fit_one_class(kde, labeled.gather(part.d1_train));
        const std::vector<double> cal0 = score_batch(*f0, d0_cal);

        const int m = test.size();
        std::vector<double> u_weighted(m), u_plain(m), u1_null;
        for (int t = 0; t < m; ++t) {
          const PValueRecord rec =
              integrative_pvalue(*f0, *f1, d0_cal, d1_cal, test.features_of(t));
          u_weighted[t] = rec.u;
          u_plain[t] = standard_pvalue_inlier(f0->score(test.features_of(t)), cal0);
          if (test.label_of(t) == 0) u1_null.push_back(rec.u1);
        }
        ratios[rep] = u1_null.empty()
                          ? 1.0
                          : informativeness_ratio(u1_null, static_cast<int>(d1_cal.rows()));
        power_w[rep] = fdp_power(bh(u_weighted, cfg.alpha).rejected, test.labels()).second;
        power_u[rep] = fdp_power(bh(u_plain, cfg.alpha).rejected, test.labels()).second;
      });

      out.add_row({std::to_string(n1), format_double(bw), format_double(mean_of(ratios)),
                   format_double(mean_of(power_w)), format_double(mean_of(power_u)),
                   std::to_string(R)});
    }
  }
  if (!cfg.out.empty()) out.write(cfg.out);
  return out;
}

CsvTable run_pvalues_batch(const ExperimentConfig& cfg) {
  set_threads(cfg.threads);
  const GeneratorRuntime rt = make_runtime(cfg);
  const Toolbox tb = toolbox_of(cfg);
  const RepData data = replicate_data(rt, cfg, 0);
  Rng root = Rng(cfg.seed).child(0);
  const SplitPartition part =
      split(data.labeled, cfg.train_frac, cfg.train_frac, root.child(3).next_u64());
  const CombineRule combine =
      cfg.pvalue_method == "ensemble" ? CombineRule::u0_only : CombineRule::ratio;
  SplitEngine engine(data.labeled, part, tb, SplitOptions{.combine = combine});
  const std::vector<PValueRecord> recs = engine.pvalue_batch(data.test.features());

  CsvTable out;
  out.header = {"test_id", "u0", "u1", "r", "u", "model0", "model1"};
  for (std::size_t t = 0; t < recs.size(); ++t) {
    out.add_row({std::to_string(t), format_double(recs[t].u0), format_double(recs[t].u1),
                 format_double(recs[t].r), format_double(recs[t].u), recs[t].selected_model_0,
                 recs[t].selected_model_1});
  }
  if (!cfg.out.empty()) out.write(cfg.out);
  return out;
}

CsvTable run_tcv_batch(const ExperimentConfig& cfg) {
  set_threads(cfg.threads);
  const GeneratorRuntime rt = make_runtime(cfg);
  const Toolbox tb = toolbox_of(cfg);
  const RepData data = replicate_data(rt, cfg, 0);
  const Matrix d0 = data.labeled.gather(data.labeled.inlier_indices());
  const Matrix d1 = data.labeled.gather(data.labeled.outlier_indices());
  const std::vector<PValueRecord> recs =
      tcv_batch(d0, d1, data.test.features(), tb, cfg.K0, cfg.K1,
                Rng(cfg.seed).child(4).next_u64());

  CsvTable out;
  out.header = {"test_id", "u0", "u1", "r", "u", "model0", "model1", "K0", "K1"};
  for (std::size_t t = 0; t < recs.size(); ++t) {
    out.add_row({std::to_string(t), format_double(recs[t].u0), format_double(recs[t].u1),
                 format_double(recs[t].r), format_double(recs[t].u), recs[t].selected_model_0,
                 recs[t].selected_model_1, std::to_string(cfg.K0), std::to_string(cfg.K1)});
  }
  if (!cfg.out.empty()) out.write(cfg.out);
  return out;
}

CsvTable run_predset(const ExperimentConfig& cfg) {
  set_threads(cfg.threads);
  if (cfg.n_classes < 2) throw ConfigError("predset: n_classes must be >= 2");
  const int d = std::max(2, cfg.generator.d);
  const int C = cfg.n_classes;

  // Gaussian blobs with class centers on a circle in the first two
  // coordinates.
  auto class_center = [&](int c) {
    std::vector<double> center(d, 0.0);
    const double angle = 2.0 * 3.14159265358979323846 * c / C;
    center[0] = cfg.class_separation * std::cos(angle);
    center[1] = cfg.class_separation * std::sin(angle);
    return center;
  };
  auto draw = [&](Rng& rng, int c) {
    std::vector<double> x = class_center(c);
    for (int j = 0; j < d; ++j) x[j] += rng.normal();
    return x;
  };

  Rng root(cfg.seed);
  Rng train_rng = root.child(1);
  Matrix xs(0, 0);
  std::vector<int> ys;
  for (int i = 0; i < cfg.n_inliers; ++i) {
    const int c = i % C;
    xs.push_row(draw(train_rng, c));
    ys.push_back(c);
  }

  Rng test_rng = root.child(2);
  Matrix test_x(0, 0);
  std::vector<int> test_y;
  for (int t = 0; t < cfg.test_size; ++t) {
    const int c = test_rng.index(C);
    test_x.push_row(draw(test_rng, c));
    test_y.push_back(c);
  }

  const MulticlassSpec spec{.kind = cfg.predset_model, .params = {}};
  std::vector<std::vector<int>> sets(cfg.test_size);
  parallel_for(cfg.test_size, [&](int t) {
    const PredictionSetOptions opt{.K = cfg.K0, .alpha = cfg.alpha,
                                   .seed = Rng(cfg.seed).child(3).child(t).next_u64()};
    sets[t] = cfg.label_conditional
                  ? tcv_label_conditional_prediction_set(xs, ys, C, test_x.row(t), spec, opt)
                  : tcv_prediction_set(xs, ys, C, test_x.row(t), spec, opt);
  });

  CsvTable out;
  out.header = {"test_id", "labels"};
  for (int t = 0; t < cfg.test_size; ++t) {
    std::string joined;
    for (std::size_t i = 0; i < sets[t].size(); ++i) {
      if (i) joined += ';';
      joined += std::to_string(sets[t][i]);
    }
    out.add_row({std::to_string(t), joined});
  }
  if (!cfg.out.empty()) out.write(cfg.out);
  return out;
}

}  // namespace conforma
