#include "conforma/config_json.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "conforma/errors.hpp"

namespace conforma {

namespace {

using json = nlohmann::json;

template <typename T>
void read_field(const json& j, const char* key, T& into) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

ModelSpec parse_model(const json& j) {
  ModelSpec spec;
  read_field(j, "name", spec.name);
  read_field(j, "kind", spec.kind);
  std::string family = "one_class";
  read_field(j, "family", family);
  if (family == "one_class") {
    spec.family = ModelFamily::one_class;
  } else if (family == "binary") {
    spec.family = ModelFamily::binary;
  } else {
    throw ConfigError("model family must be one_class or binary, got '" + family + "'");
  }
  if (j.contains("params")) {
    for (const auto& [key, value] : j.at("params").items()) {
      if (!value.is_number()) throw ConfigError("model param '" + key + "' must be numeric");
      spec.params[key] = value.get<double>();
    }
  }
  return spec;
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }

  ExperimentConfig cfg;
  if (j.contains("generator")) {
    const json& g = j.at("generator");
    read_field(g, "kind", cfg.generator.kind);
    read_field(g, "d", cfg.generator.d);
    read_field(g, "a_inlier", cfg.generator.a_inlier);
    read_field(g, "a_outlier", cfg.generator.a_outlier);
    read_field(g, "n_components", cfg.generator.n_components);
    read_field(g, "component_box", cfg.generator.component_box);
    read_field(g, "separate_components", cfg.generator.separate_components);
    read_field(g, "beta_variance", cfg.generator.beta_variance);
    read_field(g, "target_outlier_frac", cfg.generator.target_outlier_frac);
    read_field(g, "mc_samples", cfg.generator.mc_samples);
    read_field(g, "frac_tol", cfg.generator.frac_tol);
    read_field(g, "csv_path", cfg.generator.csv_path);
  }
  if (j.contains("toolbox")) {
    if (!j.at("toolbox").is_array()) throw ConfigError("config field 'toolbox' must be an array");
    for (const json& m : j.at("toolbox")) cfg.toolbox.push_back(parse_model(m));
  }
  read_field(j, "n_inliers", cfg.n_inliers);
  read_field(j, "n_outliers", cfg.n_outliers);
  read_field(j, "train_frac", cfg.train_frac);
  read_field(j, "test_size", cfg.test_size);
  read_field(j, "test_outlier_frac", cfg.test_outlier_frac);
  read_field(j, "methods", cfg.methods);
  read_field(j, "alpha", cfg.alpha);
  read_field(j, "storey_lambda", cfg.storey_lambda);
  read_field(j, "fixed_threshold", cfg.fixed_threshold);
  read_field(j, "pvalue_method", cfg.pvalue_method);
  read_field(j, "cc_selection", cfg.cc_selection);
  read_field(j, "replicates", cfg.replicates);
  read_field(j, "seed", cfg.seed);
  read_field(j, "K0", cfg.K0);
  read_field(j, "K1", cfg.K1);
  read_field(j, "model_counts", cfg.model_counts);
  read_field(j, "n0_grid", cfg.n0_grid);
  read_field(j, "n0_train", cfg.n0_train);
  read_field(j, "bandwidth_grid", cfg.bandwidth_grid);
  read_field(j, "n1_grid", cfg.n1_grid);
  read_field(j, "n_classes", cfg.n_classes);
  read_field(j, "class_separation", cfg.class_separation);
  read_field(j, "predset_model", cfg.predset_model);
  read_field(j, "label_conditional", cfg.label_conditional);
  read_field(j, "threads", cfg.threads);
  read_field(j, "out", cfg.out);

  if (cfg.replicates < 1) throw ConfigError("replicates must be >= 1");
  if (cfg.alpha <= 0.0 || cfg.alpha >= 1.0) throw ConfigError("alpha must lie in (0,1)");
  if (cfg.train_frac <= 0.0 || cfg.train_frac >= 1.0) {
    throw ConfigError("train_frac must lie in (0,1)");
  }

  // Fail fast on unknown model kinds: every referenced name must resolve in
  // the registry.
  if (!cfg.toolbox.empty()) {
    Toolbox tb;
    for (const auto& spec : cfg.toolbox) tb.add(spec);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_json(buffer.str());
}

}  // namespace conforma
