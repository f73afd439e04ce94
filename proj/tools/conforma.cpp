// conforma: split-conformal and TCV+ integrative p-values, FDR procedures,
// and the synthetic-experiment harness, driven by a JSON config file.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.

#include <CLI11.hpp>
#include <exception>
#include <iostream>
#include <string>

#include "conforma/config_json.hpp"
#include "conforma/csv.hpp"
#include "conforma/errors.hpp"
#include "conforma/experiments.hpp"

namespace {

struct CliArgs {
  std::string config_path;
  std::string mode;
  bool has_seed = false;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Integrative conformal p-values for out-of-distribution testing"};
  app.require_subcommand(1);

  CliArgs args;
  auto add_common = [&args](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "JSON experiment config")->required();
    cmd->add_option("--seed", args.seed, "master seed override")
        ->each([&args](const std::string&) { args.has_seed = true; });
    cmd->add_option("--out", args.out, "output CSV path override");
    cmd->add_option("--threads", args.threads, "worker thread count (0 = default)");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset as CSV");
  CLI::App* pvalues =
      app.add_subcommand("pvalues", "split-conformal p-values (batch or validity study)");
  pvalues->add_option("--mode", args.mode, "batch (default) or validity");
  CLI::App* tcv = app.add_subcommand("tcv", "TCV+ p-values (batch or split-vs-TCV+ comparison)");
  tcv->add_option("--mode", args.mode, "batch (default) or compare");
  CLI::App* fdr =
      app.add_subcommand("fdr", "FDR/power study (BH, Storey, BY, conditional calibration)");
  fdr->add_option("--mode", args.mode, "power (default) or cc_compare");
  CLI::App* greedy = app.add_subcommand("demo-greedy", "greedy model selection invalidity demo");
  CLI::App* corr = app.add_subcommand("corr", "pairwise p-value correlation study");
  CLI::App* power =
      app.add_subcommand("power-study", "weighted-vs-unweighted power and informativeness sweep");
  CLI::App* predset = app.add_subcommand("predset", "TCV+ multi-class prediction sets");
  for (CLI::App* cmd : {gen, pvalues, tcv, fdr, greedy, corr, power, predset}) add_common(cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    conforma::ExperimentConfig cfg = conforma::load_config(args.config_path);
    if (args.has_seed) cfg.seed = args.seed;
    if (!args.out.empty()) cfg.out = args.out;
    if (args.threads > 0) cfg.threads = args.threads;

    conforma::CsvTable table;
    if (gen->parsed()) {
      if (cfg.out.empty()) {
        throw conforma::ConfigError("gen: an output path is required (--out or config)");
      }
      conforma::save_csv(conforma::run_gen(cfg), cfg.out);
      std::cout << "wrote " << cfg.out << "\n";
      return 0;
    } else if (pvalues->parsed()) {
      table = args.mode == "validity" ? conforma::run_validity(cfg)
                                      : conforma::run_pvalues_batch(cfg);
    } else if (tcv->parsed()) {
      table = args.mode == "compare" ? conforma::run_tcv_compare(cfg)
                                     : conforma::run_tcv_batch(cfg);
    } else if (fdr->parsed()) {
      table = args.mode == "cc_compare" ? conforma::run_conditional_calibration_compare(cfg)
                                        : conforma::run_fdr_power(cfg);
    } else if (greedy->parsed()) {
      table = conforma::run_greedy_demo(cfg);
    } else if (corr->parsed()) {
      table = conforma::run_correlation(cfg);
    } else if (power->parsed()) {
      table = conforma::run_power_analysis(cfg);
    } else if (predset->parsed()) {
      table = conforma::run_predset(cfg);
    }

    if (cfg.out.empty()) {
      std::cout << table.to_string();
    } else {
      std::cout << "wrote " << cfg.out << "\n";
    }
    return 0;
  } catch (const conforma::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const conforma::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
