// cpest: Monte-Carlo experiments for CP-based wideband channel estimation.
//
//   cpest experiment config.json   per-trial CSV + summary CSV
//   cpest timing config.json       wall-time CSV and ALS scaling slope
//   cpest crb config.json          Cramer-Rao bounds only
//   cpest selftest                 quick invariant checks
//
// Exit codes: 0 success, 1 selftest failure, 2 usage/config error,
// 3 numerical failure.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "cpest/experiment.hpp"

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<std::string> out;
  std::optional<int> threads;
  bool quiet = false;
};

cpest::ExperimentConfig load(const std::string& path, const Overrides& o) {
  cpest::ExperimentConfig cfg = cpest::load_config(path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.trials) cfg.trials = *o.trials;
  if (o.out) cfg.output = *o.out;
  if (o.threads) cfg.threads = *o.threads;
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw cpest::ConfigError("cannot write '" + path + "'");
  return os;
}

void write_experiment(const cpest::ExperimentConfig& cfg,
                      const std::vector<cpest::TrialRow>& rows, bool quiet) {
  {
    std::ofstream os = open_out(cfg.output);
    cpest::write_rows_csv(os, rows, cfg.sweep_var);
  }
  const auto summary = cpest::summarize(rows);
  const std::string spath = cpest::summary_path(cfg.output);
  {
    std::ofstream os = open_out(spath);
    cpest::write_summary_csv(os, summary, cfg.sweep_var);
  }
  if (!quiet) {
    cpest::write_summary_csv(std::cout, summary, cfg.sweep_var);
    std::cerr << "wrote " << cfg.output << " and " << spath << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor-decomposition channel estimation experiments"};
  app.require_subcommand(1);
  Overrides ov;
  std::string config;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config, "JSON config file")->required();
    sub->add_option("--seed", ov.seed, "Override the master seed");
    sub->add_option("--trials", ov.trials, "Override the trial count");
    sub->add_option("--out", ov.out, "Override the output CSV path");
    sub->add_option("--threads", ov.threads, "Worker threads (default: CPEST_THREADS or all cores)");
    sub->add_flag("--quiet", ov.quiet, "Do not print the summary");
  };
  CLI::App* exp = app.add_subcommand("experiment", "Run a Monte-Carlo sweep");
  add_common(exp);
  CLI::App* timing = app.add_subcommand("timing", "Time the estimators");
  add_common(timing);
  CLI::App* crb = app.add_subcommand("crb", "Compute Cramer-Rao bounds for a sweep");
  add_common(crb);
  CLI::App* selftest = app.add_subcommand("selftest", "Run quick invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (selftest->parsed()) return cpest::run_selftest(std::cout) ? 0 : 1;
    const cpest::ExperimentConfig cfg = load(config, ov);
    if (exp->parsed()) {
      write_experiment(cfg, cpest::run_experiment(cfg), ov.quiet);
    } else if (crb->parsed()) {
      write_experiment(cfg, cpest::run_crb(cfg), ov.quiet);
    } else if (timing->parsed()) {
      const cpest::TimingReport rep = cpest::run_timing(cfg);
      std::ofstream os = open_out(cfg.output);
      cpest::write_timing_csv(os, rep);
      if (!ov.quiet) std::cout << "als_loglog_slope " << rep.als_slope << '\n';
    }
  } catch (const cpest::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const cpest::ArgumentError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const cpest::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
