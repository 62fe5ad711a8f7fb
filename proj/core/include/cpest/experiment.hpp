#pragma once

// Seeded Monte-Carlo experiment runner behind the `cpest` command line tool.
// Every (sweep point, trial) pair owns an rng stream derived from the master
// seed, so rows do not depend on worker scheduling and repeated runs of the
// same config produce identical CSV bytes.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cpest/channel.hpp"
#include "cpest/crb.hpp"
#include "cpest/estimator.hpp"

namespace cpest {

enum class SweepVar { SnrDb, K, M, T };

std::string to_string(SweepVar v);

struct ExperimentConfig {
  SystemConfig system;
  Index paths = 4;
  double tau_max = 100e-9;
  Index m = 6;
  Index t = 6;
  Index k = 6;
  double snr_db = 20.0;
  SweepVar sweep_var = SweepVar::SnrDb;
  std::vector<double> sweep_values{20.0};
  int trials = 100;
  std::uint64_t seed = 1;
  bool run_cp = true;
  bool run_omp = false;
  bool run_crb = false;
  std::vector<std::array<Index, 3>> omp_grids{{64, 128, 256}};
  RankMode rank_mode = RankMode::Known;
  Index rank_over = 8;
  std::optional<double> mu;
  double eps_rank = 1e-2;
  int als_max_iters = 1000;
  double als_rel_fit_tol = 1e-8;
  int als_restarts = 5;
  CrbConvention crb_convention = CrbConvention::Complex;
  bool record_wall_time = false;
  int threads = 0;  // 0: CPEST_THREADS or hardware concurrency
  std::string output = "results.csv";

  // Timing-only knobs.
  std::vector<Index> scaling_k{8, 16, 32, 64};
  Index scaling_mt = 16;
  int scaling_iters = 20;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

/// Parses a JSON config; unknown keys and malformed JSON raise ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

struct TrialRow {
  double value = 0.0;  // sweep variable value
  int trial = 0;
  std::string method;
  // NaN marks a column left empty.
  double mse_theta, mse_phi, mse_tau, mse_alpha, nmse;
  double crb_theta, crb_phi, crb_tau, crb_alpha;
  double wall_time_s;
  std::uint64_t seed = 0;
  std::string status = "ok";

  TrialRow();
};

/// Runs every sweep point and trial; rows sorted by (value, trial, method).
std::vector<TrialRow> run_experiment(const ExperimentConfig& cfg);

/// Only the CRB rows of run_experiment.
std::vector<TrialRow> run_crb(const ExperimentConfig& cfg);

void write_rows_csv(std::ostream& os, const std::vector<TrialRow>& rows, SweepVar var);

struct SummaryRow {
  double value = 0.0;
  std::string method;
  int n_trials = 0;
  int n_ok = 0;
  double mse_theta, mse_phi, mse_tau, mse_alpha, nmse;
  double crb_theta, crb_phi, crb_tau, crb_alpha;
  double median_nmse;
  double wall_time_s;

  SummaryRow();
};

/// Arithmetic means over the ok rows of each (value, method) group.
std::vector<SummaryRow> summarize(const std::vector<TrialRow>& rows);
void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows, SweepVar var);

/// "results.csv" -> "results_summary.csv".
std::string summary_path(const std::string& output);

struct TimingRow {
  std::string kind;    // "pipeline" or "als_scaling"
  std::string method;
  Index m = 0, t = 0, k = 0;
  int trial = 0;
  double wall_time_s = 0.0;
  int iterations = 0;
  double per_iteration_s = 0.0;
};

struct TimingReport {
  std::vector<TimingRow> rows;
  double als_slope = 0.0;  // log-log slope of per-iteration time vs M*T*K
};

/// Times the CP pipeline and OMP per grid at (m, t, k, snr_db), then ALS
/// per-iteration cost over scaling_k at M = T = scaling_mt.
TimingReport run_timing(const ExperimentConfig& cfg);
void write_timing_csv(std::ostream& os, const TimingReport& report);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Worker count: explicit value, else CPEST_THREADS, else hardware concurrency.
int resolve_threads(int requested);

/// Quick invariant checks; prints one line per suite and returns true if all pass.
bool run_selftest(std::ostream& os);

}  // namespace cpest
