#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "cpest/experiment.hpp"
#include "cpest/training.hpp"

using namespace cpest;

namespace {

ExperimentConfig small_config() {
  return parse_config(R"({
    "paths": 2, "m": 4, "t": 4, "k": 4, "trials": 3, "seed": 11,
    "sweep": {"variable": "snr_db", "values": [10, 30]},
    "methods": ["cp", "omp", "crb"], "omp_grids": [[16, 16, 8]],
    "als": {"max_iters": 200, "restarts": 2}
  })");
}

std::string csv_of(const std::vector<TrialRow>& rows) {
  std::ostringstream os;
  write_rows_csv(os, rows, SweepVar::SnrDb);
  return os.str();
}

}  // namespace

TEST(Config, ParsesKnownKeys) {
  const ExperimentConfig c = small_config();
  EXPECT_EQ(c.paths, 2);
  EXPECT_EQ(c.sweep_values, (std::vector<double>{10.0, 30.0}));
  EXPECT_TRUE(c.run_omp && c.run_crb && c.run_cp);
  EXPECT_EQ(c.omp_grids.size(), 1u);
  EXPECT_EQ(c.als_restarts, 2);
  EXPECT_EQ(c.als_rel_fit_tol, 1e-8);  // untouched default
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("{\"trails\": 3}"), ConfigError);
  EXPECT_THROW(parse_config("{\"als\": {\"iters\": 3}}"), ConfigError);
  EXPECT_THROW(parse_config("{\"paths\": 2,"), ConfigError);
  EXPECT_THROW(parse_config("{\"paths\": \"two\"}"), ConfigError);
  EXPECT_THROW(parse_config("{\"sweep\": {\"variable\": \"q\", \"values\": [1]}}"), ConfigError);
  EXPECT_THROW(parse_config("{\"sweep\": {\"variable\": \"k\", \"values\": [2.5]}}"), ConfigError);
  EXPECT_THROW(parse_config("{\"methods\": []}"), ConfigError);
  EXPECT_THROW(parse_config("{\"rank_mode\": \"over\", \"rank_over\": 2}"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Experiment, RowsAreOrderedAndComplete) {
  const ExperimentConfig c = small_config();
  const std::vector<TrialRow> rows = run_experiment(c);
  ASSERT_EQ(rows.size(), 2u * 3u * 3u);
  EXPECT_EQ(rows.front().value, 10.0);
  EXPECT_EQ(rows.back().value, 30.0);
  EXPECT_EQ(rows[0].method, "cp");
  EXPECT_EQ(rows[1].method, "omp_16x16x8");
  EXPECT_EQ(rows[2].method, "crb");
  for (const TrialRow& r : rows) {
    EXPECT_EQ(r.status, "ok");
    EXPECT_TRUE(std::isnan(r.wall_time_s));
    EXPECT_GT(r.crb_theta, 0.0);
    if (r.method == "crb") EXPECT_TRUE(std::isnan(r.nmse));
    else EXPECT_GE(r.nmse, 0.0);
  }
}

TEST(Experiment, OutputDoesNotDependOnThreadCount) {
  ExperimentConfig c = small_config();
  c.threads = 1;
  const std::string one = csv_of(run_experiment(c));
  c.threads = 4;
  EXPECT_EQ(csv_of(run_experiment(c)), one);
  c.seed = 12;
  EXPECT_NE(csv_of(run_experiment(c)), one);
}

TEST(Experiment, NoiselessTrialsSkipTheBound) {
  ExperimentConfig c = parse_config(R"({"paths": 2, "m": 4, "t": 4, "k": 4, "trials": 1,
    "methods": ["crb"]})");
  c.sweep_values = {kNoiseless};
  const std::vector<TrialRow> rows = run_crb(c);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].status, "noiseless");
}

TEST(Csv, NanIsWrittenEmpty) {
  TrialRow r;
  r.value = 20;
  r.method = "crb";
  r.crb_theta = 0.5;
  r.seed = 7;
  const std::string s = csv_of({r});
  EXPECT_NE(s.find("\nsnr_db,20,0,crb,,,,,,0.5,,,,,7,ok\n"), std::string::npos) << s;
}

TEST(Summary, MeansAndMediansOverOkRows) {
  std::vector<TrialRow> rows(4);
  const double nmse[4] = {1.0, 2.0, 6.0, 100.0};
  for (int i = 0; i < 4; ++i) {
    rows[i].value = 5;
    rows[i].method = "cp";
    rows[i].trial = i;
    rows[i].nmse = nmse[i];
  }
  rows[3].status = "numerical_error";
  const std::vector<SummaryRow> s = summarize(rows);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].n_trials, 4);
  EXPECT_EQ(s[0].n_ok, 3);
  EXPECT_DOUBLE_EQ(s[0].nmse, 3.0);
  EXPECT_DOUBLE_EQ(s[0].median_nmse, 2.0);
  EXPECT_TRUE(std::isnan(s[0].crb_theta));
}

TEST(Paths, SummaryPathInsertsSuffix) {
  EXPECT_EQ(summary_path("results.csv"), "results_summary.csv");
  EXPECT_EQ(summary_path("out/run.v2/data"), "out/run.v2/data_summary");
  EXPECT_EQ(summary_path("a/b.csv"), "a/b_summary.csv");
}

TEST(Slope, RecoversPowerLawExponent) {
  const std::vector<double> x{1, 2, 4, 8};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 1.5));
  EXPECT_NEAR(loglog_slope(x, y), 1.5, 1e-12);
  EXPECT_THROW(loglog_slope({1.0}, {2.0}), ArgumentError);
  EXPECT_THROW(loglog_slope({2.0, 2.0}, {1.0, 3.0}), ArgumentError);
}

TEST(Threads, ExplicitCountWins) {
  EXPECT_EQ(resolve_threads(3), 3);
  EXPECT_GE(resolve_threads(0), 1);
}

TEST(Selftest, Passes) {
  std::ostringstream os;
  EXPECT_TRUE(run_selftest(os)) << os.str();
}
