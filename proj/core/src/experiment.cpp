#include "cpest/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "cpest/omp.hpp"

namespace cpest {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string grid_label(const std::array<Index, 3>& g) {
  return "omp_" + std::to_string(g[0]) + "x" + std::to_string(g[1]) + "x" + std::to_string(g[2]);
}

SweepVar parse_sweep_var(const std::string& s) {
  if (s == "snr_db") return SweepVar::SnrDb;
  if (s == "k") return SweepVar::K;
  if (s == "m") return SweepVar::M;
  if (s == "t") return SweepVar::T;
  throw ConfigError("sweep.variable must be one of snr_db, k, m, t (got '" + s + "')");
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& dst) {
  if (obj.contains(key)) dst = obj.at(key).get<T>();
}

// Sweep point settings resolved from the fixed knobs and the swept value.
struct PointSetup {
  SystemConfig sys;
  Index m, t;
  double snr_db;
};

PointSetup point_setup(const ExperimentConfig& cfg, double value) {
  PointSetup p{cfg.system, cfg.m, cfg.t, cfg.snr_db};
  p.sys.k_train = cfg.k;
  switch (cfg.sweep_var) {
    case SweepVar::SnrDb: p.snr_db = value; break;
    case SweepVar::K: p.sys.k_train = static_cast<Index>(value); break;
    case SweepVar::M: p.m = static_cast<Index>(value); break;
    case SweepVar::T: p.t = static_cast<Index>(value); break;
  }
  return p;
}

std::string status_of(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical_error";
  if (dynamic_cast<const CapabilityError*>(&e)) return "capability_error";
  if (dynamic_cast<const ArgumentError*>(&e)) return "argument_error";
  return "error";
}

void fill_metrics(TrialRow& row, const Metrics& m) {
  row.mse_theta = m.mse_theta;
  row.mse_phi = m.mse_phi;
  row.mse_tau = m.mse_tau;
  row.mse_alpha = m.mse_alpha;
  row.nmse = m.nmse;
}

struct TrialData {
  std::uint64_t seed = 0;
  PointSetup setup;
  PathParams paths;
  Sounding snd;
  ReceivedData data;
};

TrialData make_trial(const ExperimentConfig& cfg, std::size_t point, int trial) {
  TrialData d;
  std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(point), static_cast<std::uint64_t>(trial)};
  std::mt19937_64 stream(seq);
  d.seed = stream();
  std::mt19937_64 rng(d.seed);
  d.setup = point_setup(cfg, cfg.sweep_values[point]);
  d.paths = sample_channel(rng, d.setup.sys, cfg.paths, cfg.tau_max);
  d.snd = make_sounding(rng, d.setup.sys, d.setup.m, d.setup.t);
  d.data = synthesize(d.paths, d.snd, d.setup.sys, d.setup.snr_db, rng);
  return d;
}

PipelineOptions pipeline_options(const ExperimentConfig& cfg, std::uint64_t trial_seed) {
  PipelineOptions o;
  o.rank_mode = cfg.rank_mode;
  o.rank = cfg.paths;
  o.rank_over = cfg.rank_over;
  o.mu = cfg.mu;
  o.eps_rank = cfg.eps_rank;
  o.als.max_iters = cfg.als_max_iters;
  o.als.rel_fit_tol = cfg.als_rel_fit_tol;
  o.als.restarts = cfg.als_restarts;
  o.als.seed = trial_seed ^ 0x9E3779B97F4A7C15ULL;
  return o;
}

std::vector<TrialRow> run_trial(const ExperimentConfig& cfg, std::size_t point, int trial) {
  const TrialData d = make_trial(cfg, point, trial);
  const SystemConfig& sys = d.setup.sys;
  const std::vector<CMatrix> h_true =
      reconstruct_channels(d.paths, sys, training_subcarriers(sys));
  std::vector<TrialRow> rows;
  const auto base_row = [&](const std::string& method) {
    TrialRow r;
    r.value = cfg.sweep_values[point];
    r.trial = trial;
    r.method = method;
    r.seed = d.seed;
    return r;
  };

  TrialRow crb_row = base_row("crb");
  if (cfg.run_crb) {
    if (d.data.sigma2 > 0.0) {
      try {
        const CrbResult c = crb_sine_domain(
            compute_crb({d.paths, d.snd, sys, d.data.sigma2}, cfg.crb_convention), d.paths);
        crb_row.crb_theta = c.theta.sum();
        crb_row.crb_phi = c.phi.sum();
        crb_row.crb_tau = c.tau.sum();
        crb_row.crb_alpha = c.alpha.sum();
      } catch (const std::exception& e) {
        crb_row.status = status_of(e);
      }
    } else {
      crb_row.status = "noiseless";
    }
  }
  const auto attach_crb = [&](TrialRow& r) {
    r.crb_theta = crb_row.crb_theta;
    r.crb_phi = crb_row.crb_phi;
    r.crb_tau = crb_row.crb_tau;
    r.crb_alpha = crb_row.crb_alpha;
  };

  if (cfg.run_cp) {
    TrialRow r = base_row("cp");
    const auto start = Clock::now();
    try {
      const EstimateResult est =
          estimate_pipeline(d.data, d.snd, sys, pipeline_options(cfg, d.seed));
      fill_metrics(r, metrics(d.paths, est.paths_hat, h_true, est.h_hat, sys));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      r.status = status_of(e);
    }
    if (cfg.record_wall_time) r.wall_time_s = seconds_since(start);
    attach_crb(r);
    rows.push_back(std::move(r));
  }
  if (cfg.run_omp) {
    for (const auto& g : cfg.omp_grids) {
      TrialRow r = base_row(grid_label(g));
      const auto start = Clock::now();
      try {
        const Grid grid = Grid::uniform(g[0], g[1], g[2], cfg.tau_max);
        const EstimateResult est = omp_channel_estimate(d.data, grid, d.snd, sys, cfg.paths);
        fill_metrics(r, metrics(d.paths, est.paths_hat, h_true, est.h_hat, sys));
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        r.status = status_of(e);
      }
      if (cfg.record_wall_time) r.wall_time_s = seconds_since(start);
      attach_crb(r);
      rows.push_back(std::move(r));
    }
  }
  if (cfg.run_crb) rows.push_back(std::move(crb_row));
  return rows;
}

// Runs fn(job) for job in [0, jobs) on a bounded pool. The first exception in
// job order is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t jobs, int threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        fn(j);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < std::min(n, jobs); ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string to_string(SweepVar v) {
  switch (v) {
    case SweepVar::SnrDb: return "snr_db";
    case SweepVar::K: return "k";
    case SweepVar::M: return "m";
    case SweepVar::T: return "t";
  }
  return "unknown";
}

TrialRow::TrialRow()
    : mse_theta(kNaN), mse_phi(kNaN), mse_tau(kNaN), mse_alpha(kNaN), nmse(kNaN),
      crb_theta(kNaN), crb_phi(kNaN), crb_tau(kNaN), crb_alpha(kNaN), wall_time_s(kNaN) {}

SummaryRow::SummaryRow()
    : mse_theta(kNaN), mse_phi(kNaN), mse_tau(kNaN), mse_alpha(kNaN), nmse(kNaN),
      crb_theta(kNaN), crb_phi(kNaN), crb_tau(kNaN), crb_alpha(kNaN), median_nmse(kNaN),
      wall_time_s(kNaN) {}

void ExperimentConfig::validate() const {
  try {
    system.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (paths < 1) throw ConfigError("paths must be >= 1");
  if (!(tau_max >= 0.0)) throw ConfigError("tau_max must be >= 0");
  if (m < 1 || t < 1 || k < 1) throw ConfigError("m, t and k must be >= 1");
  if (k > system.k_total) throw ConfigError("k exceeds system.k_total");
  if (sweep_values.empty()) throw ConfigError("sweep.values must be nonempty");
  for (double v : sweep_values) {
    if (sweep_var == SweepVar::SnrDb) {
      if (std::isnan(v)) throw ConfigError("snr sweep values must be numbers");
      continue;
    }
    if (!(v >= 1.0) || v != std::floor(v)) {
      throw ConfigError("k/m/t sweep values must be positive integers");
    }
    if (sweep_var == SweepVar::K && v > static_cast<double>(system.k_total)) {
      throw ConfigError("k sweep value exceeds system.k_total");
    }
  }
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (!run_cp && !run_omp && !run_crb) throw ConfigError("methods must be nonempty");
  for (const auto& g : omp_grids) {
    if (g[0] < 1 || g[1] < 1 || g[2] < 1) throw ConfigError("omp grid sizes must be >= 1");
  }
  if (rank_over < paths && rank_mode == RankMode::Overestimate) {
    throw ConfigError("rank_over must be >= paths");
  }
  if (!(eps_rank > 0.0 && eps_rank < 1.0)) throw ConfigError("eps_rank must lie in (0, 1)");
  if (mu && !(*mu >= 0.0)) throw ConfigError("mu must be >= 0");
  if (als_max_iters < 1 || als_restarts < 1 || !(als_rel_fit_tol > 0.0)) {
    throw ConfigError("als settings must be positive");
  }
  if (threads < 0) throw ConfigError("threads must be >= 0");
  for (Index kk : scaling_k) {
    if (kk < 1 || kk > system.k_total) throw ConfigError("scaling_k values must be in 1..k_total");
  }
  if (scaling_mt < 1 || scaling_iters < 1) throw ConfigError("scaling settings must be >= 1");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  try {
    reject_unknown(j,
                   {"system", "paths", "tau_max", "m", "t", "k", "snr_db", "sweep", "trials", "seed",
                    "methods", "omp_grids", "rank_mode", "rank_over", "mu", "eps_rank", "als",
                    "crb_convention", "record_wall_time", "threads", "output", "scaling_k",
                    "scaling_mt", "scaling_iters"},
                   "config");
    if (j.contains("system")) {
      const json& s = j.at("system");
      reject_unknown(s,
                     {"n_bs", "n_ms", "k_total", "f_s", "f_c", "distance_m",
                      "element_spacing_wavelengths"},
                     "system");
      read(s, "n_bs", c.system.n_bs);
      read(s, "n_ms", c.system.n_ms);
      read(s, "k_total", c.system.k_total);
      read(s, "f_s", c.system.f_s);
      read(s, "f_c", c.system.f_c);
      read(s, "distance_m", c.system.distance_m);
      read(s, "element_spacing_wavelengths", c.system.element_spacing_wavelengths);
    }
    read(j, "paths", c.paths);
    read(j, "tau_max", c.tau_max);
    read(j, "m", c.m);
    read(j, "t", c.t);
    read(j, "k", c.k);
    read(j, "snr_db", c.snr_db);
    c.sweep_values = {c.snr_db};
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      reject_unknown(s, {"variable", "values"}, "sweep");
      c.sweep_var = parse_sweep_var(s.at("variable").get<std::string>());
      c.sweep_values = s.at("values").get<std::vector<double>>();
    }
    read(j, "trials", c.trials);
    read(j, "seed", c.seed);
    if (j.contains("methods")) {
      c.run_cp = c.run_omp = c.run_crb = false;
      for (const auto& m : j.at("methods").get<std::vector<std::string>>()) {
        if (m == "cp") c.run_cp = true;
        else if (m == "omp") c.run_omp = true;
        else if (m == "crb") c.run_crb = true;
        else throw ConfigError("unknown method '" + m + "'");
      }
    }
    if (j.contains("omp_grids")) {
      c.omp_grids.clear();
      for (const auto& g : j.at("omp_grids").get<std::vector<std::vector<Index>>>()) {
        if (g.size() != 3) throw ConfigError("each omp grid needs three sizes");
        c.omp_grids.push_back({g[0], g[1], g[2]});
      }
    }
    if (j.contains("rank_mode")) {
      const auto mode = j.at("rank_mode").get<std::string>();
      if (mode == "known") c.rank_mode = RankMode::Known;
      else if (mode == "over") c.rank_mode = RankMode::Overestimate;
      else throw ConfigError("rank_mode must be 'known' or 'over'");
    }
    read(j, "rank_over", c.rank_over);
    if (j.contains("mu") && !j.at("mu").is_null()) c.mu = j.at("mu").get<double>();
    read(j, "eps_rank", c.eps_rank);
    if (j.contains("als")) {
      const json& a = j.at("als");
      reject_unknown(a, {"max_iters", "rel_fit_tol", "restarts"}, "als");
      read(a, "max_iters", c.als_max_iters);
      read(a, "rel_fit_tol", c.als_rel_fit_tol);
      read(a, "restarts", c.als_restarts);
    }
    if (j.contains("crb_convention")) {
      const auto conv = j.at("crb_convention").get<std::string>();
      if (conv == "complex") c.crb_convention = CrbConvention::Complex;
      else if (conv == "real_split") c.crb_convention = CrbConvention::RealSplit;
      else throw ConfigError("crb_convention must be 'complex' or 'real_split'");
    }
    read(j, "record_wall_time", c.record_wall_time);
    read(j, "threads", c.threads);
    read(j, "output", c.output);
    read(j, "scaling_k", c.scaling_k);
    read(j, "scaling_mt", c.scaling_mt);
    read(j, "scaling_iters", c.scaling_iters);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CPEST_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

std::vector<TrialRow> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::size_t points = cfg.sweep_values.size();
  const auto trials = static_cast<std::size_t>(cfg.trials);
  std::vector<std::vector<TrialRow>> results(points * trials);
  parallel_for(results.size(), resolve_threads(cfg.threads), [&](std::size_t job) {
    results[job] = run_trial(cfg, job / trials, static_cast<int>(job % trials));
  });
  std::vector<TrialRow> rows;
  for (auto& r : results)
    for (auto& row : r) rows.push_back(std::move(row));
  std::stable_sort(rows.begin(), rows.end(),
                   [](const TrialRow& a, const TrialRow& b) { return a.value < b.value; });
  return rows;
}

std::vector<TrialRow> run_crb(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.run_cp = false;
  c.run_omp = false;
  c.run_crb = true;
  return run_experiment(c);
}

void write_rows_csv(std::ostream& os, const std::vector<TrialRow>& rows, SweepVar var) {
  os << "sweep_var,value,trial,method,mse_theta,mse_phi,mse_tau,mse_alpha,nmse,crb_theta,"
        "crb_phi,crb_tau,crb_alpha,wall_time_s,seed,status\n";
  const std::string name = to_string(var);
  for (const auto& r : rows) {
    os << name << ',' << format_number(r.value) << ',' << r.trial << ',' << r.method << ','
       << format_number(r.mse_theta) << ',' << format_number(r.mse_phi) << ','
       << format_number(r.mse_tau) << ',' << format_number(r.mse_alpha) << ','
       << format_number(r.nmse) << ',' << format_number(r.crb_theta) << ','
       << format_number(r.crb_phi) << ',' << format_number(r.crb_tau) << ','
       << format_number(r.crb_alpha) << ',' << format_number(r.wall_time_s) << ',' << r.seed
       << ',' << r.status << '\n';
  }
}

std::vector<SummaryRow> summarize(const std::vector<TrialRow>& rows) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<const TrialRow*>> groups;
  std::map<std::pair<double, std::string>, std::size_t> index;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.value, r.method);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, groups.size()).first;
      groups.emplace_back();
      out.emplace_back();
      out.back().value = r.value;
      out.back().method = r.method;
    }
    groups[it->second].push_back(&r);
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    SummaryRow& s = out[g];
    s.n_trials = static_cast<int>(groups[g].size());
    std::vector<double> cols[11];
    for (const TrialRow* r : groups[g]) {
      if (r->status != "ok") continue;
      ++s.n_ok;
      const double vals[11] = {r->mse_theta, r->mse_phi, r->mse_tau, r->mse_alpha,
                               r->nmse,      r->crb_theta, r->crb_phi, r->crb_tau,
                               r->crb_alpha, r->wall_time_s, r->nmse};
      for (int c = 0; c < 11; ++c)
        if (!std::isnan(vals[c])) cols[c].push_back(vals[c]);
    }
    s.mse_theta = mean_of(cols[0]);
    s.mse_phi = mean_of(cols[1]);
    s.mse_tau = mean_of(cols[2]);
    s.mse_alpha = mean_of(cols[3]);
    s.nmse = mean_of(cols[4]);
    s.crb_theta = mean_of(cols[5]);
    s.crb_phi = mean_of(cols[6]);
    s.crb_tau = mean_of(cols[7]);
    s.crb_alpha = mean_of(cols[8]);
    s.wall_time_s = mean_of(cols[9]);
    s.median_nmse = median_of(cols[10]);
  }
  return out;
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows, SweepVar var) {
  os << "sweep_var,value,method,n_trials,n_ok,mse_theta,mse_phi,mse_tau,mse_alpha,nmse,"
        "median_nmse,crb_theta,crb_phi,crb_tau,crb_alpha,wall_time_s\n";
  const std::string name = to_string(var);
  for (const auto& s : rows) {
    os << name << ',' << format_number(s.value) << ',' << s.method << ',' << s.n_trials << ','
       << s.n_ok << ',' << format_number(s.mse_theta) << ',' << format_number(s.mse_phi) << ','
       << format_number(s.mse_tau) << ',' << format_number(s.mse_alpha) << ','
       << format_number(s.nmse) << ',' << format_number(s.median_nmse) << ','
       << format_number(s.crb_theta) << ',' << format_number(s.crb_phi) << ','
       << format_number(s.crb_tau) << ',' << format_number(s.crb_alpha) << ','
       << format_number(s.wall_time_s) << '\n';
  }
}

std::string summary_path(const std::string& output) {
  const auto dot = output.find_last_of('.');
  const auto slash = output.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
    return output + "_summary";
  }
  return output.substr(0, dot) + "_summary" + output.substr(dot);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ArgumentError("loglog_slope: need at least two matching points");
  }
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) throw ArgumentError("loglog_slope: x values are all equal");
  return (n * sxy - sx * sy) / den;
}

TimingReport run_timing(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentConfig fixed = cfg;
  fixed.sweep_var = SweepVar::SnrDb;
  fixed.sweep_values = {cfg.snr_db};
  TimingReport rep;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    const TrialData d = make_trial(fixed, 0, trial);
    const SystemConfig& sys = d.setup.sys;
    if (cfg.run_cp) {
      const auto start = Clock::now();
      const EstimateResult est =
          estimate_pipeline(d.data, d.snd, sys, pipeline_options(cfg, d.seed));
      TimingRow r{"pipeline", "cp", d.setup.m, d.setup.t, sys.k_train, trial,
                  seconds_since(start), est.als.iterations, 0.0};
      r.per_iteration_s = r.iterations > 0 ? r.wall_time_s / r.iterations : 0.0;
      rep.rows.push_back(r);
    }
    if (cfg.run_omp) {
      for (const auto& g : cfg.omp_grids) {
        const Grid grid = Grid::uniform(g[0], g[1], g[2], cfg.tau_max);
        const auto start = Clock::now();
        OmpResult detail;
        omp_channel_estimate(d.data, grid, d.snd, sys, cfg.paths, {}, &detail);
        TimingRow r{"pipeline", grid_label(g), d.setup.m, d.setup.t, sys.k_train, trial,
                    seconds_since(start), static_cast<int>(detail.support.size()), 0.0};
        r.per_iteration_s = r.iterations > 0 ? r.wall_time_s / r.iterations : 0.0;
        rep.rows.push_back(r);
      }
    }
  }

  std::vector<double> sizes, per_iter;
  const int reps = 3;
  for (Index kk : cfg.scaling_k) {
    ExperimentConfig sc = fixed;
    sc.k = kk;
    sc.m = sc.t = cfg.scaling_mt;
    std::vector<double> samples;
    for (int rep_i = 0; rep_i < reps; ++rep_i) {
      const TrialData d = make_trial(sc, 0, rep_i);
      AlsOptions o;
      o.max_iters = cfg.scaling_iters;
      o.rel_fit_tol = 1e-300;
      o.restarts = 1;
      o.algebraic_init = false;  // time the sweeps, not the start
      o.seed = d.seed;
      const auto start = Clock::now();
      const AlsResult res = als_fixed_rank(d.data.y, cfg.paths, o);
      const double wall = seconds_since(start);
      const double pi = wall / std::max(1, res.report.iterations);
      samples.push_back(pi);
      rep.rows.push_back({"als_scaling", "als", sc.m, sc.t, kk, rep_i, wall,
                          res.report.iterations, pi});
    }
    sizes.push_back(static_cast<double>(sc.m * sc.t * kk));
    per_iter.push_back(median_of(samples));
  }
  if (sizes.size() >= 2) rep.als_slope = loglog_slope(sizes, per_iter);
  return rep;
}

void write_timing_csv(std::ostream& os, const TimingReport& report) {
  os << "kind,method,m,t,k,trial,wall_time_s,iterations,per_iteration_s\n";
  for (const auto& r : report.rows) {
    os << r.kind << ',' << r.method << ',' << r.m << ',' << r.t << ',' << r.k << ',' << r.trial
       << ',' << format_number(r.wall_time_s) << ',' << r.iterations << ','
       << format_number(r.per_iteration_s) << '\n';
  }
  os << "# als_loglog_slope," << format_number(report.als_slope) << '\n';
}

bool run_selftest(std::ostream& os) {
  bool all = true;
  const auto report = [&](const std::string& name, bool ok, const std::string& detail) {
    os << (ok ? "PASS " : "FAIL ") << name << (detail.empty() ? "" : "  " + detail) << '\n';
    all = all && ok;
  };
  const auto guarded = [&](const std::string& name, auto&& body) {
    try {
      std::string detail;
      const bool ok = body(detail);
      report(name, ok, detail);
    } catch (const std::exception& e) {
      report(name, false, std::string("exception: ") + e.what());
    }
  };
  std::mt19937_64 rng(20240501);

  guarded("tensor_unfold_roundtrip", [&](std::string& detail) {
    Tensor3C t({4, 3, 5});
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = complex_gaussian(rng);
    bool ok = true;
    for (int mode = 1; mode <= 3; ++mode) ok = ok && fold(unfold(t, mode), mode, t.dims()) == t;
    detail = ok ? "" : "fold(unfold(t)) != t";
    return ok;
  });

  guarded("cp_unfolding_identities", [&](std::string& detail) {
    CPModel m{CMatrix::Random(4, 3), CMatrix::Random(5, 3), CMatrix::Random(6, 3)};
    const Tensor3C x = cp_reconstruct(m);
    const double e1 = (unfold(x, 1) - m.a * khatri_rao(m.c, m.b).transpose()).norm();
    const double e2 = (unfold(x, 2) - m.b * khatri_rao(m.c, m.a).transpose()).norm();
    const double e3 = (unfold(x, 3) - m.c * khatri_rao(m.b, m.a).transpose()).norm();
    const double err = std::max({e1, e2, e3}) / frob_norm(x);
    detail = "max relative error " + format_number(err);
    return err < 1e-12;
  });

  SystemConfig sys;
  sys.k_train = 6;
  const PathParams paths = sample_channel(rng, sys, 4, 100e-9);
  const Sounding snd = make_sounding(rng, sys, 6, 6);

  guarded("fim_hermitian_psd", [&](std::string& detail) {
    const Fim f = fim({paths, snd, sys, 1e-12});
    const double herm = (f.omega - f.omega.adjoint()).norm() / f.omega.norm();
    Eigen::SelfAdjointEigenSolver<CMatrix> es(f.omega);
    const double min_eig = es.eigenvalues().minCoeff();
    const double norm2 = es.eigenvalues().cwiseAbs().maxCoeff();
    detail = "hermitian error " + format_number(herm);
    return herm < 1e-12 && min_eig >= -1e-8 * norm2;
  });

  guarded("derivative_finite_difference", [&](std::string& detail) {
    const DerivativeFactors f = derivative_factors(paths, snd, sys);
    const double h = 1e-6;
    double worst = 0.0;
    for (Index l = 0; l < paths.size(); ++l) {
      PathParams hi = paths, lo = paths;
      hi.theta(l) += h;
      lo.theta(l) -= h;
      const CVector fd = (channel_factors(hi, snd, sys).a.col(l) -
                          channel_factors(lo, snd, sys).a.col(l)) / (2 * h);
      worst = std::max(worst, (fd - f.a_t.col(l)).norm() / f.a_t.col(l).norm());
    }
    detail = "worst relative error " + format_number(worst);
    return worst < 1e-6;
  });

  guarded("noiseless_recovery", [&](std::string& detail) {
    const ReceivedData data = synthesize(paths, snd, sys, kNoiseless, rng);
    PipelineOptions o;
    o.rank = 4;
    const EstimateResult est = estimate_pipeline(data, snd, sys, o);
    const Metrics m = metrics(paths, est.paths_hat,
                              reconstruct_channels(paths, sys, training_subcarriers(sys)),
                              est.h_hat, sys);
    detail = "nmse " + format_number(m.nmse);
    return m.nmse < 1e-8;
  });
  return all;
}

}  // namespace cpest
