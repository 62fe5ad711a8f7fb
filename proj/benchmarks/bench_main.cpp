#include <random>

#include <benchmark/benchmark.h>

#include "cpest/cp_als.hpp"
#include "cpest/crb.hpp"
#include "cpest/omp.hpp"

using namespace cpest;

namespace {

struct Trial {
  SystemConfig cfg;
  PathParams paths;
  Sounding snd;
  ReceivedData data;
};

Trial make_trial(Index m, Index t, Index k, double snr_db = 20.0) {
  Trial tr;
  tr.cfg.k_train = k;
  std::mt19937_64 rng(1234);
  tr.paths = sample_channel(rng, tr.cfg, 4, 100e-9);
  tr.snd = make_sounding(rng, tr.cfg, m, t);
  tr.data = synthesize(tr.paths, tr.snd, tr.cfg, snr_db, rng);
  return tr;
}

}  // namespace

// Fixed-iteration ALS; items processed is M*T*K per sweep so the rate should stay flat.
static void BM_AlsSweeps(benchmark::State& state) {
  const Index k = state.range(0);
  const Trial tr = make_trial(16, 16, k);
  AlsOptions o;
  o.max_iters = 10;
  o.rel_fit_tol = 1e-300;
  o.restarts = 1;
  o.algebraic_init = false;
  for (auto _ : state) benchmark::DoNotOptimize(als_fixed_rank(tr.data.y, 4, o));
  state.SetItemsProcessed(state.iterations() * 10 * 16 * 16 * k);
}
BENCHMARK(BM_AlsSweeps)->RangeMultiplier(2)->Range(8, 64)->Unit(benchmark::kMillisecond);

static void BM_Mttkrp(benchmark::State& state) {
  const Trial tr = make_trial(16, 16, 32);
  CPModel m{CMatrix::Random(16, 4), CMatrix::Random(16, 4), CMatrix::Random(32, 4)};
  const int mode = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(mttkrp(tr.data.y, m, mode, 1'000'000));
}
BENCHMARK(BM_Mttkrp)->DenseRange(1, 3);

static void BM_Pipeline(benchmark::State& state) {
  const Trial tr = make_trial(6, 6, 6);
  PipelineOptions o;
  for (auto _ : state) benchmark::DoNotOptimize(estimate_pipeline(tr.data, tr.snd, tr.cfg, o));
}
BENCHMARK(BM_Pipeline)->Unit(benchmark::kMillisecond);

// One OMP atom selection on an n x 2n x 4n grid without building the dictionary;
// the rate per atom should not depend on the grid size.
static void BM_OmpImplicitIteration(benchmark::State& state) {
  const Trial tr = make_trial(6, 6, 6);
  const Grid grid = Grid::uniform(state.range(0), 2 * state.range(0), 4 * state.range(0), 100e-9);
  OmpOptions o;
  o.stop.n_atoms = 1;
  o.force_implicit = true;
  for (auto _ : state) benchmark::DoNotOptimize(omp(tr.data.y.data(), grid, tr.snd, tr.cfg, o));
  state.SetItemsProcessed(state.iterations() * grid.atoms());
}
BENCHMARK(BM_OmpImplicitIteration)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_Fim(benchmark::State& state) {
  const Trial tr = make_trial(6, 6, 6);
  const FimInputs in{tr.paths, tr.snd, tr.cfg, tr.data.sigma2};
  for (auto _ : state) benchmark::DoNotOptimize(fim(in));
}
BENCHMARK(BM_Fim)->Unit(benchmark::kMicrosecond);

static void BM_Crb(benchmark::State& state) {
  const Trial tr = make_trial(6, 6, 6);
  const FimInputs in{tr.paths, tr.snd, tr.cfg, tr.data.sigma2};
  for (auto _ : state) benchmark::DoNotOptimize(compute_crb(in));
}
BENCHMARK(BM_Crb)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
