#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "cpest/omp.hpp"
#include "test_util.hpp"

using namespace cpest;
using cpest::testing::rel_err;

namespace {

struct Fixture {
  SystemConfig cfg;
  Sounding snd;
  Grid grid;
};

Fixture make_setup(std::uint64_t seed) {
  Fixture s;
  s.cfg.n_bs = 16;
  s.cfg.n_ms = 8;
  s.cfg.k_train = 6;
  std::mt19937_64 rng(seed);
  s.snd = make_sounding(rng, s.cfg, 6, 6);
  s.grid = Grid::uniform(8, 8, 5, 100e-9);
  return s;
}

// Kronecker product of the three per-axis responses, built without the library's atom helper.
CVector explicit_atom(const GridIndex& idx, const Fixture& s) {
  const CVector a = s.snd.q.transpose() * steering_vector_sine(s.grid.aoa_sines(idx[0]), 8);
  const CVector b = s.snd.p.transpose() * steering_vector_sine(s.grid.aod_sines(idx[1]), 16);
  const CVector g = delay_signature(s.grid.delays(idx[2]), s.cfg);
  CVector out(a.size() * b.size() * g.size());
  Index pos = 0;
  for (Index k = 0; k < g.size(); ++k)
    for (Index t = 0; t < b.size(); ++t)
      for (Index m = 0; m < a.size(); ++m) out(pos++) = g(k) * b(t) * a(m);
  return out;
}

}  // namespace

TEST(Grid, UniformLayout) {
  const Grid g = Grid::uniform(4, 2, 3, 100e-9);
  EXPECT_DOUBLE_EQ(g.aoa_sines(0), -1.0);
  EXPECT_DOUBLE_EQ(g.aoa_sines(3), 0.5);
  EXPECT_DOUBLE_EQ(g.delays(2), 100e-9);
  EXPECT_EQ(g.atoms(), 24);
  EXPECT_DOUBLE_EQ(Grid::uniform(2, 2, 1, 100e-9).delays(0), 0.0);
  EXPECT_THROW(Grid::uniform(0, 2, 2, 1e-9), ArgumentError);
}

TEST(Grid, ValidationRejectsUnsortedAxes) {
  Grid g = Grid::uniform(4, 4, 4, 1e-7);
  g.aod_sines(2) = g.aod_sines(1);
  EXPECT_THROW(g.validate(), ArgumentError);
}

TEST(Omp, DictionaryColumnIsKroneckerOfAxes) {
  const Fixture s = make_setup(1);
  for (const GridIndex idx : {GridIndex{0, 0, 0}, GridIndex{7, 3, 4}, GridIndex{2, 6, 1}})
    EXPECT_LT(rel_err(dictionary_column(idx, s.grid, s.snd, s.cfg), explicit_atom(idx, s)), 1e-14);
  EXPECT_THROW(dictionary_column({8, 0, 0}, s.grid, s.snd, s.cfg), ArgumentError);
}

TEST(Omp, ImplicitCorrelationsMatchDictionary) {
  const Fixture s = make_setup(2);
  std::mt19937_64 rng(3);
  const CVector r = cpest::testing::random_matrix(rng, 216, 1);
  const RVector fast = omp_correlations(r, s.grid, s.snd, s.cfg);
  const RVector naive = omp_correlations_naive(r, s.grid, s.snd, s.cfg);
  EXPECT_LT(rel_err(fast, naive), 1e-13);
  // Spot check the flattening order against explicitly built atoms.
  for (const GridIndex idx : {GridIndex{5, 1, 2}, GridIndex{0, 7, 4}}) {
    const CVector d = explicit_atom(idx, s);
    const Index flat = idx[0] + 8 * (idx[1] + 8 * idx[2]);
    EXPECT_NEAR(fast(flat), std::abs(d.dot(r)) / d.norm(), 1e-12 * fast.maxCoeff());
  }
  EXPECT_THROW(omp_correlations(CVector::Zero(10), s.grid, s.snd, s.cfg), ArgumentError);
}

TEST(Omp, RecoversOnGridChannelWithoutNoise) {
  const Fixture s = make_setup(4);
  const std::vector<GridIndex> truth{{1, 5, 0}, {6, 2, 3}, {3, 3, 4}};
  PathParams p = PathParams::zeros(3);
  for (Index l = 0; l < 3; ++l) {
    const GridIndex& idx = truth[static_cast<std::size_t>(l)];
    p.theta(l) = std::asin(s.grid.aoa_sines(idx[0]));
    p.phi(l) = std::asin(s.grid.aod_sines(idx[1]));
    p.tau(l) = s.grid.delays(idx[2]);
  }
  p.alpha << cplx(1.0, 0.5), cplx(-0.7, 0.2), cplx(0.3, -0.9);
  std::mt19937_64 rng(0);
  const ReceivedData d = synthesize(p, s.snd, s.cfg, kNoiseless, rng);

  for (const bool implicit : {false, true}) {
    OmpOptions o;
    o.stop.n_atoms = 3;
    o.force_implicit = implicit;
    const OmpResult r = omp(d.y.data(), s.grid, s.snd, s.cfg, o);
    EXPECT_EQ(r.implicit, implicit);
    ASSERT_EQ(r.support.size(), 3u);
    for (const GridIndex& idx : truth)
      EXPECT_NE(std::find(r.support.begin(), r.support.end(), idx), r.support.end());
    EXPECT_LT(r.residual_norm, 1e-10 * d.y.data().norm());
    EXPECT_TRUE(std::is_sorted(r.residual_history.rbegin(), r.residual_history.rend()));
  }

  const EstimateResult est = omp_channel_estimate(d, s.grid, s.snd, s.cfg, 3);
  const std::vector<Index> perm = match_paths(p, est.paths_hat, s.cfg);
  for (Index l = 0; l < 3; ++l) {
    ASSERT_GE(perm[static_cast<std::size_t>(l)], 0);
    EXPECT_LT(std::abs(est.paths_hat.alpha(perm[static_cast<std::size_t>(l)]) - p.alpha(l)), 1e-9);
  }
}

TEST(Omp, ResidualToleranceStops) {
  const Fixture s = make_setup(5);
  std::mt19937_64 rng(6);
  const CVector y = cpest::testing::random_matrix(rng, 216, 1);
  OmpOptions o;
  o.stop.residual_tol = 0.9;
  const OmpResult r = omp(y, s.grid, s.snd, s.cfg, o);
  ASSERT_FALSE(r.support.empty());
  EXPECT_LT(r.residual_norm, 0.9 * y.norm());
  const auto& h = r.residual_history;
  EXPECT_GE(h.size() < 2 ? y.norm() : h[h.size() - 2], 0.9 * y.norm());
  EXPECT_THROW(omp(y, s.grid, s.snd, s.cfg, OmpOptions{}), ArgumentError);
}

TEST(Omp, LargeGridRunsWithoutDictionary) {
  SystemConfig cfg;
  std::mt19937_64 rng(7);
  const Sounding snd = make_sounding(rng, cfg, 6, 6);
  cfg.k_train = 6;
  const Grid grid = Grid::uniform(64, 128, 256, 100e-9);
  const PathParams p = sample_channel(rng, cfg, 2, 100e-9);
  const ReceivedData d = synthesize(p, snd, cfg, 20.0, rng);
  OmpResult detail;
  const EstimateResult est = omp_channel_estimate(d, grid, snd, cfg, 2, {}, &detail);
  EXPECT_TRUE(detail.implicit);  // 216 x 2^21 complex entries is ~7 GB
  EXPECT_EQ(est.paths_hat.size(), 2);
}
