#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "cpest/estimator.hpp"
#include "test_util.hpp"

using namespace cpest;
using cpest::testing::random_matrix;
using cpest::testing::rel_err;

namespace {

struct Fixture {
  SystemConfig cfg;
  PathParams paths;
  Sounding snd;
};

Fixture make_setup(std::uint64_t seed, Index l = 4) {
  Fixture s;
  std::mt19937_64 rng(seed);
  s.paths = sample_channel(rng, s.cfg, l, 100e-9);
  s.snd = make_sounding(rng, s.cfg, 6, 6);
  return s;
}

double wrap2(double d) { return std::remainder(d, 2.0); }

}  // namespace

TEST(EstimateAngle, ExactFactorColumn) {
  const Fixture s = make_setup(1);
  for (const double u0 : {-0.93, -0.2, 0.0, 0.41, 0.999}) {
    const CVector a = s.snd.q.transpose() * steering_vector_sine(u0, s.cfg.n_ms);
    const AngleEstimate e = estimate_aoa(a, s.snd.q);
    EXPECT_LT(std::abs(wrap2(e.sine - u0)), 1e-6) << "u0 = " << u0;
    EXPECT_GT(e.peak, 1.0 - 1e-9);
    EXPECT_FALSE(e.low_confidence);
    EXPECT_NEAR(std::sin(e.angle), e.sine, 1e-15);
  }
}

TEST(EstimateAngle, ScaleInvariant) {
  const Fixture s = make_setup(2);
  const CVector b = s.snd.p.transpose() * steering_vector_sine(0.3, s.cfg.n_bs);
  const AngleEstimate e1 = estimate_aod(b, s.snd.p);
  const AngleEstimate e2 = estimate_aod(cplx(-3.0, 7.5) * b, s.snd.p);
  EXPECT_NEAR(e1.sine, e2.sine, 1e-7);
  EXPECT_NEAR(e1.peak, e2.peak, 1e-14);
}

TEST(EstimateAngle, RejectsBadInput) {
  const Fixture s = make_setup(3);
  EXPECT_THROW(estimate_aoa(CVector::Zero(6), s.snd.q), ArgumentError);
  EXPECT_THROW(estimate_aoa(CVector::Ones(5), s.snd.q), ArgumentError);
}

TEST(EstimateAngle, NonPeriodicSpacing) {
  // Quarter-wavelength spacing: u in [-1, 1] maps to half a period, no wrap.
  std::mt19937_64 rng(4);
  const CMatrix q = random_matrix(rng, 16, 8);
  const CVector a = q.transpose() * steering_vector_sine(-0.77, 16, 0.25);
  EXPECT_NEAR(estimate_aoa(a, q, 0.25).sine, -0.77, 1e-6);
}

TEST(EstimateDelay, ExactSignatureAnyScale) {
  SystemConfig cfg;
  for (const double tau : {3e-9, 55.5e-9, 99e-9, 250e-9}) {
    const CVector g = cplx(0.2, -1.4) * delay_signature(tau, cfg);
    const DelayEstimate e = estimate_delay(g, cfg);
    EXPECT_LT(std::abs(e.tau - tau), cfg.delay_period() * 1e-7) << tau;
    EXPECT_GT(e.peak, 1.0 - 1e-9);
  }
}

TEST(EstimateDelay, ZeroDelayCanonicalized) {
  SystemConfig cfg;
  const DelayEstimate e = estimate_delay(delay_signature(0.0, cfg), cfg);
  EXPECT_LT(std::min(e.tau, cfg.delay_period() - e.tau), cfg.delay_period() * 1e-7);
  EXPECT_GE(e.tau, 0.0);
  EXPECT_LT(e.tau, cfg.delay_period());
}

TEST(EstimateDelay, LengthMustMatch) {
  SystemConfig cfg;
  EXPECT_THROW(estimate_delay(CVector::Ones(5), cfg), ArgumentError);
}

TEST(ResolveGains, ExactFactorsGiveTrueGains) {
  const Fixture s = make_setup(5);
  const CPModel f = channel_factors(s.paths, s.snd, s.cfg);
  const CVector alpha = resolve_gains(f, s.paths.theta, s.paths.phi, s.paths.tau, s.snd, s.cfg);
  EXPECT_LT(rel_err(alpha, s.paths.alpha), 1e-12);
}

TEST(ResolveGains, InvariantToPerPathRescaling) {
  const Fixture s = make_setup(6);
  CPModel f = channel_factors(s.paths, s.snd, s.cfg);
  const CVector before = resolve_gains(f, s.paths.theta, s.paths.phi, s.paths.tau, s.snd, s.cfg);
  std::mt19937_64 rng(7);
  for (Index l = 0; l < f.rank(); ++l) {
    const cplx l1 = complex_gaussian(rng, 4.0);
    const cplx l2 = complex_gaussian(rng, 0.1);
    f.a.col(l) *= l1;
    f.b.col(l) *= l2;
    f.c.col(l) /= l1 * l2;
  }
  const CVector after = resolve_gains(f, s.paths.theta, s.paths.phi, s.paths.tau, s.snd, s.cfg);
  EXPECT_LT(rel_err(after, before), 1e-12);
}

TEST(ResolveGains, DegenerateScaling) {
  const Fixture s = make_setup(8);
  CPModel f = channel_factors(s.paths, s.snd, s.cfg);
  f.a.col(2).setZero();
  EXPECT_THROW(resolve_gains(f, s.paths.theta, s.paths.phi, s.paths.tau, s.snd, s.cfg),
               NumericalError);
}

TEST(Reconstruct, MatchesChannelMatrix) {
  const Fixture s = make_setup(9);
  const auto hs = reconstruct_channels(s.paths, s.cfg, {1, 7, 128});
  ASSERT_EQ(hs.size(), 3u);
  EXPECT_EQ(hs[1], channel_matrix(s.paths, 7, s.cfg));
  EXPECT_EQ(training_subcarriers(s.cfg), (std::vector<Index>{1, 2, 3, 4, 5, 6}));
}

TEST(Differences, WrapAtHalfWavelength) {
  EXPECT_NEAR(sine_difference(0.99, -0.99, 0.5), -0.02, 1e-12);
  EXPECT_NEAR(sine_difference(0.99, -0.99, 0.25), 1.98, 1e-12);
  SystemConfig cfg;
  EXPECT_NEAR(delay_difference(399e-9, 1e-9, cfg), -2e-9, 1e-18);
}

TEST(MatchPaths, IdentityAndSwap) {
  const Fixture s = make_setup(10);
  const auto id = match_paths(s.paths, s.paths, s.cfg);
  EXPECT_EQ(id, (std::vector<Index>{0, 1, 2, 3}));
  PathParams swapped = s.paths;
  std::swap(swapped.theta(0), swapped.theta(3));
  std::swap(swapped.phi(0), swapped.phi(3));
  std::swap(swapped.tau(0), swapped.tau(3));
  std::swap(swapped.alpha(0), swapped.alpha(3));
  EXPECT_EQ(match_paths(s.paths, swapped, s.cfg), (std::vector<Index>{3, 1, 2, 0}));
}

TEST(MatchPaths, UnequalCountsLeaveUnmatched) {
  const Fixture s = make_setup(11);
  PathParams est = PathParams::zeros(2);
  est.theta << s.paths.theta(2), s.paths.theta(0);
  est.phi << s.paths.phi(2), s.paths.phi(0);
  est.tau << s.paths.tau(2), s.paths.tau(0);
  const auto perm = match_paths(s.paths, est, s.cfg);
  EXPECT_EQ(perm[0], 1);
  EXPECT_EQ(perm[2], 0);
  EXPECT_EQ(perm[1], -1);
  EXPECT_EQ(perm[3], -1);
}

TEST(MatchPaths, HungarianAgreesWithBruteForce) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 2 + trial % 6;
    RMatrix cost(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) cost(i, j) = u(rng);
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    double best = 1e300;
    do {
      double c = 0.0;
      for (Index i = 0; i < n; ++i) c += cost(i, perm[i]);
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const auto h = hungarian_assignment(cost);
    double hc = 0.0;
    for (Index i = 0; i < n; ++i) hc += cost(i, h[i]);
    EXPECT_NEAR(hc, best, 1e-12);
  }
}

TEST(MatchPaths, LargeCountUsesAssignment) {
  // Eight paths: beyond the exhaustive limit. A shuffled copy must be undone.
  SystemConfig cfg;
  std::mt19937_64 rng(13);
  const PathParams p = sample_channel(rng, cfg, 8, 100e-9);
  const std::vector<Index> order{5, 2, 7, 0, 1, 6, 3, 4};
  PathParams q = PathParams::zeros(8);
  for (Index j = 0; j < 8; ++j) {
    q.theta(j) = p.theta(order[j]);
    q.phi(j) = p.phi(order[j]);
    q.tau(j) = p.tau(order[j]);
  }
  const auto perm = match_paths(p, q, cfg);
  for (Index j = 0; j < 8; ++j) EXPECT_EQ(perm[order[j]], j);
}

TEST(Metrics, OnePathHandComputed) {
  SystemConfig cfg;
  cfg.n_bs = 4;
  cfg.n_ms = 2;
  PathParams truth = PathParams::zeros(1);
  truth.theta << std::asin(0.5);
  truth.phi << std::asin(-0.25);
  truth.tau << 20e-9;
  truth.alpha << cplx(1.0, 1.0);
  PathParams est = truth;
  est.theta << std::asin(0.52);
  est.phi << std::asin(-0.20);
  est.tau << 23e-9;
  est.alpha << cplx(1.0, 0.5);
  const std::vector<Index> ks{1, 2};
  const Metrics m = metrics(truth, est, reconstruct_channels(truth, cfg, ks),
                            reconstruct_channels(est, cfg, ks), cfg);
  EXPECT_NEAR(m.mse_theta, 0.02 * 0.02, 1e-15);
  EXPECT_NEAR(m.mse_phi, 0.05 * 0.05, 1e-15);
  EXPECT_NEAR(m.mse_tau, 9e-18, 1e-27);
  EXPECT_NEAR(m.mse_alpha, 0.25, 1e-15);
  EXPECT_GT(m.nmse, 0.0);
}

TEST(Metrics, PerfectAndZeroEstimates) {
  const Fixture s = make_setup(14);
  const auto ks = training_subcarriers(s.cfg);
  const auto h = reconstruct_channels(s.paths, s.cfg, ks);
  const Metrics perfect = metrics(s.paths, s.paths, h, h, s.cfg);
  EXPECT_EQ(perfect.mse_theta, 0.0);
  EXPECT_EQ(perfect.nmse, 0.0);
  std::vector<CMatrix> zero;
  for (const auto& x : h) zero.push_back(CMatrix::Zero(x.rows(), x.cols()));
  EXPECT_DOUBLE_EQ(metrics(s.paths, s.paths, h, zero, s.cfg).nmse, 1.0);
}

TEST(Pipeline, NoiselessRecoveryIsExact) {
  const Fixture s = make_setup(15);
  std::mt19937_64 rng(0);
  const ReceivedData d = synthesize(s.paths, s.snd, s.cfg, kNoiseless, rng);
  PipelineOptions o;
  o.rank = 4;
  const EstimateResult est = estimate_pipeline(d, s.snd, s.cfg, o);
  const auto ks = training_subcarriers(s.cfg);
  const Metrics m = metrics(s.paths, est.paths_hat, reconstruct_channels(s.paths, s.cfg, ks),
                            est.h_hat, s.cfg);
  EXPECT_LT(m.nmse, 1e-10);
  const auto perm = match_paths(s.paths, est.paths_hat, s.cfg);
  for (Index l = 0; l < 4; ++l) {
    const Index j = perm[l];
    EXPECT_LT(std::abs(est.paths_hat.alpha(j) - s.paths.alpha(l)) / std::abs(s.paths.alpha(l)),
              1e-6);
    EXPECT_LT(std::abs(wrap2(std::sin(est.paths_hat.phi(j)) - std::sin(s.paths.phi(l)))), 1e-4);
  }
  for (const auto& dg : est.diagnostics) {
    EXPECT_GE(dg.aoa_peak, 0.0);
    EXPECT_LE(dg.aoa_peak, 1.0);
  }
}

TEST(Pipeline, FullBandReconstruction) {
  const Fixture s = make_setup(16);
  std::mt19937_64 rng(0);
  const ReceivedData d = synthesize(s.paths, s.snd, s.cfg, kNoiseless, rng);
  PipelineOptions o;
  o.full_band = true;
  const EstimateResult est = estimate_pipeline(d, s.snd, s.cfg, o);
  ASSERT_EQ(est.h_hat.size(), 128u);
  std::vector<Index> all(128);
  std::iota(all.begin(), all.end(), Index{1});
  const auto h = reconstruct_channels(s.paths, s.cfg, all);
  EXPECT_LT(metrics(s.paths, est.paths_hat, h, est.h_hat, s.cfg).nmse, 1e-10);
}

TEST(Pipeline, KruskalViolatedFails) {
  // K = 1 with M = T = 6 and four paths: k_C = 1 and the decomposition is not unique.
  Fixture s = make_setup(17);
  s.cfg.k_train = 1;
  std::mt19937_64 rng(1);
  const ReceivedData d = synthesize(s.paths, s.snd, s.cfg, kNoiseless, rng);
  const EstimateResult est = estimate_pipeline(d, s.snd, s.cfg, PipelineOptions{});
  const Metrics m = metrics(s.paths, est.paths_hat,
                            reconstruct_channels(s.paths, s.cfg, training_subcarriers(s.cfg)),
                            est.h_hat, s.cfg);
  EXPECT_GT(m.nmse, 0.1);
}

TEST(Pipeline, OverestimatedRankPrunesToTruth) {
  const Fixture s = make_setup(18);
  std::mt19937_64 rng(2);
  const ReceivedData d = synthesize(s.paths, s.snd, s.cfg, kNoiseless, rng);
  PipelineOptions o;
  o.rank_mode = RankMode::Overestimate;
  o.rank_over = 8;
  const EstimateResult est = estimate_pipeline(d, s.snd, s.cfg, o);
  EXPECT_EQ(est.paths_hat.size(), 4);
}

TEST(Pipeline, ShapeMismatch) {
  const Fixture s = make_setup(19);
  ReceivedData d;
  d.y = Tensor3C({6, 6, 5});
  EXPECT_THROW(estimate_pipeline(d, s.snd, s.cfg, PipelineOptions{}), ArgumentError);
}
