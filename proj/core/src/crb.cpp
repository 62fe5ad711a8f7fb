#include "cpest/crb.hpp"

#include <cmath>
#include <random>

namespace cpest {

namespace {

const char* const kGroupNames[] = {"theta", "phi", "tau", "alpha"};

// Vectorized (l, l) columns of the Kronecker products in the score
// covariances: column l is d_l (x) v_l.
struct ScoreColumns {
  CMatrix da, db, dc, dg;
};

ScoreColumns score_columns(const DerivativeFactors& f) {
  return {khatri_rao(f.a_t, khatri_rao(f.c, f.b)), khatri_rao(f.b_t, khatri_rao(f.c, f.a)),
          khatri_rao(f.c_t, khatri_rao(f.b, f.a)), khatri_rao(f.g, khatri_rao(f.b, f.a))};
}

void check_block(const CMatrix& block, int row_group, int col_group) {
  if (!block.allFinite()) {
    throw NumericalError(std::string("FIM block (") + kGroupNames[row_group] + ", " +
                         kGroupNames[col_group] + ") has non-finite entries");
  }
}

template <typename Matrix>
Matrix equilibrated_inverse(const Matrix& omega, double& condition, Index paths) {
  const Index n = omega.rows();
  RVector scale(n);
  for (Index i = 0; i < n; ++i) {
    const double d = std::abs(omega(i, i));
    scale(i) = d > 0.0 ? 1.0 / std::sqrt(d) : 1.0;
  }
  const Matrix eq = scale.asDiagonal() * omega * scale.asDiagonal();
  Eigen::JacobiSVD<Matrix> svd(eq, Eigen::ComputeFullV);
  const RVector sv = svd.singularValues();
  const double smallest = sv(n - 1);
  condition = smallest > 0.0 ? sv(0) / smallest : std::numeric_limits<double>::infinity();
  if (!(condition <= kMaxFimCondition)) {
    Index weakest = 0;
    svd.matrixV().col(n - 1).cwiseAbs().maxCoeff(&weakest);
    throw NumericalError("FIM is singular (condition " + std::to_string(condition) +
                         "); null direction dominated by " + parameter_name(weakest, paths));
  }
  const Matrix inv = eq.partialPivLu().inverse();
  return scale.asDiagonal() * inv * scale.asDiagonal();
}

}  // namespace

void FimInputs::validate() const {
  cfg.validate();
  paths.validate();
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw ArgumentError("FIM inputs: sigma2 must be finite and > 0");
  }
  if (snd.p.rows() != cfg.n_bs || snd.q.rows() != cfg.n_ms) {
    throw ArgumentError("FIM inputs: sounding matrices do not match the array sizes");
  }
}

DerivativeFactors derivative_factors(const PathParams& paths, const Sounding& snd,
                                     const SystemConfig& cfg) {
  const CPModel m = channel_factors(paths, snd, cfg);
  const double spacing = cfg.element_spacing_wavelengths;
  const Index l_count = paths.size();
  DerivativeFactors f;
  f.a = m.a;
  f.b = m.b;
  f.c = m.c;
  f.g = delay_matrix(paths.tau, cfg);
  const cplx j(0.0, 1.0);
  const auto ramp = [](Index n) {
    return RVector::LinSpaced(n, 0.0, static_cast<double>(n - 1));
  };
  const RVector ms_ramp = ramp(cfg.n_ms);
  const RVector bs_ramp = ramp(cfg.n_bs);
  const RVector k_ramp = RVector::LinSpaced(cfg.k_train, 1.0, static_cast<double>(cfg.k_train));
  const double dc = -2.0 * kPi * cfg.f_s / static_cast<double>(cfg.k_total);
  f.a_t.resize(snd.q.cols(), l_count);
  f.b_t.resize(snd.p.cols(), l_count);
  f.c_t.resize(cfg.k_train, l_count);
  for (Index l = 0; l < l_count; ++l) {
    const double wa = 2.0 * kPi * spacing * std::cos(paths.theta(l));
    const double wb = 2.0 * kPi * spacing * std::cos(paths.phi(l));
    const CVector am = steering_vector(paths.theta(l), cfg.n_ms, spacing);
    const CVector ab = steering_vector(paths.phi(l), cfg.n_bs, spacing);
    f.a_t.col(l) = j * (snd.q.transpose() * (wa * ms_ramp).cwiseProduct(am));
    f.b_t.col(l) = j * (snd.p.transpose() * (wb * bs_ramp).cwiseProduct(ab));
    f.c_t.col(l) = j * (dc * k_ramp).cwiseProduct(m.c.col(l));
  }
  return f;
}

CSparse noise_cross_cov(Index m, Index t, Index k, NoisePair pair, double sigma2) {
  if (m < 1 || t < 1 || k < 1) throw ArgumentError("noise_cross_cov: dims must be >= 1");
  const Index n = m * t * k;
  std::vector<Eigen::Triplet<cplx>> entries;
  entries.reserve(static_cast<std::size_t>(n));
  for (Index kk = 0; kk < k; ++kk) {
    for (Index tt = 0; tt < t; ++tt) {
      for (Index mm = 0; mm < m; ++mm) {
        const Index w1h = tt + kk * t + mm * t * k;  // vec(W_(1)^H)
        const Index w2 = mm + kk * m + tt * m * k;   // vec(W_(2)^T) and vec(W_(2)^H)
        const Index w3 = mm + tt * m + kk * m * t;   // vec(W_(3)^T)
        switch (pair) {
          case NoisePair::W12: entries.emplace_back(w1h, w2, sigma2); break;
          case NoisePair::W13: entries.emplace_back(w1h, w3, sigma2); break;
          case NoisePair::W23: entries.emplace_back(w2, w3, sigma2); break;
        }
      }
    }
  }
  CSparse out(n, n);
  out.setFromTriplets(entries.begin(), entries.end());
  return out;
}

Fim fim(const FimInputs& in) {
  in.validate();
  const Index l = in.paths.size();
  const Index mm = in.snd.subframes();
  const Index tt = in.snd.frames();
  const Index kk = in.cfg.k_train;
  const DerivativeFactors f = derivative_factors(in.paths, in.snd, in.cfg);
  const ScoreColumns s = score_columns(f);
  const double s2 = 1.0 / in.sigma2;
  const double s4 = s2 * s2;
  const CSparse w12 = noise_cross_cov(mm, tt, kk, NoisePair::W12, in.sigma2);
  const CSparse w13 = noise_cross_cov(mm, tt, kk, NoisePair::W13, in.sigma2);
  const CSparse w23 = noise_cross_cov(mm, tt, kk, NoisePair::W23, in.sigma2);

  // Upper blocks; index 0..3 = theta, phi, tau, alpha.
  CMatrix blocks[4][4];
  const auto two_re = [](const CMatrix& c) -> CMatrix { return (2.0 * c.real()).cast<cplx>(); };
  blocks[0][0] = two_re(s2 * (s.da.transpose() * s.da.conjugate()));
  blocks[1][1] = two_re(s2 * (s.db.transpose() * s.db.conjugate()));
  blocks[2][2] = two_re(s2 * (s.dc.transpose() * s.dc.conjugate()));
  blocks[3][3] = (s2 * (s.dg.transpose() * s.dg.conjugate())).conjugate();
  blocks[0][1] = two_re(s4 * (s.da.transpose() * (w12 * s.db.conjugate())));
  blocks[0][2] = two_re(s4 * (s.da.transpose() * (w13 * s.dc.conjugate())));
  blocks[1][2] = two_re(s4 * (s.db.transpose() * (w23 * s.dc.conjugate())));
  blocks[0][3] = (s4 * (s.da.transpose() * (w13 * s.dg.conjugate()))).conjugate();
  blocks[1][3] = (s4 * (s.db.transpose() * (w23 * s.dg.conjugate()))).conjugate();
  blocks[2][3] = (s2 * (s.dc.transpose() * s.dg.conjugate())).conjugate();

  Fim out;
  out.paths = l;
  out.omega.resize(4 * l, 4 * l);
  for (int i = 0; i < 4; ++i) {
    for (int j = i; j < 4; ++j) {
      check_block(blocks[i][j], i, j);
      out.omega.block(i * l, j * l, l, l) = blocks[i][j];
      if (j != i) out.omega.block(j * l, i * l, l, l) = blocks[i][j].adjoint();
    }
  }
  return out;
}

RMatrix fim_real_split(const FimInputs& in) {
  in.validate();
  const Index l = in.paths.size();
  const DerivativeFactors f = derivative_factors(in.paths, in.snd, in.cfg);
  // Data layout is m fastest, then t, then k: vec = sum_l c_l (x) b_l (x) a_l.
  CMatrix jac(f.a.rows() * f.b.rows() * f.c.rows(), 5 * l);
  jac.middleCols(0, l) = khatri_rao(f.c, khatri_rao(f.b, f.a_t));
  jac.middleCols(l, l) = khatri_rao(f.c, khatri_rao(f.b_t, f.a));
  jac.middleCols(2 * l, l) = khatri_rao(f.c_t, khatri_rao(f.b, f.a));
  jac.middleCols(3 * l, l) = khatri_rao(f.g, khatri_rao(f.b, f.a));
  jac.middleCols(4 * l, l) = cplx(0.0, 1.0) * jac.middleCols(3 * l, l);
  const RMatrix out = (2.0 / in.sigma2) * (jac.adjoint() * jac).real();
  if (!out.allFinite()) throw NumericalError("real FIM has non-finite entries");
  return out;
}

CrbResult crb(const Fim& f) {
  const Index l = f.paths;
  if (l < 1 || f.omega.rows() != 4 * l || f.omega.cols() != 4 * l) {
    throw ArgumentError("crb: FIM must be 4L x 4L");
  }
  CrbResult r;
  const CMatrix inv = equilibrated_inverse(f.omega, r.condition, l);
  const CVector d = inv.diagonal();
  for (Index i = 0; i < d.size(); ++i) {
    if (std::abs(d(i).imag()) > 1e-8 * std::abs(d(i).real())) {
      throw NumericalError("crb: inverse FIM diagonal is not real at " + parameter_name(i, l));
    }
  }
  const RVector re = d.real();
  r.theta = re.segment(0, l);
  r.phi = re.segment(l, l);
  r.tau = re.segment(2 * l, l);
  r.alpha = re.segment(3 * l, l);
  return r;
}

CrbResult crb_real_split(const RMatrix& j, Index paths) {
  const Index l = paths;
  if (l < 1 || j.rows() != 5 * l || j.cols() != 5 * l) {
    throw ArgumentError("crb_real_split: FIM must be 5L x 5L");
  }
  CrbResult r;
  const RMatrix inv = equilibrated_inverse(j, r.condition, l);
  const RVector d = inv.diagonal();
  r.theta = d.segment(0, l);
  r.phi = d.segment(l, l);
  r.tau = d.segment(2 * l, l);
  r.alpha = d.segment(3 * l, l) + d.segment(4 * l, l);
  return r;
}

CrbResult compute_crb(const FimInputs& in, CrbConvention convention) {
  // At endfire the angle derivative vanishes, but equilibration would rescale
  // that tiny FIM row back to unit size and hide the singularity.
  for (Index l = 0; l < in.paths.size(); ++l) {
    if (std::abs(std::cos(in.paths.theta(l))) < 1e-9 ||
        std::abs(std::cos(in.paths.phi(l))) < 1e-9) {
      throw NumericalError("FIM is singular: path " + std::to_string(l + 1) +
                           " is at endfire, where its angle carries no information");
    }
  }
  if (convention == CrbConvention::RealSplit) {
    return crb_real_split(fim_real_split(in), in.paths.size());
  }
  return crb(fim(in));
}

CrbResult crb_sine_domain(const CrbResult& r, const PathParams& paths) {
  CrbResult out = r;
  for (Index l = 0; l < paths.size(); ++l) {
    out.theta(l) *= std::pow(std::cos(paths.theta(l)), 2);
    out.phi(l) *= std::pow(std::cos(paths.phi(l)), 2);
  }
  return out;
}

CMatrix mc_fim_oracle(const FimInputs& in, int trials, double fd_step, std::uint64_t seed) {
  in.validate();
  if (trials < 1) throw ArgumentError("mc_fim_oracle: trials must be >= 1");
  if (!(fd_step > 0.0)) throw ArgumentError("mc_fim_oracle: fd_step must be > 0");
  const Index l = in.paths.size();
  const auto signal = [&](const PathParams& p) {
    return cp_reconstruct(channel_factors(p, in.snd, in.cfg)).data();
  };
  const CVector x0 = signal(in.paths);
  const auto n = static_cast<double>(x0.size());
  const auto loglik = [&](const CVector& y, const CVector& x) {
    return -n * std::log(kPi * in.sigma2) - (y - x).squaredNorm() / in.sigma2;
  };

  // Perturbed noiseless tensors for each of the 5L real coordinates.
  const double tau_step = fd_step * static_cast<double>(in.cfg.k_total) /
                          (2.0 * kPi * in.cfg.f_s * static_cast<double>(in.cfg.k_train));
  std::vector<CVector> plus(static_cast<std::size_t>(5 * l));
  std::vector<CVector> minus(plus.size());
  RVector step(5 * l);
  for (Index c = 0; c < 5 * l; ++c) {
    const Index group = c / l;
    const Index p = c % l;
    PathParams hi = in.paths;
    PathParams lo = in.paths;
    double h = fd_step;
    switch (group) {
      case 0: hi.theta(p) += h; lo.theta(p) -= h; break;
      case 1: hi.phi(p) += h; lo.phi(p) -= h; break;
      case 2:
        h = tau_step;
        hi.tau(p) += h;
        lo.tau(p) -= h;
        break;
      default: {
        const double mag = std::abs(in.paths.alpha(p));
        h = fd_step * (mag > 0.0 ? mag : 1.0);
        const cplx d = group == 3 ? cplx(h, 0.0) : cplx(0.0, h);
        hi.alpha(p) += d;
        lo.alpha(p) -= d;
      }
    }
    step(c) = h;
    plus[static_cast<std::size_t>(c)] = signal(hi);
    minus[static_cast<std::size_t>(c)] = signal(lo);
  }

  CMatrix acc = CMatrix::Zero(4 * l, 4 * l);
  CVector score(4 * l);
  RVector real_score(5 * l);
  for (int trial = 0; trial < trials; ++trial) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(trial)};
    std::mt19937_64 rng(seq);
    CVector y = x0;
    for (Index i = 0; i < y.size(); ++i) y(i) += complex_gaussian(rng, in.sigma2);
    for (Index c = 0; c < 5 * l; ++c) {
      const auto idx = static_cast<std::size_t>(c);
      real_score(c) = (loglik(y, plus[idx]) - loglik(y, minus[idx])) / (2.0 * step(c));
    }
    for (Index i = 0; i < 3 * l; ++i) score(i) = real_score(i);
    for (Index p = 0; p < l; ++p) {
      score(3 * l + p) = 0.5 * cplx(real_score(3 * l + p), -real_score(4 * l + p));
    }
    acc.noalias() += score.conjugate() * score.transpose();
  }
  return acc / static_cast<double>(trials);
}

std::string parameter_name(Index index, Index paths) {
  if (paths < 1 || index < 0) return "parameter " + std::to_string(index);
  const Index group = index / paths;
  const Index path = index % paths + 1;
  static const char* const names[] = {"theta", "phi", "tau", "alpha", "alpha_imag"};
  if (group > 4) return "parameter " + std::to_string(index);
  return std::string(names[group]) + "_" + std::to_string(path);
}

}  // namespace cpest
