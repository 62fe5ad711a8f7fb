#include "cpest/omp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cpest {

namespace {

constexpr double kOmpRidge = 1e-10;
constexpr Index kDelayChunk = 64;

// Per-axis compressed responses and their inverse column norms.
struct AxisOperators {
  CMatrix a;  // M x n1
  CMatrix b;  // T x n2
  CMatrix g;  // K x n3
  RVector inv_a, inv_b, inv_g;
};

RVector inverse_norms(const CMatrix& m) {
  RVector out(m.cols());
  for (Index c = 0; c < m.cols(); ++c) {
    const double n = m.col(c).norm();
    out(c) = n > 0.0 ? 1.0 / n : 0.0;
  }
  return out;
}

AxisOperators axis_operators(const Grid& grid, const Sounding& snd, const SystemConfig& cfg) {
  const double spacing = cfg.element_spacing_wavelengths;
  AxisOperators ops;
  ops.a.resize(snd.subframes(), grid.n1());
  ops.b.resize(snd.frames(), grid.n2());
  for (Index i = 0; i < grid.n1(); ++i) {
    ops.a.col(i) = snd.q.transpose() * steering_vector_sine(grid.aoa_sines(i), cfg.n_ms, spacing);
  }
  for (Index j = 0; j < grid.n2(); ++j) {
    ops.b.col(j) = snd.p.transpose() * steering_vector_sine(grid.aod_sines(j), cfg.n_bs, spacing);
  }
  ops.g = delay_matrix(grid.delays, cfg);
  ops.inv_a = inverse_norms(ops.a);
  ops.inv_b = inverse_norms(ops.b);
  ops.inv_g = inverse_norms(ops.g);
  return ops;
}

CVector atom(const AxisOperators& ops, const GridIndex& idx) {
  const CVector& a = ops.a.col(idx[0]);
  const Index m = ops.a.rows();
  const Index t = ops.b.rows();
  const Index k = ops.g.rows();
  CVector out(m * t * k);
  for (Index kk = 0; kk < k; ++kk) {
    for (Index tt = 0; tt < t; ++tt) {
      out.segment(m * (tt + t * kk), m) = ops.g(kk, idx[2]) * ops.b(tt, idx[1]) * a;
    }
  }
  return out;
}

// Contracts the residual with conj(a) and conj(b): result is (n1 n2) x K,
// row i + n1 * j.
CMatrix contract_angles(const CVector& r, const AxisOperators& ops) {
  const Index m = ops.a.rows();
  const Index t = ops.b.rows();
  const Index k = ops.g.rows();
  const Index n1 = ops.a.cols();
  const Index n2 = ops.b.cols();
  const Eigen::Map<const CMatrix> r1(r.data(), m, t * k);
  const CMatrix z1 = ops.a.adjoint() * r1;  // n1 x (T K)
  const CMatrix bc = ops.b.conjugate();
  CMatrix z2(n1 * n2, k);
  for (Index kk = 0; kk < k; ++kk) {
    Eigen::Map<CMatrix>(z2.col(kk).data(), n1, n2) = z1.middleCols(kk * t, t) * bc;
  }
  return z2;
}

// Visits every normalized correlation, delay chunk by delay chunk.
template <typename Visit>
void sweep_implicit(const CVector& r, const AxisOperators& ops, Visit&& visit) {
  const Index n1 = ops.a.cols();
  const Index n2 = ops.b.cols();
  const Index n3 = ops.g.cols();
  const CMatrix z2 = contract_angles(r, ops);
  RVector ang_scale(n1 * n2);
  for (Index j = 0; j < n2; ++j)
    for (Index i = 0; i < n1; ++i) ang_scale(i + n1 * j) = ops.inv_a(i) * ops.inv_b(j);
  const CMatrix gc = ops.g.conjugate();
  CMatrix block;
  for (Index n0 = 0; n0 < n3; n0 += kDelayChunk) {
    const Index width = std::min(kDelayChunk, n3 - n0);
    block.noalias() = z2 * gc.middleCols(n0, width);
    for (Index c = 0; c < width; ++c) {
      const double gs = ops.inv_g(n0 + c);
      const cplx* col = block.col(c).data();
      for (Index p = 0; p < n1 * n2; ++p) {
        visit(p + n1 * n2 * (n0 + c), std::abs(col[p]) * ang_scale(p) * gs);
      }
    }
  }
}

CMatrix build_dictionary(const AxisOperators& ops, bool normalized) {
  const Index n1 = ops.a.cols();
  const Index n2 = ops.b.cols();
  const Index n3 = ops.g.cols();
  CMatrix d(ops.a.rows() * ops.b.rows() * ops.g.rows(), n1 * n2 * n3);
  for (Index n = 0; n < n3; ++n) {
    for (Index j = 0; j < n2; ++j) {
      for (Index i = 0; i < n1; ++i) {
        const Index col = i + n1 * (j + n2 * n);
        d.col(col) = atom(ops, {i, j, n});
        if (normalized) d.col(col) *= ops.inv_a(i) * ops.inv_b(j) * ops.inv_g(n);
      }
    }
  }
  return d;
}

GridIndex unflatten(Index flat, const Grid& grid) {
  const Index n1 = grid.n1();
  const Index n2 = grid.n2();
  return {flat % n1, (flat / n1) % n2, flat / (n1 * n2)};
}

void check_lengths(const CVector& r, const Sounding& snd, const SystemConfig& cfg) {
  if (r.size() != snd.subframes() * snd.frames() * cfg.k_train) {
    throw ArgumentError("OMP: signal length must equal M*T*K");
  }
}

}  // namespace

Grid Grid::uniform(Index n1, Index n2, Index n3, double tau_max) {
  if (n1 < 1 || n2 < 1 || n3 < 1) throw ArgumentError("grid sizes must be >= 1");
  if (!(tau_max >= 0.0)) throw ArgumentError("grid tau_max must be >= 0");
  Grid g;
  g.aoa_sines = RVector::LinSpaced(n1, 0.0, static_cast<double>(n1 - 1)) * (2.0 / n1);
  g.aoa_sines.array() -= 1.0;
  g.aod_sines = RVector::LinSpaced(n2, 0.0, static_cast<double>(n2 - 1)) * (2.0 / n2);
  g.aod_sines.array() -= 1.0;
  g.delays = n3 == 1 ? RVector(RVector::Zero(1)) : RVector(RVector::LinSpaced(n3, 0.0, tau_max));
  return g;
}

void Grid::validate() const {
  const auto increasing = [](const RVector& v) {
    if (v.size() < 1) return false;
    for (Index i = 1; i < v.size(); ++i)
      if (!(v(i) > v(i - 1))) return false;
    return true;
  };
  if (!increasing(aoa_sines) || !increasing(aod_sines) || !increasing(delays)) {
    throw ArgumentError("grid axes must be nonempty and strictly increasing");
  }
}

CVector dictionary_column(const GridIndex& idx, const Grid& grid, const Sounding& snd,
                          const SystemConfig& cfg) {
  grid.validate();
  if (idx[0] < 0 || idx[0] >= grid.n1() || idx[1] < 0 || idx[1] >= grid.n2() || idx[2] < 0 ||
      idx[2] >= grid.n3()) {
    throw ArgumentError("dictionary_column: grid index out of range");
  }
  const double spacing = cfg.element_spacing_wavelengths;
  AxisOperators ops;
  ops.a = snd.q.transpose() * steering_vector_sine(grid.aoa_sines(idx[0]), cfg.n_ms, spacing);
  ops.b = snd.p.transpose() * steering_vector_sine(grid.aod_sines(idx[1]), cfg.n_bs, spacing);
  ops.g = delay_signature(grid.delays(idx[2]), cfg);
  return atom(ops, {0, 0, 0});
}

RVector omp_correlations(const CVector& r, const Grid& grid, const Sounding& snd,
                         const SystemConfig& cfg) {
  grid.validate();
  check_lengths(r, snd, cfg);
  const AxisOperators ops = axis_operators(grid, snd, cfg);
  RVector out(grid.atoms());
  sweep_implicit(r, ops, [&](Index flat, double v) { out(flat) = v; });
  return out;
}

RVector omp_correlations_naive(const CVector& r, const Grid& grid, const Sounding& snd,
                               const SystemConfig& cfg) {
  grid.validate();
  check_lengths(r, snd, cfg);
  const CMatrix d = build_dictionary(axis_operators(grid, snd, cfg), true);
  return (d.adjoint() * r).cwiseAbs();
}

OmpResult omp(const CVector& y, const Grid& grid, const Sounding& snd, const SystemConfig& cfg,
              const OmpOptions& opts) {
  grid.validate();
  check_lengths(y, snd, cfg);
  if (!opts.stop.n_atoms && !opts.stop.residual_tol) {
    throw ArgumentError("OMP: give n_atoms or residual_tol");
  }
  if (opts.stop.n_atoms && *opts.stop.n_atoms < 0) throw ArgumentError("OMP: n_atoms < 0");
  const AxisOperators ops = axis_operators(grid, snd, cfg);

  OmpResult res;
  const double y_norm = y.norm();
  res.residual_norm = y_norm;
  const double bytes = static_cast<double>(y.size()) * static_cast<double>(grid.atoms()) *
                       static_cast<double>(sizeof(cplx));
  res.implicit = opts.force_implicit || bytes > static_cast<double>(opts.memory_budget_bytes);
  if (y_norm == 0.0) return res;

  CMatrix dict;
  if (!res.implicit) dict = build_dictionary(ops, true);

  Index max_atoms = std::min(y.size(), grid.atoms());
  if (opts.stop.n_atoms) max_atoms = std::min(max_atoms, *opts.stop.n_atoms);
  CMatrix selected(y.size(), 0);
  CVector r = y;
  for (Index it = 0; it < max_atoms; ++it) {
    if (opts.stop.residual_tol && res.residual_norm < *opts.stop.residual_tol * y_norm) break;
    Index best = 0;
    double best_val = -1.0;
    if (res.implicit) {
      sweep_implicit(r, ops, [&](Index flat, double v) {
        if (v > best_val) {
          best_val = v;
          best = flat;
        }
      });
    } else {
      best_val = (dict.adjoint() * r).cwiseAbs().maxCoeff(&best);
    }
    const GridIndex idx = unflatten(best, grid);
    res.support.push_back(idx);
    res.peaks.push_back(std::min(best_val / res.residual_norm, 1.0));
    selected.conservativeResize(Eigen::NoChange, selected.cols() + 1);
    selected.col(selected.cols() - 1) = atom(ops, idx);

    CMatrix gram = selected.adjoint() * selected;
    const CVector rhs = selected.adjoint() * y;
    Eigen::LLT<CMatrix> llt(gram);
    CVector coef;
    if (llt.info() == Eigen::Success) coef = llt.solve(rhs);
    if (llt.info() != Eigen::Success || !coef.allFinite()) {
      res.ridge_applied = true;
      gram.diagonal().array() += kOmpRidge * gram.diagonal().real().maxCoeff();
      coef = gram.ldlt().solve(rhs);
    }
    res.coefficients = coef;
    r = y - selected * coef;
    res.residual_norm = r.norm();
    res.residual_history.push_back(res.residual_norm);
  }
  return res;
}

EstimateResult omp_channel_estimate(const ReceivedData& data, const Grid& grid,
                                    const Sounding& snd, const SystemConfig& cfg, Index paths,
                                    const OmpOptions& opts, OmpResult* detail) {
  OmpOptions o = opts;
  o.stop.n_atoms = paths;
  const OmpResult res = omp(data.y.data(), grid, snd, cfg, o);
  const auto n = static_cast<Index>(res.support.size());
  if (n == 0) throw NumericalError("OMP selected no atoms");
  EstimateResult out;
  out.paths_hat = PathParams::zeros(n);
  out.diagnostics.resize(static_cast<std::size_t>(n));
  for (Index l = 0; l < n; ++l) {
    const GridIndex& idx = res.support[static_cast<std::size_t>(l)];
    out.paths_hat.theta(l) = std::asin(grid.aoa_sines(idx[0]));
    out.paths_hat.phi(l) = std::asin(grid.aod_sines(idx[1]));
    out.paths_hat.tau(l) = grid.delays(idx[2]);
    out.paths_hat.alpha(l) = res.coefficients(l);
    auto& d = out.diagnostics[static_cast<std::size_t>(l)];
    d.aoa_peak = d.aod_peak = d.delay_peak = res.peaks[static_cast<std::size_t>(l)];
  }
  out.h_hat = reconstruct_channels(out.paths_hat, cfg, training_subcarriers(cfg));
  if (detail) *detail = res;
  return out;
}

}  // namespace cpest
