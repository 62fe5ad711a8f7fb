#include "cpest/cp_als.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>

#include "cpest/channel.hpp"

namespace cpest {

namespace {

constexpr double kGramRidge = 1e-12;
constexpr double kFitFloor = 1e-14;

struct RunOutcome {
  CPModel model;
  double fit = 1.0;
  double objective = 1.0;  // fit^2 plus the ridge penalty
  int iterations = 0;
  bool converged = false;
  bool ridge_applied = false;
  std::vector<double> half_sweeps;
};

CMatrix random_factor(std::mt19937_64& rng, Index rows, Index cols) {
  CMatrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = complex_gaussian(rng, 1.0);
  return m;
}

// Gram of a Khatri-Rao product: (X kr Y)^T (X kr Y)^* = (X^T X^*) .* (Y^T Y^*).
CMatrix kr_gram(const CMatrix& x, const CMatrix& y) {
  const CMatrix gx = x.transpose() * x.conjugate();
  const CMatrix gy = y.transpose() * y.conjugate();
  return gx.cwiseProduct(gy);
}

// Solves F * gram = rhs for F. gram is Hermitian positive semidefinite.
CMatrix solve_normal_equations(const CMatrix& gram, const CMatrix& rhs, double mu,
                               bool& ridge_applied) {
  const Index r = gram.rows();
  // F gram = rhs  <=>  gram^T F^T = rhs^T, and gram^T is Hermitian as well.
  CMatrix g = gram.transpose();
  g.diagonal().array() += mu;
  Eigen::LLT<CMatrix> llt(g);
  CMatrix sol;
  if (llt.info() == Eigen::Success) sol = llt.solve(rhs.transpose());
  if (llt.info() != Eigen::Success || !sol.allFinite()) {
    ridge_applied = true;
    const double scale = std::max(g.diagonal().real().cwiseAbs().maxCoeff(), 1.0);
    g.diagonal().array() += kGramRidge * scale;
    Eigen::LDLT<CMatrix> ldlt(g);
    sol = ldlt.solve(rhs.transpose());
    if (!sol.allFinite()) {
      throw NumericalError("ALS normal equations are singular even after ridge (rank " +
                           std::to_string(r) + ")");
    }
  }
  return sol.transpose();
}

// Accumulated one frontal slice at a time: a full-size temporary per call
// costs page faults once it crosses the allocator's mmap threshold.
double residual_norm(const Tensor3C& t, const CPModel& m) {
  const auto [n1, n2, n3] = t.dims();
  const CMatrix bt = m.b.transpose();
  CMatrix scaled(n1, m.rank());
  CMatrix slice(n1, n2);
  double sq = 0.0;
  for (Index k = 0; k < n3; ++k) {
    scaled.noalias() = m.a * m.c.row(k).asDiagonal();
    slice = Eigen::Map<const CMatrix>(t.data().data() + k * n1 * n2, n1, n2);
    slice.noalias() -= scaled * bt;
    sq += slice.squaredNorm();
  }
  return std::sqrt(sq);
}

void check_inputs(const Tensor3C& t, Index rank) {
  if (!t.data().allFinite()) throw ArgumentError("ALS: tensor contains NaN or Inf");
  if (rank < 1) throw ArgumentError("ALS: rank must be at least 1");
  const auto [n1, n2, n3] = t.dims();
  if (rank > std::min({n2 * n3, n1 * n3, n1 * n2})) {
    throw ArgumentError("ALS: rank " + std::to_string(rank) +
                        " exceeds the row count of a Khatri-Rao design matrix");
  }
}

void balance_columns(CPModel& m) {
  for (Index r = 0; r < m.rank(); ++r) {
    const double na = m.a.col(r).norm();
    const double nb = m.b.col(r).norm();
    const double nc = m.c.col(r).norm();
    if (na == 0.0 || nb == 0.0 || nc == 0.0) continue;
    const double g = std::cbrt(na * nb * nc);
    m.a.col(r) *= g / na;
    m.b.col(r) *= g / nb;
    m.c.col(r) *= g / nc;
  }
}

RunOutcome run_als(const Tensor3C& tn, CPModel model, double mu, const AlsOptions& opts) {
  RunOutcome out;
  const auto track = [&](const CPModel& m) {
    if (opts.track_half_sweeps) out.half_sweeps.push_back(residual_norm(tn, m));
  };

  double prev_fit = residual_norm(tn, model);
  for (int it = 1; it <= opts.max_iters; ++it) {
    model.a = solve_normal_equations(kr_gram(model.c, model.b),
                                     mttkrp(tn, model, 1, opts.materialize_rows), mu,
                                     out.ridge_applied);
    track(model);
    model.b = solve_normal_equations(kr_gram(model.c, model.a),
                                     mttkrp(tn, model, 2, opts.materialize_rows), mu,
                                     out.ridge_applied);
    track(model);
    model.c = solve_normal_equations(kr_gram(model.b, model.a),
                                     mttkrp(tn, model, 3, opts.materialize_rows), mu,
                                     out.ridge_applied);
    track(model);
    const double fit = residual_norm(tn, model);
    // Under a ridge, unit-norm A and B would load the whole penalty onto C;
    // equal column norms give the smallest penalty for the same tensor.
    if (opts.normalize_columns) mu > 0.0 ? balance_columns(model) : normalize_columns(model);

    out.iterations = it;
    if (fit < kFitFloor ||
        std::abs(prev_fit - fit) < opts.rel_fit_tol * std::max(prev_fit, kFitFloor)) {
      out.converged = true;
      prev_fit = fit;
      break;
    }
    prev_fit = fit;
  }
  out.fit = prev_fit;
  out.objective = prev_fit * prev_fit +
                  mu * (model.a.squaredNorm() + model.b.squaredNorm() + model.c.squaredNorm());
  out.model = std::move(model);
  return out;
}

AlsResult run_restarts(const Tensor3C& t, Index rank, double mu, const AlsOptions& opts) {
  opts.validate();
  check_inputs(t, rank);
  if (mu < 0.0 || !std::isfinite(mu)) throw ArgumentError("ALS: mu must be finite and >= 0");
  const double norm = t.data().norm();
  if (norm == 0.0) throw NumericalError("ALS: tensor is identically zero");
  Tensor3C tn = t;
  tn *= cplx(1.0 / norm, 0.0);
  const auto [n1, n2, n3] = t.dims();

  AlsResult result;
  result.report.mu = mu;
  const int runs = opts.init == AlsInit::Given ? 1 : opts.restarts;
  std::optional<CPModel> algebraic;
  if (opts.init != AlsInit::Given && opts.algebraic_init) algebraic = gevd_init(tn, rank);
  result.report.algebraic_init = algebraic.has_value();
  double best = std::numeric_limits<double>::infinity();
  double best_objective = best;
  for (int r = 0; r < runs && !(best < kFitFloor); ++r) {
    CPModel init;
    if (opts.init == AlsInit::Given) {
      init = *opts.initial;
      if (init.rank() != rank || init.dims() != t.dims()) {
        throw ArgumentError("ALS: initial model does not match the tensor and rank");
      }
      init.c /= norm;
    } else if (r == 0 && algebraic) {
      init = std::move(*algebraic);
    } else {
      std::seed_seq seq{opts.seed, static_cast<std::uint64_t>(r), std::uint64_t{0xA15}};
      std::mt19937_64 rng(seq);
      init.a = random_factor(rng, n1, rank);
      init.b = random_factor(rng, n2, rank);
      init.c = random_factor(rng, n3, rank);
    }
    RunOutcome run = run_als(tn, std::move(init), mu, opts);
    result.report.restart_fits.push_back(run.fit);
    result.report.ridge_applied = result.report.ridge_applied || run.ridge_applied;
    // With a ridge the restarts are ranked by the penalized objective, which is
    // what the sweeps minimize; the bare fit favors keeping surplus components.
    if (run.objective < best_objective) {
      best_objective = run.objective;
      best = run.fit;
      result.model = std::move(run.model);
      result.report.iterations = run.iterations;
      result.report.converged = run.converged;
      result.report.best_restart = r;
      result.report.half_sweep_errors = std::move(run.half_sweeps);
    }
  }
  result.report.final_fit = best;
  result.model.c *= norm;
  for (double& e : result.report.half_sweep_errors) e *= norm;
  return result;
}

}  // namespace

void AlsOptions::validate() const {
  if (max_iters < 1) throw ArgumentError("ALS options: max_iters must be >= 1");
  if (!(rel_fit_tol > 0.0)) throw ArgumentError("ALS options: rel_fit_tol must be > 0");
  if (restarts < 1) throw ArgumentError("ALS options: restarts must be >= 1");
  if (init == AlsInit::Given && !initial) {
    throw ArgumentError("ALS options: init=given requires an initial model");
  }
  if (initial) initial->validate();
}

CMatrix mttkrp(const Tensor3C& t, const CPModel& m, int mode, Index materialize_rows) {
  const auto [n1, n2, n3] = t.dims();
  const Index r = m.rank();
  const cplx* base = t.data().data();
  using ConstMap = Eigen::Map<const CMatrix>;
  switch (mode) {
    case 1: {
      if (n2 * n3 < materialize_rows) {
        return ConstMap(base, n1, n2 * n3) * khatri_rao(m.c, m.b).conjugate();
      }
      CMatrix x = CMatrix::Zero(n1, r);
      const CMatrix bc = m.b.conjugate();
      for (Index k = 0; k < n3; ++k) {
        x.noalias() += ConstMap(base + k * n1 * n2, n1, n2) * bc *
                       m.c.row(k).conjugate().asDiagonal();
      }
      return x;
    }
    case 2: {
      // X_(2) is not a view of the storage, so this mode always goes by slices.
      CMatrix x = CMatrix::Zero(n2, r);
      const CMatrix ac = m.a.conjugate();
      for (Index k = 0; k < n3; ++k) {
        x.noalias() += ConstMap(base + k * n1 * n2, n1, n2).transpose() * ac *
                       m.c.row(k).conjugate().asDiagonal();
      }
      return x;
    }
    case 3: {
      if (n1 * n2 < materialize_rows) {
        return ConstMap(base, n1 * n2, n3).transpose() * khatri_rao(m.b, m.a).conjugate();
      }
      CMatrix x(n3, r);
      const CMatrix ac = m.a.conjugate();
      const CMatrix bc = m.b.conjugate();
      for (Index k = 0; k < n3; ++k) {
        const CMatrix s = ConstMap(base + k * n1 * n2, n1, n2).transpose() * ac;
        x.row(k) = s.cwiseProduct(bc).colwise().sum();
      }
      return x;
    }
    default:
      throw ArgumentError("mttkrp: mode must be 1, 2 or 3");
  }
}

std::optional<CPModel> gevd_init(const Tensor3C& t, Index rank) {
  check_inputs(t, rank);
  const Tensor3C::Dims dims = t.dims();
  // Pick two modes that can hold `rank` independent columns and a third with
  // at least two slices to form the matrix pencil.
  std::array<int, 3> order{-1, -1, -1};
  for (int p = 0; p < 3 && order[0] < 0; ++p) {
    for (int q = p + 1; q < 3 && order[0] < 0; ++q) {
      const int s = 3 - p - q;
      if (dims[p] >= rank && dims[q] >= rank && dims[s] >= 2) order = {p, q, s};
    }
  }
  if (order[0] < 0) return std::nullopt;
  const Index n1 = dims[order[0]];
  const Index n2 = dims[order[1]];
  const Index n3 = dims[order[2]];
  Tensor3C x({n1, n2, n3});
  for (Index k = 0; k < dims[2]; ++k) {
    for (Index j = 0; j < dims[1]; ++j) {
      for (Index i = 0; i < dims[0]; ++i) {
        const std::array<Index, 3> idx{i, j, k};
        x(idx[order[0]], idx[order[1]], idx[order[2]]) = t(i, j, k);
      }
    }
  }

  // Leading left singular vectors from the small Gram matrix, so the cost stays
  // linear in the tensor size.
  const auto leading = [](const CMatrix& m, Index cols) -> CMatrix {
    const Eigen::SelfAdjointEigenSolver<CMatrix> es(m * m.adjoint());
    return es.eigenvectors().rightCols(cols).rowwise().reverse();
  };
  const CMatrix u1 = leading(unfold(x, 1), rank);
  const CMatrix u2 = leading(unfold(x, 2), rank);
  const CMatrix u3 = leading(unfold(x, 3), 2);
  // Slices X_k = A diag(c_k) B^T; two mixtures of them share A and B.
  CMatrix s1 = CMatrix::Zero(n1, n2);
  CMatrix s2 = CMatrix::Zero(n1, n2);
  for (Index k = 0; k < n3; ++k) {
    const Eigen::Map<const CMatrix> slice(x.data().data() + k * n1 * n2, n1, n2);
    s1 += std::conj(u3(k, 0)) * slice;
    s2 += std::conj(u3(k, 1)) * slice;
  }
  const CMatrix c1 = u1.adjoint() * s1 * u2.conjugate();
  const CMatrix c2 = u1.adjoint() * s2 * u2.conjugate();
  const Eigen::PartialPivLU<CMatrix> lu2(c2.transpose());
  // c1 c2^{-1} = A~ D A~^{-1}; solve through the transpose to avoid an explicit inverse.
  const CMatrix pencil = lu2.solve(c1.transpose()).transpose();
  if (!pencil.allFinite()) return std::nullopt;
  Eigen::ComplexEigenSolver<CMatrix> es(pencil);
  if (es.info() != Eigen::Success) return std::nullopt;
  const CMatrix a = u1 * es.eigenvectors();

  // Remaining two factors from the rank-one structure of (C kr B)^T = A^+ X_(1).
  const CMatrix f = a.completeOrthogonalDecomposition().solve(unfold(x, 1));
  if (!f.allFinite()) return std::nullopt;
  CMatrix b(n2, rank);
  CMatrix c(n3, rank);
  for (Index r = 0; r < rank; ++r) {
    const CVector row = f.row(r).transpose();
    const Eigen::Map<const CMatrix> w(row.data(), n2, n3);  // b_r c_r^T
    Eigen::JacobiSVD<CMatrix> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
    b.col(r) = svd.singularValues()(0) * svd.matrixU().col(0);
    c.col(r) = svd.matrixV().col(0).conjugate();
  }
  std::array<CMatrix, 3> factors;
  factors[order[0]] = a;
  factors[order[1]] = std::move(b);
  factors[order[2]] = std::move(c);
  CPModel out{std::move(factors[0]), std::move(factors[1]), std::move(factors[2])};
  if (!out.a.allFinite() || !out.b.allFinite() || !out.c.allFinite()) return std::nullopt;
  normalize_columns(out);
  return out;
}

void normalize_columns(CPModel& m) {
  for (Index r = 0; r < m.rank(); ++r) {
    const double na = m.a.col(r).norm();
    const double nb = m.b.col(r).norm();
    if (na == 0.0 || nb == 0.0) continue;
    m.a.col(r) /= na;
    m.b.col(r) /= nb;
    m.c.col(r) *= na * nb;
  }
}

AlsResult als_fixed_rank(const Tensor3C& t, Index rank, const AlsOptions& opts) {
  return run_restarts(t, rank, 0.0, opts);
}

AlsResult als_regularized(const Tensor3C& t, Index rank_over, double mu, const AlsOptions& opts) {
  return run_restarts(t, rank_over, mu, opts);
}

CPModel prune_rank(const CPModel& m, double eps_rank) {
  m.validate();
  if (!(eps_rank > 0.0 && eps_rank < 1.0)) {
    throw ArgumentError("prune_rank: eps_rank must lie in (0, 1)");
  }
  std::vector<double> energy(static_cast<std::size_t>(m.rank()));
  for (Index r = 0; r < m.rank(); ++r) {
    energy[static_cast<std::size_t>(r)] = m.a.col(r).norm() * m.b.col(r).norm() * m.c.col(r).norm();
  }
  const double top = *std::max_element(energy.begin(), energy.end());
  if (!(top > 0.0)) throw NumericalError("prune_rank: every component is zero");
  std::vector<Index> keep;
  for (Index r = 0; r < m.rank(); ++r) {
    if (energy[static_cast<std::size_t>(r)] >= eps_rank * top) keep.push_back(r);
  }
  return m.select(keep);
}

double estimate_noise_sigma(const Tensor3C& t) {
  // Mode 3 when that unfolding is wide, else the widest one: a wide unfolding
  // has singular values beyond any small CP rank that carry only noise.
  int mode = 3;
  if (t.dim(3) >= t.dim(1) * t.dim(2)) {
    mode = 1;
    for (int n = 2; n <= 3; ++n)
      if (t.dim(n) < t.dim(mode)) mode = n;
  }
  const CMatrix u = unfold(t, mode);
  if (u.rows() >= u.cols()) return 0.0;
  Eigen::JacobiSVD<CMatrix> svd(u);
  const double smallest = svd.singularValues()(svd.singularValues().size() - 1);
  return smallest / std::sqrt(static_cast<double>(u.cols()));
}

double default_mu(const Tensor3C& t, double scale, double floor) {
  const double norm = t.data().norm();
  if (norm == 0.0) return floor;
  const double sigma = estimate_noise_sigma(t);
  const double noise = sigma * std::sqrt(static_cast<double>(t.size())) / norm;
  return std::max(scale * noise, floor);
}

}  // namespace cpest
