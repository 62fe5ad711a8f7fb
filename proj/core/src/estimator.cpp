#include "cpest/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include <boost/math/tools/minima.hpp>

namespace cpest {

namespace {

constexpr int kBrentBits = std::numeric_limits<double>::digits / 2;
constexpr double kDegenerateGain = 1e-12;
constexpr Index kExhaustiveMatchLimit = 6;

struct Peak1D {
  double x = 0.0;
  double value = 0.0;
};

// Maximizes f over a uniform grid of `n` points x_i = lo + i * step, then
// refines with Brent's method on the two neighbouring cells.
Peak1D grid_then_brent(const std::function<double(double)>& f, double lo, double step, int n,
                       double clamp_lo, double clamp_hi) {
  int best = 0;
  double best_value = -1.0;
  for (int i = 0; i < n; ++i) {
    const double v = f(lo + step * i);
    if (v > best_value) {
      best_value = v;
      best = i;
    }
  }
  const double center = lo + step * best;
  const double left = std::max(center - step, clamp_lo);
  const double right = std::min(center + step, clamp_hi);
  const auto neg = [&](double x) { return -f(x); };
  const auto [x, fx] = boost::math::tools::brent_find_minima(neg, left, right, kBrentBits);
  if (-fx >= best_value) return {x, -fx};
  return {center, best_value};
}

double checked_norm(const CVector& v, const char* what) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw ArgumentError(std::string(what) + ": factor column must be finite and nonzero");
  }
  return n;
}

AngleEstimate estimate_angle(const CVector& col, const CMatrix& sounding, double spacing,
                             const SearchOptions& search, const char* what) {
  if (col.size() != sounding.cols()) {
    throw ArgumentError(std::string(what) + ": factor column length does not match the sounding");
  }
  if (search.angle_grid < 2) throw ArgumentError("angle grid needs at least two points");
  const double norm = checked_norm(col, what);
  const Index n = sounding.rows();
  // u enters only through exp(j 2 pi spacing u m); with half-wavelength spacing
  // u = -1 and u = 1 give the same response and the domain is a circle.
  const bool periodic = spacing * 2.0 >= 1.0 - 1e-12;
  const CMatrix st = sounding.transpose();
  const auto corr = [&](double u) {
    const CVector proj = st * steering_vector_sine(u, n, spacing);
    const double pn = proj.norm();
    if (pn == 0.0) return 0.0;
    return std::min(std::abs(col.dot(proj)) / (norm * pn), 1.0);
  };

  Peak1D peak;
  if (periodic) {
    const double step = 2.0 / search.angle_grid;
    peak = grid_then_brent(corr, -1.0, step, search.angle_grid, -1.0 - step, 1.0 + step);
    peak.x = std::remainder(peak.x, 2.0);
    if (peak.x >= 1.0) peak.x -= 2.0;
  } else {
    const double step = 2.0 / (search.angle_grid - 1);
    peak = grid_then_brent(corr, -1.0, step, search.angle_grid, -1.0, 1.0);
  }
  AngleEstimate out;
  out.sine = std::clamp(peak.x, -1.0, 1.0);
  out.angle = std::asin(out.sine);
  out.peak = peak.value;
  out.low_confidence = peak.value < search.low_confidence;
  return out;
}

}  // namespace

AngleEstimate estimate_aoa(const CVector& a_hat, const CMatrix& q, double spacing,
                           const SearchOptions& search) {
  return estimate_angle(a_hat, q, spacing, search, "estimate_aoa");
}

AngleEstimate estimate_aod(const CVector& b_hat, const CMatrix& p, double spacing,
                           const SearchOptions& search) {
  return estimate_angle(b_hat, p, spacing, search, "estimate_aod");
}

DelayEstimate estimate_delay(const CVector& c_hat, const SystemConfig& cfg,
                             const SearchOptions& search) {
  cfg.validate();
  if (c_hat.size() != cfg.k_train) {
    throw ArgumentError("estimate_delay: factor column length must equal k_train");
  }
  if (search.delay_grid < 2) throw ArgumentError("delay grid needs at least two points");
  const double norm = checked_norm(c_hat, "estimate_delay");
  const double period = cfg.delay_period();
  const double gnorm = std::sqrt(static_cast<double>(cfg.k_train));
  // Search in units of the period so Brent's relative tolerance is meaningful.
  const auto corr = [&](double x) {
    return std::min(std::abs(c_hat.dot(delay_signature(x * period, cfg))) / (norm * gnorm), 1.0);
  };
  const double step = 1.0 / search.delay_grid;
  Peak1D peak = grid_then_brent(corr, 0.0, step, search.delay_grid, -step, 1.0 + step);
  double x = peak.x - std::floor(peak.x);
  if (x >= 1.0 - 1e-9 || x < 1e-15) x = 0.0;

  DelayEstimate out;
  out.tau = x * period;
  out.peak = peak.value;
  out.low_confidence = peak.value < search.low_confidence;
  return out;
}

CVector resolve_gains(const CPModel& model, const RVector& theta, const RVector& phi,
                      const RVector& tau, const Sounding& snd, const SystemConfig& cfg) {
  model.validate();
  const Index r = model.rank();
  if (theta.size() != r || phi.size() != r || tau.size() != r) {
    throw ArgumentError("resolve_gains: parameter vectors must match the model rank");
  }
  const double spacing = cfg.element_spacing_wavelengths;
  CVector alpha(r);
  for (Index l = 0; l < r; ++l) {
    const CVector at = snd.q.transpose() * steering_vector(theta(l), cfg.n_ms, spacing);
    const CVector bt = snd.p.transpose() * steering_vector(phi(l), cfg.n_bs, spacing);
    const CVector g = delay_signature(tau(l), cfg);
    const cplx lambda1 = at.dot(model.a.col(l)) / at.squaredNorm();
    const cplx lambda2 = bt.dot(model.b.col(l)) / bt.squaredNorm();
    const cplx l12 = lambda1 * lambda2;
    if (std::abs(l12) < kDegenerateGain) {
      throw NumericalError("resolve_gains: degenerate scaling for path " + std::to_string(l));
    }
    // c_l / lambda3 = lambda1 * lambda2 * c_l
    alpha(l) = l12 * g.dot(model.c.col(l)) / g.squaredNorm();
  }
  return alpha;
}

std::vector<CMatrix> reconstruct_channels(const PathParams& paths, const SystemConfig& cfg,
                                          const std::vector<Index>& subcarriers) {
  std::vector<CMatrix> out;
  out.reserve(subcarriers.size());
  for (Index k : subcarriers) out.push_back(channel_matrix(paths, k, cfg));
  return out;
}

std::vector<Index> training_subcarriers(const SystemConfig& cfg) {
  std::vector<Index> ks(static_cast<std::size_t>(cfg.k_train));
  std::iota(ks.begin(), ks.end(), Index{1});
  return ks;
}

double sine_difference(double u1, double u2, double spacing) {
  const double d = u1 - u2;
  const double period = 1.0 / spacing;
  if (period <= 2.0 + 1e-12) return std::remainder(d, period);
  return d;
}

double delay_difference(double tau1, double tau2, const SystemConfig& cfg) {
  return std::remainder(tau1 - tau2, cfg.delay_period());
}

RMatrix matching_cost(const PathParams& truth, const PathParams& est, const SystemConfig& cfg) {
  const double spacing = cfg.element_spacing_wavelengths;
  const double period = cfg.delay_period();
  RMatrix cost(truth.size(), est.size());
  for (Index i = 0; i < truth.size(); ++i) {
    for (Index j = 0; j < est.size(); ++j) {
      cost(i, j) =
          std::abs(sine_difference(std::sin(truth.theta(i)), std::sin(est.theta(j)), spacing)) +
          std::abs(sine_difference(std::sin(truth.phi(i)), std::sin(est.phi(j)), spacing)) +
          std::abs(delay_difference(truth.tau(i), est.tau(j), cfg)) / period;
    }
  }
  return cost;
}

std::vector<Index> hungarian_assignment(const RMatrix& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw ArgumentError("hungarian_assignment: cost matrix must be square");
  // Shortest augmenting path formulation with row/column potentials, 1-based.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Index> p(n + 1, 0), way(n + 1, 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const Index i0 = p[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assign(n, -1);
  for (Index j = 1; j <= n; ++j)
    if (p[j] != 0) assign[p[j] - 1] = j - 1;
  return assign;
}

std::vector<Index> match_paths(const PathParams& truth, const PathParams& est,
                               const SystemConfig& cfg) {
  const Index lt = truth.size();
  const Index le = est.size();
  const Index n = std::max(lt, le);
  if (n == 0) return {};
  const RMatrix real_cost = matching_cost(truth, est, cfg);
  // Padding cost exceeds any real pair (each term is at most 1, 1 and 0.5).
  RMatrix cost = RMatrix::Constant(n, n, 10.0);
  cost.topLeftCorner(lt, le) = real_cost;

  std::vector<Index> assign;
  if (n <= kExhaustiveMatchLimit) {
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    double best = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (Index i = 0; i < n; ++i) c += cost(i, perm[static_cast<std::size_t>(i)]);
      if (c < best) {
        best = c;
        assign = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    assign = hungarian_assignment(cost);
  }
  std::vector<Index> out(static_cast<std::size_t>(lt), -1);
  for (Index i = 0; i < lt; ++i) {
    const Index j = assign[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = j < le ? j : -1;
  }
  return out;
}

Metrics metrics(const PathParams& truth, const PathParams& est,
                const std::vector<CMatrix>& h_true, const std::vector<CMatrix>& h_hat,
                const SystemConfig& cfg) {
  truth.validate();
  if (h_true.size() != h_hat.size()) {
    throw ArgumentError("metrics: channel lists differ in length");
  }
  const double spacing = cfg.element_spacing_wavelengths;
  const std::vector<Index> perm = match_paths(truth, est, cfg);
  Metrics m;
  for (Index l = 0; l < truth.size(); ++l) {
    const Index j = perm[static_cast<std::size_t>(l)];
    const double u_t = std::sin(truth.theta(l));
    const double v_t = std::sin(truth.phi(l));
    if (j < 0) {
      m.mse_theta += u_t * u_t;
      m.mse_phi += v_t * v_t;
      m.mse_tau += truth.tau(l) * truth.tau(l);
      m.mse_alpha += std::norm(truth.alpha(l));
      continue;
    }
    m.mse_theta += std::pow(sine_difference(u_t, std::sin(est.theta(j)), spacing), 2);
    m.mse_phi += std::pow(sine_difference(v_t, std::sin(est.phi(j)), spacing), 2);
    m.mse_tau += std::pow(delay_difference(truth.tau(l), est.tau(j), cfg), 2);
    m.mse_alpha += std::norm(truth.alpha(l) - est.alpha(j));
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < h_true.size(); ++k) {
    num += (h_true[k] - h_hat[k]).squaredNorm();
    den += h_true[k].squaredNorm();
  }
  m.nmse = den > 0.0 ? num / den : num;
  return m;
}

EstimateResult extract_parameters(const CPModel& model, const Sounding& snd,
                                  const SystemConfig& cfg, const SearchOptions& search,
                                  bool full_band) {
  model.validate();
  const Index r = model.rank();
  const double spacing = cfg.element_spacing_wavelengths;
  EstimateResult out;
  out.model = model;
  out.paths_hat = PathParams::zeros(r);
  out.diagnostics.resize(static_cast<std::size_t>(r));
  for (Index l = 0; l < r; ++l) {
    const AngleEstimate aoa = estimate_aoa(model.a.col(l), snd.q, spacing, search);
    const AngleEstimate aod = estimate_aod(model.b.col(l), snd.p, spacing, search);
    const DelayEstimate del = estimate_delay(model.c.col(l), cfg, search);
    out.paths_hat.theta(l) = aoa.angle;
    out.paths_hat.phi(l) = aod.angle;
    out.paths_hat.tau(l) = del.tau;
    auto& d = out.diagnostics[static_cast<std::size_t>(l)];
    d.aoa_peak = aoa.peak;
    d.aod_peak = aod.peak;
    d.delay_peak = del.peak;
    d.low_confidence = aoa.low_confidence || aod.low_confidence || del.low_confidence;
  }
  out.paths_hat.alpha =
      resolve_gains(model, out.paths_hat.theta, out.paths_hat.phi, out.paths_hat.tau, snd, cfg);
  std::vector<Index> ks = training_subcarriers(cfg);
  if (full_band) {
    ks.resize(static_cast<std::size_t>(cfg.k_total));
    std::iota(ks.begin(), ks.end(), Index{1});
  }
  out.h_hat = reconstruct_channels(out.paths_hat, cfg, ks);
  return out;
}

EstimateResult estimate_pipeline(const ReceivedData& data, const Sounding& snd,
                                 const SystemConfig& cfg, const PipelineOptions& opts) {
  cfg.validate();
  const Tensor3C::Dims expect{snd.subframes(), snd.frames(), cfg.k_train};
  if (data.y.dims() != expect) {
    throw ArgumentError("estimate_pipeline: tensor shape must be M x T x k_train");
  }
  AlsResult als;
  if (opts.rank_mode == RankMode::Known) {
    als = als_fixed_rank(data.y, opts.rank, opts.als);
  } else {
    const double mu = opts.mu ? *opts.mu : default_mu(data.y);
    const AlsResult over = als_regularized(data.y, opts.rank_over, mu, opts.als);
    const CPModel pruned = prune_rank(over.model, opts.eps_rank);
    AlsOptions refine = opts.als;
    refine.init = AlsInit::Given;
    refine.initial = pruned;
    als = als_fixed_rank(data.y, pruned.rank(), refine);
    als.report.mu = mu;
    als.report.iterations += over.report.iterations;
    als.report.ridge_applied = als.report.ridge_applied || over.report.ridge_applied;
  }
  EstimateResult out = extract_parameters(als.model, snd, cfg, opts.search, opts.full_band);
  out.als = std::move(als.report);
  return out;
}

}  // namespace cpest
