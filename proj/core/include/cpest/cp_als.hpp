#pragma once

// CP decomposition by alternating least squares.
//
// Each factor update solves the normal equations of
//   min_A || Y_(1)^T - (C kr B) A^T ||_F^2   (+ mu ||A||_F^2 when regularized)
// using the R x R Gram (C^T C*) .* (B^T B*). The data tensor is scaled to unit
// Frobenius norm internally; the returned C carries the scale back, and `mu`
// is interpreted on the unit-norm tensor.

#include <cstdint>
#include <optional>
#include <vector>

#include "cpest/tensor.hpp"

namespace cpest {

enum class AlsInit { RandomGaussian, Given };

struct AlsOptions {
  int max_iters = 1000;
  double rel_fit_tol = 1e-8;
  int restarts = 5;
  AlsInit init = AlsInit::RandomGaussian;
  std::optional<CPModel> initial;  // required for AlsInit::Given
  bool normalize_columns = true;
  /// Start the first restart from gevd_init() when the tensor shape allows it.
  bool algebraic_init = true;
  std::uint64_t seed = 0;
  /// Record ||Y - model||_F after every factor update of the kept restart.
  bool track_half_sweeps = false;
  /// Khatri-Rao products with fewer rows than this are materialized for the
  /// mode-1 and mode-3 MTTKRP; larger ones are contracted slice by slice.
  /// Mode 2 always goes by slices.
  Index materialize_rows = 1'000'000;

  void validate() const;
};

struct AlsReport {
  int iterations = 0;             // sweeps used by the kept restart
  double final_fit = 1.0;         // relative fit of the kept restart
  std::vector<double> restart_fits;
  bool converged = false;
  bool ridge_applied = false;     // a singular Gram needed the 1e-12 ridge
  bool algebraic_init = false;    // restart 0 started from gevd_init()
  int best_restart = 0;
  std::vector<double> half_sweep_errors;
  double mu = 0.0;
};

struct AlsResult {
  CPModel model;
  AlsReport report;
};

/// Fixed-rank CP-ALS, best of `opts.restarts` runs.
AlsResult als_fixed_rank(const Tensor3C& t, Index rank, const AlsOptions& opts = {});

/// CP-ALS with each least-squares problem augmented by sqrt(mu) I, run at an
/// overestimated rank. mu = 0 reproduces als_fixed_rank.
AlsResult als_regularized(const Tensor3C& t, Index rank_over, double mu,
                          const AlsOptions& opts = {});

/// Algebraic starting point from the generalized eigenvectors of two slice
/// mixtures. Needs two modes of size >= rank and a third of size >= 2;
/// returns nullopt otherwise or when the pencil is degenerate. Exact for
/// noiseless tensors whose factors in those two modes have full column rank
/// and whose pencil eigenvalues are distinct.
std::optional<CPModel> gevd_init(const Tensor3C& t, Index rank);

/// Keeps component r iff ||a_r|| ||b_r|| ||c_r|| >= eps_rank * max_s of the same.
/// Throws NumericalError if every component vanishes.
CPModel prune_rank(const CPModel& m, double eps_rank = 1e-2);

/// Scales A and B columns to unit norm and moves the scale into C. Zero
/// columns are left untouched.
void normalize_columns(CPModel& m);

/// Noise standard deviation per entry estimated from the smallest singular
/// value of the mode-3 unfolding, or of the widest one when K >= M*T.
double estimate_noise_sigma(const Tensor3C& t);

/// mu = max(scale * sigma_hat * sqrt(MTK) / ||t||, floor), in unit-norm units.
/// The floor is what a noiseless tensor gets; 3e-3 prunes an L = 4 channel
/// fitted at rank 8 back to 4 components in about nine trials of ten.
double default_mu(const Tensor3C& t, double scale = 1e-2, double floor = 3e-3);

/// Y_(mode) * conj(khatri_rao of the other two factors), computed without
/// forming the unfolding. Exposed for tests and benchmarks.
CMatrix mttkrp(const Tensor3C& t, const CPModel& m, int mode, Index materialize_rows);

}  // namespace cpest
