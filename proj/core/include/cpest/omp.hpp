#pragma once

// Grid-dictionary compressed-sensing baseline: orthogonal matching pursuit
// over (AoA, AoD, delay) atoms
//   g(tau_n) (x) (P^T a_BS(phi_j)) (x) (Q^T a_MS(theta_i))
// stacked like Tensor3C::data(). The correlation sweep contracts the residual
// tensor one mode at a time, so the dictionary is only materialized when it
// fits the memory budget.

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "cpest/estimator.hpp"

namespace cpest {

struct Grid {
  RVector aoa_sines;  // n1 values of sin(theta), uniform in [-1, 1)
  RVector aod_sines;  // n2 values of sin(phi)
  RVector delays;     // n3 values, uniform in [0, tau_max]

  static Grid uniform(Index n1, Index n2, Index n3, double tau_max);

  Index n1() const noexcept { return aoa_sines.size(); }
  Index n2() const noexcept { return aod_sines.size(); }
  Index n3() const noexcept { return delays.size(); }
  Index atoms() const noexcept { return n1() * n2() * n3(); }
  /// Throws ArgumentError on empty axes or non-increasing points.
  void validate() const;
};

using GridIndex = std::array<Index, 3>;  // (i, j, n), 0-based

/// Unnormalized atom for grid point (i, j, n). Throws ArgumentError when out of range.
CVector dictionary_column(const GridIndex& idx, const Grid& grid, const Sounding& snd,
                          const SystemConfig& cfg);

struct OmpStop {
  std::optional<Index> n_atoms;          // stop after this many atoms
  std::optional<double> residual_tol;    // or when ||r|| / ||y|| falls below this
};

struct OmpOptions {
  OmpStop stop;
  /// Dictionaries larger than this many bytes are never materialized.
  std::size_t memory_budget_bytes = std::size_t{512} << 20;
  /// Force the implicit sweep even when the dictionary would fit.
  bool force_implicit = false;
};

struct OmpResult {
  std::vector<GridIndex> support;
  CVector coefficients;             // LS coefficients of the unnormalized atoms
  std::vector<double> peaks;        // |d^H r| / (||d|| ||r||) of each selection
  double residual_norm = 0.0;
  std::vector<double> residual_history;  // ||r|| after each iteration
  bool implicit = true;             // correlation sweep ran without a dictionary
  bool ridge_applied = false;
};

/// Normalized correlations |d^H r| / ||d|| of every atom with a residual of
/// length M*T*K, flattened with i fastest, then j, then n. Exposed for tests;
/// omp() itself only tracks the maximum.
RVector omp_correlations(const CVector& r, const Grid& grid, const Sounding& snd,
                         const SystemConfig& cfg);

/// Same correlations from the explicitly built dictionary.
RVector omp_correlations_naive(const CVector& r, const Grid& grid, const Sounding& snd,
                               const SystemConfig& cfg);

OmpResult omp(const CVector& y, const Grid& grid, const Sounding& snd, const SystemConfig& cfg,
              const OmpOptions& opts);

/// Runs OMP on vec(Y) with n_atoms = paths and maps the support back to paths.
EstimateResult omp_channel_estimate(const ReceivedData& data, const Grid& grid,
                                    const Sounding& snd, const SystemConfig& cfg, Index paths,
                                    const OmpOptions& opts = {}, OmpResult* detail = nullptr);

}  // namespace cpest
