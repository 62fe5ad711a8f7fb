#pragma once

// Geometric wideband mmWave channel: ULA steering vectors, per-path delay
// signatures over the training subcarriers, frequency-domain channel
// matrices and random channel realizations.

#include <random>
#include <vector>

#include "cpest/types.hpp"

namespace cpest {

struct SystemConfig {
  Index n_bs = 64;         // antennas at the base station
  Index n_ms = 32;         // antennas at the mobile station
  Index k_total = 128;     // total subcarriers (K bar)
  Index k_train = 6;       // training subcarriers, indices 1..k_train
  double f_s = 0.32e9;     // sampling rate, Hz
  double f_c = 28e9;       // carrier frequency, Hz
  double distance_m = 100.0;
  double element_spacing_wavelengths = 0.5;

  /// Throws ArgumentError on non-positive counts/rates or k_train > k_total.
  void validate() const;
  /// Delay period of g(tau): K bar / f_s seconds.
  double delay_period() const { return static_cast<double>(k_total) / f_s; }
};

/// Path parameters. Angles in radians, delays in seconds.
struct PathParams {
  RVector theta;  // AoA at the MS
  RVector phi;    // AoD at the BS
  RVector tau;
  CVector alpha;

  Index size() const noexcept { return theta.size(); }
  /// Throws ArgumentError if the four vectors disagree in length or are empty.
  void validate() const;
  /// Zero-initialized parameters for L paths.
  static PathParams zeros(Index paths);
};

/// Minimum separations enforcing distinct angles and delays between paths.
struct SeparationRule {
  double min_sin_gap = 1e-3;
  double min_delay_fraction = 1e-3;  // times tau_max
};

/// a(angle)[m] = exp(j 2 pi spacing sin(angle) m), m = 0..n-1.
CVector steering_vector(double angle, Index n, double spacing = 0.5);
/// Same vector parameterized by u = sin(angle).
CVector steering_vector_sine(double u, Index n, double spacing = 0.5);
/// Columns are steering vectors of the given angles.
CMatrix steering_matrix(const RVector& angles, Index n, double spacing = 0.5);

/// g(tau)[k-1] = exp(-j 2 pi tau f_s k / K bar), k = 1..k_train.
CVector delay_signature(double tau, const SystemConfig& cfg);
/// Columns g(tau_l).
CMatrix delay_matrix(const RVector& taus, const SystemConfig& cfg);

/// H_k = sum_l alpha_l exp(-j 2 pi tau_l f_s k / K bar) a_MS(theta_l) a_BS(phi_l)^T,
/// k in 1..k_total. Returns n_ms x n_bs.
CMatrix channel_matrix(const PathParams& paths, Index k, const SystemConfig& cfg);

/// Free-space path loss rho = (4 pi D f_c / c)^2.
double path_loss(const SystemConfig& cfg);

/// True when every pair of paths is separated per `rule`.
bool satisfies_separation(const PathParams& paths, double tau_max,
                          const SeparationRule& rule = {});

/// Draws L paths: angles uniform on [0, 2 pi), delays uniform on [0, tau_max],
/// gains CN(0, 1/rho). A path that violates the separation rule against the
/// paths already drawn is redrawn; gives up with ConfigError.
PathParams sample_channel(std::mt19937_64& rng, const SystemConfig& cfg, Index paths,
                          double tau_max, const SeparationRule& rule = {});

/// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
cplx complex_gaussian(std::mt19937_64& rng, double variance = 1.0);

}  // namespace cpest
