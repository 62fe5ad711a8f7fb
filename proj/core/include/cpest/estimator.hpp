#pragma once

// Channel parameter extraction from CP factor matrices, gain recovery under
// the per-component scaling ambiguity, channel reconstruction, and the
// evaluation metrics used by the experiments.
//
// Angles are searched in u = sin(angle) because a ULA response depends on the
// angle only through u; reported angles are asin(u) in [-pi/2, pi/2] and
// angle errors are measured on u. Delays are identifiable modulo the period
// K bar / f_s and are reported in [0, period).

#include <optional>
#include <vector>

#include "cpest/channel.hpp"
#include "cpest/cp_als.hpp"
#include "cpest/training.hpp"

namespace cpest {

struct SearchOptions {
  int angle_grid = 2048;
  int delay_grid = 4096;
  double low_confidence = 0.1;
};

struct AngleEstimate {
  double angle = 0.0;  // asin(sine)
  double sine = 0.0;
  double peak = 0.0;   // normalized correlation in [0, 1]
  bool low_confidence = false;
};

struct DelayEstimate {
  double tau = 0.0;
  double peak = 0.0;
  bool low_confidence = false;
};

/// argmax_u |a_hat^H Q^T a_MS(u)| / (||a_hat|| ||Q^T a_MS(u)||) over u in [-1, 1].
AngleEstimate estimate_aoa(const CVector& a_hat, const CMatrix& q, double spacing = 0.5,
                           const SearchOptions& search = {});

/// Same correlation search with P^T a_BS(u).
AngleEstimate estimate_aod(const CVector& b_hat, const CMatrix& p, double spacing = 0.5,
                           const SearchOptions& search = {});

/// argmax_tau |c_hat^H g(tau)| / (||c_hat|| ||g(tau)||) over [0, K bar / f_s).
DelayEstimate estimate_delay(const CVector& c_hat, const SystemConfig& cfg,
                             const SearchOptions& search = {});

/// Per-path gains from the factor columns given the extracted parameters.
/// `theta` and `phi` are angles (any representative with the right sine).
/// Throws NumericalError when |lambda1 * lambda2| < 1e-12 for a path.
CVector resolve_gains(const CPModel& model, const RVector& theta, const RVector& phi,
                      const RVector& tau, const Sounding& snd, const SystemConfig& cfg);

/// H_k for each requested 1-based subcarrier index.
std::vector<CMatrix> reconstruct_channels(const PathParams& paths, const SystemConfig& cfg,
                                          const std::vector<Index>& subcarriers);
/// Subcarriers 1..cfg.k_train.
std::vector<Index> training_subcarriers(const SystemConfig& cfg);

/// Sine-domain angle difference; wraps when the ULA response is periodic in u
/// with period <= 2 (half-wavelength spacing).
double sine_difference(double u1, double u2, double spacing);
/// Delay difference reduced modulo the delay period.
double delay_difference(double tau1, double tau2, const SystemConfig& cfg);

/// perm[l] is the estimate matched to true path l, or -1 when unmatched.
/// Minimizes sum |du_theta| + |du_phi| + |dtau| / period; exhaustive up to six
/// paths, Hungarian assignment beyond.
std::vector<Index> match_paths(const PathParams& truth, const PathParams& est,
                               const SystemConfig& cfg);

/// Cost of assigning each true path (rows) to each estimate (columns).
RMatrix matching_cost(const PathParams& truth, const PathParams& est, const SystemConfig& cfg);

/// Minimum-cost assignment on a square cost matrix; result[i] = column of row i.
std::vector<Index> hungarian_assignment(const RMatrix& cost);

struct Metrics {
  double mse_theta = 0.0;  // sum over paths of squared sine errors
  double mse_phi = 0.0;
  double mse_tau = 0.0;    // seconds^2
  double mse_alpha = 0.0;
  double nmse = 0.0;
};

/// Squared-error metrics after optimal path matching, plus channel NMSE
/// sum_k ||H_k - H_k_hat||^2 / sum_k ||H_k||^2. Unmatched true paths are
/// scored against a zero estimate.
Metrics metrics(const PathParams& truth, const PathParams& est,
                const std::vector<CMatrix>& h_true, const std::vector<CMatrix>& h_hat,
                const SystemConfig& cfg);

enum class RankMode { Known, Overestimate };

struct PipelineOptions {
  RankMode rank_mode = RankMode::Known;
  Index rank = 4;                  // known path count
  Index rank_over = 8;             // overestimated rank
  std::optional<double> mu;        // default_mu() when empty
  double eps_rank = 1e-2;
  AlsOptions als;
  SearchOptions search;
  bool full_band = false;          // reconstruct all k_total subcarriers
};

struct PathDiagnostics {
  double aoa_peak = 0.0;
  double aod_peak = 0.0;
  double delay_peak = 0.0;
  bool low_confidence = false;
};

struct EstimateResult {
  PathParams paths_hat;
  std::vector<CMatrix> h_hat;
  std::vector<PathDiagnostics> diagnostics;
  CPModel model;
  AlsReport als;
};

/// Extracts parameters and channels from an already decomposed model.
EstimateResult extract_parameters(const CPModel& model, const Sounding& snd,
                                  const SystemConfig& cfg, const SearchOptions& search,
                                  bool full_band = false);

/// CP decomposition of the received tensor followed by parameter extraction.
EstimateResult estimate_pipeline(const ReceivedData& data, const Sounding& snd,
                                 const SystemConfig& cfg, const PipelineOptions& opts);

}  // namespace cpest
