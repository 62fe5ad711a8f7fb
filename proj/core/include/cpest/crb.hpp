#pragma once

// Fisher information and Cramer-Rao bounds for p = [theta; phi; tau; alpha]
// under white circular Gaussian noise.
//
// fim() assembles the complex FIM Omega = E{(dL/dp)^H (dL/dp)} block by block
// from the score covariances of the unfolded noise, with dL/dalpha taken as a
// Wirtinger derivative. Because Omega mixes real and complex parameters, its
// inverse under-counts the coupling between alpha and the real parameters;
// fim_real_split() gives the standard real FIM over
// [theta; phi; tau; Re alpha; Im alpha] for comparison.

#include <cstdint>
#include <string>

#include <Eigen/SparseCore>

#include "cpest/channel.hpp"
#include "cpest/training.hpp"

namespace cpest {

using CSparse = Eigen::SparseMatrix<cplx>;

struct FimInputs {
  PathParams paths;
  Sounding snd;
  SystemConfig cfg;
  double sigma2 = 1.0;

  /// Throws ArgumentError unless sigma2 > 0 and the shapes agree.
  void validate() const;
};

struct DerivativeFactors {
  CMatrix a, b, c;        // channel factors
  CMatrix a_t, b_t, c_t;  // d a_l / d theta_l, d b_l / d phi_l, d c_l / d tau_l
  CMatrix g;              // delay signatures, c = g diag(alpha)
};

/// a_t = j Q^T D_a a_MS with D_a = 2 pi spacing cos(theta) diag(0..N_MS-1)
/// (pi cos(theta) at half-wavelength spacing); likewise b_t; c_t = j D_c c with
/// D_c = -2 pi (f_s / K bar) diag(1..K).
DerivativeFactors derivative_factors(const PathParams& paths, const Sounding& snd,
                                     const SystemConfig& cfg);

/// Which pair of unfolded-noise vectors to correlate:
///   W12: E{vec(W_(1)^H) vec(W_(2)^T)^T}, (TKM) x (MKT)
///   W13: E{vec(W_(1)^H) vec(W_(3)^T)^T}, (TKM) x (MTK)
///   W23: E{vec(W_(2)^H) vec(W_(3)^T)^T}, (MKT) x (MTK)
enum class NoisePair { W12, W13, W23 };

/// sigma2-scaled permutation matrix: one nonzero per row and column.
CSparse noise_cross_cov(Index m, Index t, Index k, NoisePair pair, double sigma2);

struct Fim {
  CMatrix omega;  // 4L x 4L, ordered [theta; phi; tau; alpha]
  Index paths = 0;
};

/// Complex FIM. Throws NumericalError naming the block on non-finite entries.
Fim fim(const FimInputs& in);

/// Real FIM (2/sigma2) Re{J^H J} over [theta; phi; tau; Re alpha; Im alpha],
/// 5L x 5L, with J the Jacobian of the vectorized noiseless tensor.
RMatrix fim_real_split(const FimInputs& in);

struct CrbResult {
  RVector theta, phi, tau, alpha;  // per-path bounds; alpha is E|alpha_hat - alpha|^2
  double condition = 0.0;          // 2-norm condition of the equilibrated FIM
};

/// Bounds above this equilibrated condition number are refused.
inline constexpr double kMaxFimCondition = 1e12;

/// Diagonal of Omega^{-1}. Throws NumericalError when Omega is singular
/// (condition > kMaxFimCondition), naming the weakest parameter.
CrbResult crb(const Fim& f);
/// Same for the real-split FIM; alpha bounds are Re + Im.
CrbResult crb_real_split(const RMatrix& j, Index paths);

enum class CrbConvention { Complex, RealSplit };

/// Throws NumericalError for a path at endfire or a singular FIM.
CrbResult compute_crb(const FimInputs& in, CrbConvention convention = CrbConvention::Complex);

/// Bounds on sin(theta) and sin(phi): cos^2 times the angle bounds.
CrbResult crb_sine_domain(const CrbResult& r, const PathParams& paths);

/// Monte-Carlo estimate of E{(dL/dp)^H (dL/dp)} with the score taken by central
/// differences of the Gaussian log-likelihood. The alpha score is the
/// Wirtinger derivative (d/dRe - j d/dIm) / 2. `fd_step` is in radians of
/// phase for theta, phi and tau and relative to |alpha| for alpha.
CMatrix mc_fim_oracle(const FimInputs& in, int trials, double fd_step = 1e-5,
                      std::uint64_t seed = 0);

/// Names the parameter at a 0-based index of the [theta; phi; tau; alpha] ordering.
std::string parameter_name(Index index, Index paths);

}  // namespace cpest
