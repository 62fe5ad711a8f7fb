#pragma once

// Sounding matrices and synthesis of the received training tensor
// Y (M x T x K): sub-frame x time-frame x subcarrier.

#include <limits>
#include <random>

#include "cpest/channel.hpp"
#include "cpest/tensor.hpp"

namespace cpest {

/// Effective beamformers P (n_bs x T) and combiners Q (n_ms x M).
struct Sounding {
  CMatrix p;
  CMatrix q;

  Index frames() const noexcept { return p.cols(); }     // T
  Index subframes() const noexcept { return q.cols(); }  // M
};

struct ReceivedData {
  Tensor3C y;
  Tensor3C y_clean;
  double sigma2 = 0.0;
};

/// Entries scale * exp(j u), u ~ U[-pi, pi], i.i.d.
CMatrix gen_unit_circle(std::mt19937_64& rng, Index rows, Index cols, double scale);

/// Random P with entry modulus 1/n_bs and Q with entry modulus 1/n_ms.
Sounding make_sounding(std::mt19937_64& rng, const SystemConfig& cfg, Index subframes,
                       Index frames);

/// Noiseless factors: A = Q^T A_MS, B = P^T A_BS, C = G diag(alpha).
CPModel channel_factors(const PathParams& paths, const Sounding& snd, const SystemConfig& cfg);

/// Noise-free signal level for infinite SNR.
inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

/// Builds y_clean from the channel factors and adds CN(0, sigma2) noise with
/// sigma2 = ||y_clean||^2 / (M T K 10^(snr_db/10)). snr_db = +inf disables
/// noise. Throws NumericalError if y_clean is identically zero.
ReceivedData synthesize(const PathParams& paths, const Sounding& snd, const SystemConfig& cfg,
                        double snr_db, std::mt19937_64& rng);

/// 10 log10(||y_clean||^2 / ||y - y_clean||^2); +inf when noiseless.
double realized_snr(const ReceivedData& d);

}  // namespace cpest
