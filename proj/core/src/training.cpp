#include "cpest/training.hpp"

#include <cmath>
#include <limits>

namespace cpest {

CMatrix gen_unit_circle(std::mt19937_64& rng, Index rows, Index cols, double scale) {
  if (rows < 1 || cols < 1) throw ArgumentError("gen_unit_circle: dimensions must be >= 1");
  if (!(scale > 0.0)) throw ArgumentError("gen_unit_circle: scale must be > 0");
  std::uniform_real_distribution<double> phase(-kPi, kPi);
  CMatrix out(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = std::polar(scale, phase(rng));
  return out;
}

Sounding make_sounding(std::mt19937_64& rng, const SystemConfig& cfg, Index subframes,
                       Index frames) {
  cfg.validate();
  Sounding snd;
  snd.p = gen_unit_circle(rng, cfg.n_bs, frames, 1.0 / static_cast<double>(cfg.n_bs));
  snd.q = gen_unit_circle(rng, cfg.n_ms, subframes, 1.0 / static_cast<double>(cfg.n_ms));
  return snd;
}

CPModel channel_factors(const PathParams& paths, const Sounding& snd, const SystemConfig& cfg) {
  paths.validate();
  if (snd.p.rows() != cfg.n_bs || snd.q.rows() != cfg.n_ms) {
    throw ArgumentError("sounding matrices do not match the array sizes");
  }
  const double spacing = cfg.element_spacing_wavelengths;
  CPModel m;
  m.a = snd.q.transpose() * steering_matrix(paths.theta, cfg.n_ms, spacing);
  m.b = snd.p.transpose() * steering_matrix(paths.phi, cfg.n_bs, spacing);
  m.c = delay_matrix(paths.tau, cfg) * paths.alpha.asDiagonal();
  return m;
}

ReceivedData synthesize(const PathParams& paths, const Sounding& snd, const SystemConfig& cfg,
                        double snr_db, std::mt19937_64& rng) {
  cfg.validate();
  ReceivedData out;
  out.y_clean = cp_reconstruct(channel_factors(paths, snd, cfg));
  const double signal = out.y_clean.squared_norm();
  if (signal == 0.0) throw NumericalError("synthesize: noiseless tensor is zero; SNR undefined");
  out.y = out.y_clean;
  if (std::isinf(snr_db) && snr_db > 0) {
    out.sigma2 = 0.0;
    return out;
  }
  const auto n = static_cast<double>(out.y.size());
  out.sigma2 = signal / (n * std::pow(10.0, snr_db / 10.0));
  for (Index i = 0; i < out.y.size(); ++i) out.y.data()[i] += complex_gaussian(rng, out.sigma2);
  return out;
}

double realized_snr(const ReceivedData& d) {
  const double noise = (d.y.data() - d.y_clean.data()).squaredNorm();
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(d.y_clean.squared_norm() / noise);
}

}  // namespace cpest
