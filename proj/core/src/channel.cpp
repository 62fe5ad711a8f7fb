#include "cpest/channel.hpp"

#include <cmath>
#include <string>

namespace cpest {

namespace {

constexpr int kMaxRedraws = 10000;

}  // namespace

void SystemConfig::validate() const {
  if (n_bs < 1 || n_ms < 1 || k_total < 1 || k_train < 1) {
    throw ArgumentError("system config: antenna and subcarrier counts must be >= 1");
  }
  if (k_train > k_total) throw ArgumentError("system config: k_train exceeds k_total");
  if (!(f_s > 0.0) || !(f_c > 0.0)) throw ArgumentError("system config: f_s and f_c must be > 0");
  if (!(distance_m > 0.0)) throw ArgumentError("system config: distance must be > 0");
  if (!(element_spacing_wavelengths > 0.0)) {
    throw ArgumentError("system config: element spacing must be > 0");
  }
}

void PathParams::validate() const {
  if (theta.size() < 1) throw ArgumentError("path params: need at least one path");
  if (phi.size() != theta.size() || tau.size() != theta.size() ||
      alpha.size() != theta.size()) {
    throw ArgumentError("path params: theta/phi/tau/alpha lengths differ");
  }
}

PathParams PathParams::zeros(Index paths) {
  return {RVector::Zero(paths), RVector::Zero(paths), RVector::Zero(paths),
          CVector::Zero(paths)};
}

CVector steering_vector_sine(double u, Index n, double spacing) {
  CVector v(n);
  const double step = 2.0 * kPi * spacing * u;
  for (Index m = 0; m < n; ++m) v[m] = std::polar(1.0, step * static_cast<double>(m));
  return v;
}

CVector steering_vector(double angle, Index n, double spacing) {
  return steering_vector_sine(std::sin(angle), n, spacing);
}

CMatrix steering_matrix(const RVector& angles, Index n, double spacing) {
  CMatrix out(n, angles.size());
  for (Index l = 0; l < angles.size(); ++l) out.col(l) = steering_vector(angles[l], n, spacing);
  return out;
}

CVector delay_signature(double tau, const SystemConfig& cfg) {
  CVector g(cfg.k_train);
  const double step = -2.0 * kPi * tau * cfg.f_s / static_cast<double>(cfg.k_total);
  for (Index k = 1; k <= cfg.k_train; ++k) g[k - 1] = std::polar(1.0, step * static_cast<double>(k));
  return g;
}

CMatrix delay_matrix(const RVector& taus, const SystemConfig& cfg) {
  CMatrix out(cfg.k_train, taus.size());
  for (Index l = 0; l < taus.size(); ++l) out.col(l) = delay_signature(taus[l], cfg);
  return out;
}

CMatrix channel_matrix(const PathParams& paths, Index k, const SystemConfig& cfg) {
  paths.validate();
  if (k < 1 || k > cfg.k_total) {
    throw ArgumentError("channel_matrix: subcarrier " + std::to_string(k) + " outside 1.." +
                        std::to_string(cfg.k_total));
  }
  const double spacing = cfg.element_spacing_wavelengths;
  CMatrix h = CMatrix::Zero(cfg.n_ms, cfg.n_bs);
  for (Index l = 0; l < paths.size(); ++l) {
    const cplx w = paths.alpha[l] * std::polar(1.0, -2.0 * kPi * paths.tau[l] * cfg.f_s *
                                                       static_cast<double>(k) /
                                                       static_cast<double>(cfg.k_total));
    h.noalias() += w * steering_vector(paths.theta[l], cfg.n_ms, spacing) *
                   steering_vector(paths.phi[l], cfg.n_bs, spacing).transpose();
  }
  return h;
}

double path_loss(const SystemConfig& cfg) {
  const double r = 4.0 * kPi * cfg.distance_m * cfg.f_c / kSpeedOfLight;
  return r * r;
}

bool satisfies_separation(const PathParams& paths, double tau_max, const SeparationRule& rule) {
  for (Index i = 0; i < paths.size(); ++i) {
    for (Index j = i + 1; j < paths.size(); ++j) {
      if (std::abs(std::sin(paths.theta[i]) - std::sin(paths.theta[j])) < rule.min_sin_gap ||
          std::abs(std::sin(paths.phi[i]) - std::sin(paths.phi[j])) < rule.min_sin_gap ||
          std::abs(paths.tau[i] - paths.tau[j]) < tau_max * rule.min_delay_fraction) {
        return false;
      }
    }
  }
  return true;
}

cplx complex_gaussian(std::mt19937_64& rng, double variance) {
  std::normal_distribution<double> normal(0.0, std::sqrt(variance / 2.0));
  const double re = normal(rng);
  const double im = normal(rng);
  return {re, im};
}

PathParams sample_channel(std::mt19937_64& rng, const SystemConfig& cfg, Index paths,
                          double tau_max, const SeparationRule& rule) {
  cfg.validate();
  if (paths < 1) throw ArgumentError("sample_channel: need at least one path");
  if (!(tau_max > 0.0)) throw ArgumentError("sample_channel: tau_max must be > 0");

  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  std::uniform_real_distribution<double> delay(0.0, tau_max);
  const double gain_variance = 1.0 / path_loss(cfg);

  PathParams out = PathParams::zeros(paths);
  for (Index l = 0; l < paths; ++l) {
    int attempts = 0;
    while (true) {
      out.theta[l] = angle(rng);
      out.phi[l] = angle(rng);
      out.tau[l] = delay(rng);
      out.alpha[l] = complex_gaussian(rng, gain_variance);
      bool separated = true;
      for (Index j = 0; j < l && separated; ++j) {
        separated =
            std::abs(std::sin(out.theta[l]) - std::sin(out.theta[j])) >= rule.min_sin_gap &&
            std::abs(std::sin(out.phi[l]) - std::sin(out.phi[j])) >= rule.min_sin_gap &&
            std::abs(out.tau[l] - out.tau[j]) >= tau_max * rule.min_delay_fraction;
      }
      if (separated) break;
      if (++attempts >= kMaxRedraws) {
        throw ConfigError("sample_channel: cannot place " + std::to_string(paths) +
                          " paths with the configured minimum separations");
      }
    }
  }
  return out;
}

}  // namespace cpest
