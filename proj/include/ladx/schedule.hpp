#pragma once

// Variance schedule and the closed-form forward diffusion process.
//
// alpha_bars is indexed 0..T with alpha_bars[0] == 1 exactly, so t = 0 means
// "clean latent". betas/alphas are stored for t = 1..T. The product
// invariant alpha_bars[t] == alpha_bars[t-1] * alphas[t] holds exactly
// because alpha_bars is recomputed from the clipped betas.

#include "ladx/common.hpp"
#include "ladx/latent.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ladx {

enum class ScheduleKind { cosine, linear };

inline const char* to_string(ScheduleKind k) {
  return k == ScheduleKind::cosine ? "cosine" : "linear";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "linear") return ScheduleKind::linear;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

inline constexpr double kBetaMin = 1e-4;
inline constexpr double kBetaMax = 0.999;

struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::cosine;
  int total_steps = 0;                // T
  double cosine_offset = 0.008;       // s
  double noise_factor = 1.0;          // F, multiplies the noise term only
  std::vector<double> betas;          // betas[t-1], t in 1..T
  std::vector<double> alphas;         // alphas[t-1] = 1 - betas[t-1]
  std::vector<double> alpha_bars;     // alpha_bars[t], t in 0..T; [0] == 1

  double beta(int t) const { check_t(t); return betas[std::size_t(t) - 1]; }
  double alpha(int t) const { check_t(t); return alphas[std::size_t(t) - 1]; }
  double alpha_bar(int t) const {
    if (t < 0 || t > total_steps)
      throw std::out_of_range("alpha_bar: t out of range [0, T]");
    return alpha_bars[std::size_t(t)];
  }

 private:
  void check_t(int t) const {
    if (t < 1 || t > total_steps)
      throw std::out_of_range("schedule: t out of range [1, T]");
  }
};

inline NoiseSchedule make_schedule(ScheduleKind kind, int total_steps,
                                   double s = 0.008, double noise_factor = 1.0) {
  if (total_steps < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!std::isfinite(s) || s <= 0.0)
    throw std::invalid_argument("make_schedule: cosine offset must be finite and > 0");
  if (!std::isfinite(noise_factor) || noise_factor <= 0.0)
    throw std::invalid_argument("make_schedule: noise factor must be finite and > 0");

  NoiseSchedule sched;
  sched.kind = kind;
  sched.total_steps = total_steps;
  sched.cosine_offset = s;
  sched.noise_factor = noise_factor;
  sched.betas.resize(std::size_t(total_steps));
  sched.alphas.resize(std::size_t(total_steps));
  sched.alpha_bars.resize(std::size_t(total_steps) + 1);
  sched.alpha_bars[0] = 1.0;

  const double T = double(total_steps);
  if (kind == ScheduleKind::cosine) {
    // alpha_bar(t) = g(t)/g(0), g(t) = cos^2(((t/T + s)/(1+s)) * pi/2),
    // then betas are clipped and alpha_bars recomputed from them.
    auto g = [&](double t) {
      const double c = std::cos((t / T + s) / (1.0 + s) * M_PI / 2.0);
      return c * c;
    };
    const double g0 = g(0.0);
    double prev_raw = 1.0;
    for (int t = 1; t <= total_steps; ++t) {
      const double raw = g(double(t)) / g0;
      double beta = 1.0 - raw / prev_raw;
      beta = std::min(std::max(beta, kBetaMin), kBetaMax);
      sched.betas[std::size_t(t) - 1] = beta;
      prev_raw = raw;
    }
  } else {
    const double lo = 1e-4, hi = 0.02;  // linear-schedule convention
    for (int t = 1; t <= total_steps; ++t) {
      const double frac = total_steps > 1 ? double(t - 1) / double(total_steps - 1) : 0.0;
      sched.betas[std::size_t(t) - 1] = lo + frac * (hi - lo);
    }
  }

  for (int t = 1; t <= total_steps; ++t) {
    sched.alphas[std::size_t(t) - 1] = 1.0 - sched.betas[std::size_t(t) - 1];
    sched.alpha_bars[std::size_t(t)] =
        sched.alpha_bars[std::size_t(t) - 1] * sched.alphas[std::size_t(t) - 1];
  }
  return sched;
}

// Forward process q(x_t | x0): sqrt(abar_t) * x0 + F * sqrt(1 - abar_t) * eps.
template <typename S>
MatT<S> q_sample_values(const MatT<S>& x0, int t, const MatT<S>& eps,
                        const NoiseSchedule& sched) {
  if (t < 1 || t > sched.total_steps)
    throw std::out_of_range("q_sample: t out of range [1, T]");
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw std::invalid_argument("q_sample: shape mismatch between x0 and eps");
  const double abar = sched.alpha_bar(t);
  const S signal = S(std::sqrt(abar));
  const S noise = S(sched.noise_factor * std::sqrt(1.0 - abar));
  return signal * x0 + noise * eps;
}

template <typename S>
LatentSeqT<S> q_sample(const LatentSeqT<S>& x0, int t, const LatentSeqT<S>& eps,
                       const NoiseSchedule& sched) {
  LatentSeqT<S> out;
  out.values = q_sample_values<S>(x0.values, t, eps.values, sched);
  out.special_mask = x0.special_mask;  // carried through unchanged
  return out;
}

}  // namespace ladx
