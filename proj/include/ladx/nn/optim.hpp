#pragma once

// AdamW with decoupled weight decay, plus the warmup/linear-decay learning
// rate schedule. Moment buffers line up with the registry order and are
// checkpointed by parameter name.

#include "ladx/nn/param.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace ladx::nn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename S>
class AdamW {
 public:
  AdamW() = default;

  AdamW(const ParamRegistry<S>& registry, AdamWConfig cfg) : cfg_(cfg) {
    m_.reserve(registry.size());
    v_.reserve(registry.size());
    for (const auto& it : registry.items()) {
      m_.push_back(MatT<S>::Zero(it.param->w.rows(), it.param->w.cols()));
      v_.push_back(MatT<S>::Zero(it.param->w.rows(), it.param->w.cols()));
    }
  }

  void step(const ParamRegistry<S>& registry, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const S b1 = S(cfg_.beta1), b2 = S(cfg_.beta2);
    const auto& items = registry.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      Param<S>& p = *items[i].param;
      if (!p.trainable) continue;
      m_[i] = b1 * m_[i] + (S(1) - b1) * p.g;
      v_[i] = b2 * v_[i] + (S(1) - b2) * p.g.cwiseProduct(p.g);
      auto mhat = (m_[i].array() / S(bc1));
      auto vhat = (v_[i].array() / S(bc2));
      p.w.array() -= S(lr) * (mhat / (vhat.sqrt() + S(cfg_.eps)) +
                              S(cfg_.weight_decay) * p.w.array());
    }
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  const AdamWConfig& config() const { return cfg_; }

  MatT<S>& moment1(std::size_t i) { return m_[i]; }
  MatT<S>& moment2(std::size_t i) { return v_[i]; }
  std::size_t size() const { return m_.size(); }

 private:
  AdamWConfig cfg_;
  std::vector<MatT<S>> m_, v_;
  std::int64_t t_ = 0;
};

// Piecewise-linear schedule: 0 -> peak over the warmup fraction, then
// peak -> 0 over the remainder. step is 1-based.
inline double warmup_linear_lr(std::int64_t step, std::int64_t total_steps,
                               double peak, double warmup_ratio) {
  if (total_steps <= 0) return peak;
  const std::int64_t warmup =
      std::max<std::int64_t>(1, std::llround(warmup_ratio * double(total_steps)));
  if (step <= warmup) return peak * double(step) / double(warmup);
  if (total_steps == warmup) return peak;
  const double frac = double(total_steps - step) / double(total_steps - warmup);
  return peak * std::max(0.0, frac);
}

}  // namespace ladx::nn
