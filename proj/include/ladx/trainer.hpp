#pragma once

// Training: the two-fold loss (latent MSE plus weighted caption
// cross-entropy through the decoder), stage-0 autoencoder pretraining, and
// the diffusion training loop with condition dropout and self-conditioning.
//
// All per-step randomness comes from a stream forked off the run seed by
// global step index, so training is deterministic and resumable from any
// step without serializing generator state.

#include "ladx/condition.hpp"
#include "ladx/diffuser.hpp"
#include "ladx/schedule.hpp"
#include "ladx/textlatent.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ladx {

struct TrainConfig {
  double lambda = 0.2;           // caption loss weight
  double cfg_drop_prob = 0.1;    // condition dropout for CFG
  double self_cond_prob = 0.5;
  double peak_lr = 5e-5;
  double warmup_ratio = 0.1;     // linear decay after the warmup fraction
  int batch_size = 32;
  int epochs = 24;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(cfg_drop_prob) || !prob(self_cond_prob) || !prob(warmup_ratio))
      throw std::invalid_argument("TrainConfig: probabilities must be in [0, 1]");
    if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
    if (batch_size < 1 || epochs < 0) throw std::invalid_argument("TrainConfig: bad sizes");
  }
};

struct Stage0Config {
  double lr = 3e-4;
  double warmup_ratio = 0.1;
  int batch_size = 32;
  int epochs = 8;
  double weight_decay = 0.0;
  int stats_sample = 2000;  // captions used to estimate latent moments
  int min_stats = 1000;
};

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0, latent = 0, caption = 0, lr = 0;
};

using MetricsFn = std::function<void(const StepMetrics&)>;

struct TrainItem {
  TokenSeq tokens;
  Scene scene;
};

inline std::vector<TrainItem> prepare_items(const std::vector<Example>& examples,
                                            const Vocabulary& vocab, int l_max) {
  std::vector<TrainItem> items;
  items.reserve(examples.size());
  for (const auto& e : examples)
    items.push_back({tokenize(e.caption, vocab, l_max), e.scene});
  return items;
}

// Mean squared error over all positions and dims.
template <typename S>
double latent_loss(const MatT<S>& xhat, const MatT<S>& x0) {
  if (xhat.rows() != x0.rows() || xhat.cols() != x0.cols())
    throw std::invalid_argument("latent_loss: shape mismatch");
  return (xhat - x0).template cast<double>().array().square().sum() /
         double(xhat.size());
}

template <typename S>
double latent_loss(const LatentSeqT<S>& xhat, const LatentSeqT<S>& x0) {
  return latent_loss(xhat.values, x0.values);
}

// Mean token NLL over every position (PAD targets included: restoring the
// PAD pattern is how the model learns caption length).
template <typename S>
double caption_loss(const TextStack<S>& text, const MatT<S>& xhat, const TokenSeq& tokens) {
  const MatT<S> logits = text.decode(xhat);
  return nn::softmax_xent<S>(logits, tokens.ids, nullptr);
}

namespace detail {

template <typename S>
struct FlatBatch {
  std::vector<const TokenSeq*> seqs;
  std::vector<int> targets;              // flattened ids
  std::vector<std::uint8_t> mask;        // flattened special mask
};

template <typename S>
FlatBatch<S> flatten(const std::vector<const TrainItem*>& batch) {
  FlatBatch<S> out;
  out.seqs.reserve(batch.size());
  for (const TrainItem* item : batch) {
    out.seqs.push_back(&item->tokens);
    out.targets.insert(out.targets.end(), item->tokens.ids.begin(), item->tokens.ids.end());
    const auto mask = special_mask_of(item->tokens);
    out.mask.insert(out.mask.end(), mask.begin(), mask.end());
  }
  return out;
}

}  // namespace detail

// Stage-0: trains the full text stack as a reconstruction autoencoder on
// decode(reassign(normalize(encode(c)))) vs c, then everything except the
// LM head is frozen for diffusion training. Latent statistics are
// re-estimated at each epoch start and the final epoch's statistics ship
// with the checkpoint.
template <typename S>
class Stage0Trainer {
 public:
  Stage0Trainer(TextStack<S>& text, Stage0Config cfg) : text_(text), cfg_(cfg) {
    text_.visit(registry_.collector());
    registry_.set_trainable(true);
    opt_ = nn::AdamW<S>(registry_, {0.9, 0.999, 1e-8, cfg_.weight_decay});
  }

  double train_step(const std::vector<const TrainItem*>& batch, const LatentStats& stats,
                    std::int64_t step, std::int64_t total_steps) {
    registry_.zero_grad();
    auto flat = detail::flatten<S>(batch);
    const int b_count = int(batch.size());

    typename TextStack<S>::EncodeCache ecache;
    MatT<S> latent = text_.encode_batch(flat.seqs, &ecache);
    normalize_rows(latent, stats);
    reassign_rows(latent, flat.mask);

    typename TextStack<S>::DecodeCache dcache;
    MatT<S> logits = text_.decode_batch(latent, b_count, &dcache);
    MatT<S> dlogits;
    const double loss = nn::softmax_xent<S>(logits, flat.targets, &dlogits);
    if (!std::isfinite(loss))
      throw std::runtime_error("stage0: non-finite loss at step " + std::to_string(step));

    MatT<S> dlatent = text_.decode_backward(dcache, dlogits);
    reassign_rows(dlatent, flat.mask);  // zero rows stay zero
    const VecT<S> denom = (stats.stdev.array() + stats.epsilon).cast<S>();
    dlatent = dlatent.array().rowwise() / denom.transpose().array();
    text_.encode_backward(ecache, dlatent);

    opt_.step(registry_, nn::warmup_linear_lr(step, total_steps, cfg_.lr, cfg_.warmup_ratio));
    return loss;
  }

  // Runs the full pretraining schedule; returns the statistics the decoder
  // was trained against in the final epoch.
  LatentStats run(const std::vector<TrainItem>& items, const Rng& root,
                  const MetricsFn& on_step = {}) {
    if (items.empty()) throw std::invalid_argument("stage0: empty corpus");
    const std::int64_t spe =
        std::int64_t((items.size() + std::size_t(cfg_.batch_size) - 1) / std::size_t(cfg_.batch_size));
    const std::int64_t total = spe * cfg_.epochs;

    std::vector<TokenSeq> stats_subset;
    const std::size_t n_stats = std::min(items.size(), std::size_t(cfg_.stats_sample));
    for (std::size_t i = 0; i < n_stats; ++i) stats_subset.push_back(items[i].tokens);

    LatentStats stats;
    std::int64_t gstep = 0;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      stats = estimate_stats(text_, stats_subset, 64, cfg_.min_stats);
      const auto order = permutation(items.size(), root.fork("stage0-shuffle", std::uint64_t(epoch)));
      for (std::size_t pos = 0; pos < items.size(); pos += std::size_t(cfg_.batch_size)) {
        std::vector<const TrainItem*> batch;
        for (std::size_t i = pos; i < std::min(items.size(), pos + std::size_t(cfg_.batch_size)); ++i)
          batch.push_back(&items[order[i]]);
        ++gstep;
        const double loss = train_step(batch, stats, gstep, total);
        if (on_step) on_step({gstep, loss, 0.0, loss, nn::warmup_linear_lr(gstep, total, cfg_.lr, cfg_.warmup_ratio)});
      }
    }
    if (cfg_.epochs == 0) stats = estimate_stats(text_, stats_subset, 64, cfg_.min_stats);
    return stats;
  }

  nn::ParamRegistry<S>& registry() { return registry_; }
  nn::AdamW<S>& optimizer() { return opt_; }

 private:
  TextStack<S>& text_;
  Stage0Config cfg_;
  nn::ParamRegistry<S> registry_;
  nn::AdamW<S> opt_;
};

// Diffusion training. Per sample: build x0 from the frozen encoder, draw a
// timestep and noise, denoise, and apply the two-fold loss. The encoder and
// decoder body stay frozen; gradients reach the diffuser, the condition
// encoder, and the LM head only.
template <typename S>
class DiffusionTrainer {
 public:
  DiffusionTrainer(TextStack<S>& text, CondEncoder<S>& cond, Diffuser<S>& diffuser,
                   const NoiseSchedule& sched, const LatentStats& stats, TrainConfig cfg)
      : text_(text), cond_(cond), diffuser_(diffuser), sched_(sched), stats_(stats), cfg_(cfg) {
    cfg_.validate();
    if (!stats_.valid()) throw std::invalid_argument("diffusion trainer: stats missing");
    text_.visit(registry_.collector());
    cond_.visit("cond", registry_.collector());
    diffuser_.visit(registry_.collector());
    registry_.set_trainable(false);
    registry_.set_trainable_prefix("diffuser.", true);
    registry_.set_trainable_prefix("cond.", true);
    registry_.set_trainable_prefix("text.lm_head", true);
    opt_ = nn::AdamW<S>(registry_, {0.9, 0.999, 1e-8, cfg_.weight_decay});
  }

  StepMetrics train_step(const std::vector<const TrainItem*>& batch, Rng step_rng,
                         std::int64_t step_index, std::int64_t total_steps) {
    registry_.zero_grad();
    const int b_count = int(batch.size());
    const int l = text_.cfg.l_max;
    const int d = text_.cfg.dim;
    const int slots = CondEncoder<S>::kSlots;
    auto flat = detail::flatten<S>(batch);

    MatT<S> x0 = text_.encode_batch(flat.seqs, nullptr);
    normalize_rows(x0, stats_);
    reassign_rows(x0, flat.mask);

    std::vector<int> ts(static_cast<std::size_t>(b_count));
    std::vector<std::uint8_t> dropped(static_cast<std::size_t>(b_count)), self_flag(static_cast<std::size_t>(b_count));
    MatT<S> x_t(b_count * l, d);
    MatT<S> cond_feat(b_count * slots, d);
    for (int b = 0; b < b_count; ++b) {
      ts[std::size_t(b)] = step_rng.uniform_int(1, sched_.total_steps);
      MatT<S> eps = step_rng.gaussian<S>(l, d);
      x_t.middleRows(b * l, l) =
          q_sample_values<S>(x0.middleRows(b * l, l), ts[std::size_t(b)], eps, sched_);
      dropped[std::size_t(b)] = step_rng.uniform() < cfg_.cfg_drop_prob ? 1 : 0;
      self_flag[std::size_t(b)] = step_rng.uniform() < cfg_.self_cond_prob ? 1 : 0;
      cond_feat.middleRows(b * slots, slots) =
          dropped[std::size_t(b)] ? cond_.null_condition() : cond_.encode(batch[std::size_t(b)]->scene);
    }

    // Self-conditioning: a gradient-isolated first estimate for the flagged
    // samples, fed back as the extra input channel.
    MatT<S> self_cond = MatT<S>::Zero(b_count * l, d);
    std::vector<int> sc_rows;
    for (int b = 0; b < b_count; ++b)
      if (self_flag[std::size_t(b)]) sc_rows.push_back(b);
    if (!sc_rows.empty()) {
      const int sb = int(sc_rows.size());
      MatT<S> sub_x(sb * l, d), sub_cond(sb * slots, d);
      MatT<S> sub_zero = MatT<S>::Zero(sb * l, d);
      std::vector<int> sub_t(static_cast<std::size_t>(sb));
      for (int i = 0; i < sb; ++i) {
        sub_x.middleRows(i * l, l) = x_t.middleRows(sc_rows[std::size_t(i)] * l, l);
        sub_cond.middleRows(i * slots, slots) =
            cond_feat.middleRows(sc_rows[std::size_t(i)] * slots, slots);
        sub_t[std::size_t(i)] = ts[std::size_t(sc_rows[std::size_t(i)])];
      }
      MatT<S> first = diffuser_.denoise_batch(sub_x, sub_cond, sub_t, sub_zero, nullptr);
      for (int i = 0; i < sb; ++i)
        self_cond.middleRows(sc_rows[std::size_t(i)] * l, l) = first.middleRows(i * l, l);
    }

    typename Diffuser<S>::Cache cache;
    MatT<S> xhat = diffuser_.denoise_batch(x_t, cond_feat, ts, self_cond, &cache);

    const double l_lat = latent_loss(xhat, x0);
    MatT<S> dxhat = (xhat - x0) * S(2.0 / double(xhat.size()));

    double l_cap = 0.0;
    if (cfg_.lambda > 0.0) {
      typename TextStack<S>::DecodeCache dcache;
      MatT<S> logits = text_.decode_batch(xhat, b_count, &dcache);
      MatT<S> dlogits;
      l_cap = nn::softmax_xent<S>(logits, flat.targets, &dlogits);
      dlogits *= S(cfg_.lambda);
      dxhat += text_.decode_backward(dcache, dlogits);
    }

    const double loss = l_lat + cfg_.lambda * l_cap;
    if (!std::isfinite(loss))
      throw std::runtime_error("train_step: non-finite loss at step " +
                               std::to_string(step_index) + " (latent=" + std::to_string(l_lat) +
                               ", caption=" + std::to_string(l_cap) + ")");

    MatT<S> dcond;
    diffuser_.backward(cache, dxhat, &dcond);
    for (int b = 0; b < b_count; ++b) {
      const auto block = dcond.middleRows(b * slots, slots);
      if (dropped[std::size_t(b)])
        cond_.backward_null(block);
      else
        cond_.backward(batch[std::size_t(b)]->scene, block);
    }

    const double lr =
        nn::warmup_linear_lr(step_index + 1, total_steps, cfg_.peak_lr, cfg_.warmup_ratio);
    opt_.step(registry_, lr);
    return {step_index, loss, l_lat, l_cap, lr};
  }

  // Runs `epochs` epochs of the plan, starting at start_step (0-based);
  // the LR schedule always spans total_plan_steps. Returns the next step.
  std::int64_t run(const std::vector<TrainItem>& items, const Rng& root, int epochs,
                   std::int64_t start_step, std::int64_t total_plan_steps,
                   const MetricsFn& on_step = {}) {
    if (items.empty()) throw std::invalid_argument("diffusion trainer: empty corpus");
    const std::int64_t spe = steps_per_epoch(items.size());
    const std::int64_t end_step =
        std::min(total_plan_steps, start_step + spe * std::int64_t(epochs));
    std::vector<std::size_t> order;
    std::int64_t order_epoch = -1;
    for (std::int64_t gstep = start_step; gstep < end_step; ++gstep) {
      const std::int64_t epoch = gstep / spe;
      const std::int64_t pos = gstep % spe;
      if (epoch != order_epoch) {
        order = permutation(items.size(), root.fork("diff-shuffle", std::uint64_t(epoch)));
        order_epoch = epoch;
      }
      std::vector<const TrainItem*> batch;
      const std::size_t begin = std::size_t(pos) * std::size_t(cfg_.batch_size);
      for (std::size_t i = begin;
           i < std::min(items.size(), begin + std::size_t(cfg_.batch_size)); ++i)
        batch.push_back(&items[order[i]]);
      const StepMetrics m =
          train_step(batch, root.fork("diff-step", std::uint64_t(gstep)), gstep, total_plan_steps);
      if (on_step) on_step(m);
    }
    return end_step;
  }

  std::int64_t steps_per_epoch(std::size_t n_items) const {
    return std::int64_t((n_items + std::size_t(cfg_.batch_size) - 1) /
                        std::size_t(cfg_.batch_size));
  }

  nn::ParamRegistry<S>& registry() { return registry_; }
  nn::AdamW<S>& optimizer() { return opt_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TextStack<S>& text_;
  CondEncoder<S>& cond_;
  Diffuser<S>& diffuser_;
  const NoiseSchedule& sched_;
  const LatentStats& stats_;
  TrainConfig cfg_;
  nn::ParamRegistry<S> registry_;
  nn::AdamW<S> opt_;
};

}  // namespace ladx
