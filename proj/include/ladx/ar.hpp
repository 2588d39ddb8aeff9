#pragma once

// Autoregressive baseline: a parameter-matched left-to-right transformer
// decoder with cross-attention over the same condition features, trained
// with teacher forcing and decoded greedily. Emitting an n-token caption
// (including [SEP]) costs exactly n counted forward passes.

#include "ladx/condition.hpp"
#include "ladx/nn/optim.hpp"
#include "ladx/nn/transformer.hpp"
#include "ladx/trainer.hpp"
#include "ladx/vocab.hpp"

#include <atomic>
#include <chrono>
#include <string>
#include <vector>

namespace ladx {

struct ArConfig {
  int blocks = 6;
  int dim = 256;
  int heads = 4;
  int ffn = 1024;
  int l_max = 24;
  int vocab = 36;
  double lr = 3e-4;
  double warmup_ratio = 0.1;
  int batch_size = 32;
  int epochs = 10;
  double weight_decay = 0.0;
};

template <typename S>
class ArModel {
 public:
  ArConfig cfg;
  nn::Embedding<S> tok_emb;
  nn::Param<S> pos;  // l_max x dim
  CondEncoder<S> cond_enc;
  nn::Linear<S> cond_proj;
  nn::Param<S> cond_pos;
  std::vector<nn::TransformerBlock<S>> blocks;
  nn::LayerNorm<S> out_ln;
  nn::Linear<S> lm_head;

  ArModel() = default;
  ArModel(const ArModel&) = delete;
  ArModel& operator=(const ArModel&) = delete;

  void init(const ArConfig& config, Rng& rng) {
    cfg = config;
    Rng r = rng.fork("ar-init");
    tok_emb.init(cfg.vocab, cfg.dim, r);
    pos.init_gaussian(cfg.l_max, cfg.dim, r, 0.02);
    cond_enc.init(cfg.dim, r);
    cond_proj.init(cfg.dim, cfg.dim, r);
    cond_pos.init_gaussian(CondEncoder<S>::kSlots, cfg.dim, r, 0.02);
    blocks.resize(std::size_t(cfg.blocks));
    for (auto& b : blocks)
      b.init(cfg.dim, cfg.heads, cfg.ffn, r, /*cross=*/true, /*causal_self=*/true);
    out_ln.init(cfg.dim);
    lm_head.init(cfg.dim, cfg.vocab, r);
  }

  std::uint64_t forward_passes() const { return passes_.load(std::memory_order_relaxed); }

  struct Cache {
    int batch = 0, len = 0;
    std::vector<int> flat_ids;
    MatT<S> cond_in, cond_kv;
    std::vector<typename nn::TransformerBlock<S>::Cache> blocks;
    typename nn::LayerNorm<S>::Cache out_ln;
    MatT<S> head_in;
  };

  // Causal logits for rows of token ids (one pass over a prefix of length
  // `len` per sample). Counts one forward pass per sample.
  MatT<S> forward(const std::vector<int>& flat_ids, int batch, int len,
                  const std::vector<const Scene*>& scenes, Cache* cache) const {
    const int slots = CondEncoder<S>::kSlots;
    MatT<S> x = tok_emb.forward(flat_ids);
    for (int b = 0; b < batch; ++b)
      x.middleRows(b * len, len) += pos.w.topRows(len);

    MatT<S> cond_in(batch * slots, cfg.dim);
    for (int b = 0; b < batch; ++b)
      cond_in.middleRows(b * slots, slots) = cond_enc.encode(*scenes[std::size_t(b)]);
    MatT<S> cond_kv = cond_proj.forward(cond_in);
    for (int b = 0; b < batch; ++b)
      cond_kv.middleRows(b * slots, slots) += cond_pos.w;

    if (cache) {
      cache->batch = batch;
      cache->len = len;
      cache->flat_ids = flat_ids;
      cache->cond_in = cond_in;
      cache->blocks.resize(blocks.size());
    }
    for (std::size_t i = 0; i < blocks.size(); ++i)
      x = blocks[i].forward(x, cond_kv, batch, cache ? &cache->blocks[i] : nullptr);
    typename nn::LayerNorm<S>::Cache tmp;
    x = out_ln.forward(x, cache ? &cache->out_ln : &tmp);
    if (cache) {
      cache->cond_kv = std::move(cond_kv);
      cache->head_in = x;
    }
    passes_.fetch_add(std::uint64_t(batch), std::memory_order_relaxed);
    return lm_head.forward(x);
  }

  void backward(Cache& cache, const MatT<S>& dlogits,
                const std::vector<const Scene*>& scenes) {
    MatT<S> dx = lm_head.backward(cache.head_in, dlogits);
    dx = out_ln.backward(cache.out_ln, dx);
    MatT<S> dcond_kv = MatT<S>::Zero(cache.cond_kv.rows(), cache.cond_kv.cols());
    for (std::size_t i = blocks.size(); i-- > 0;)
      dx = blocks[i].backward(cache.blocks[i], dx, &dcond_kv);
    const int slots = CondEncoder<S>::kSlots;
    for (int b = 0; b < cache.batch; ++b)
      if (cond_pos.trainable) cond_pos.g += dcond_kv.middleRows(b * slots, slots);
    MatT<S> dcond_in = cond_proj.backward(cache.cond_in, dcond_kv);
    for (int b = 0; b < cache.batch; ++b)
      cond_enc.backward(*scenes[std::size_t(b)], dcond_in.middleRows(b * slots, slots));
    for (int b = 0; b < cache.batch; ++b)
      if (pos.trainable) pos.g += dx.middleRows(b * cache.len, cache.len).topRows(cache.len);
    tok_emb.backward(cache.flat_ids, dx);
  }

  struct GenResult {
    TokenSeq tokens;
    std::string caption;
    int emitted = 0;          // tokens emitted, [SEP] included
    std::uint64_t passes = 0;
    double wall_ms = 0.0;
  };

  // Greedy decoding: one counted forward pass per emitted token.
  GenResult greedy(const Scene& scene, const Vocabulary& vocab) const {
    const auto t0 = std::chrono::steady_clock::now();
    GenResult res;
    std::vector<int> prefix = {Vocabulary::kCls};
    const std::vector<const Scene*> scenes = {&scene};
    while (int(prefix.size()) < cfg.l_max) {
      const MatT<S> logits = forward(prefix, 1, int(prefix.size()), scenes, nullptr);
      Eigen::Index next = 0;
      logits.row(logits.rows() - 1).maxCoeff(&next);
      prefix.push_back(int(next));
      ++res.passes;
      ++res.emitted;
      if (int(next) == Vocabulary::kSep) break;
    }
    res.tokens.ids = prefix;
    res.tokens.ids.resize(std::size_t(cfg.l_max), Vocabulary::kPad);
    res.caption = strip_specials(res.tokens, vocab);
    res.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    return res;
  }

  void visit(const nn::ParamVisitor<S>& fn) {
    tok_emb.visit("ar.tok_emb", fn);
    fn("ar.pos", pos);
    cond_enc.visit("ar.cond", fn);
    cond_proj.visit("ar.cond_proj", fn);
    fn("ar.cond_pos", cond_pos);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].visit("ar.block" + std::to_string(i), fn);
    out_ln.visit("ar.out_ln", fn);
    lm_head.visit("ar.lm_head", fn);
  }

 private:
  mutable std::atomic<std::uint64_t> passes_{0};
};

template <typename S>
class ArTrainer {
 public:
  ArTrainer(ArModel<S>& model) : model_(model) {
    model_.visit(registry_.collector());
    registry_.set_trainable(true);
    opt_ = nn::AdamW<S>(registry_, {0.9, 0.999, 1e-8, model_.cfg.weight_decay});
  }

  // Teacher forcing: positions 0..L-2 predict positions 1..L-1; PAD targets
  // included so the model learns to stop.
  double train_step(const std::vector<const TrainItem*>& batch, std::int64_t step,
                    std::int64_t total_steps) {
    registry_.zero_grad();
    const int b_count = int(batch.size());
    const int len = model_.cfg.l_max - 1;
    std::vector<int> inputs;
    std::vector<int> targets;
    std::vector<const Scene*> scenes;
    for (const TrainItem* item : batch) {
      inputs.insert(inputs.end(), item->tokens.ids.begin(), item->tokens.ids.end() - 1);
      targets.insert(targets.end(), item->tokens.ids.begin() + 1, item->tokens.ids.end());
      scenes.push_back(&item->scene);
    }
    typename ArModel<S>::Cache cache;
    MatT<S> logits = model_.forward(inputs, b_count, len, scenes, &cache);
    MatT<S> dlogits;
    const double loss = nn::softmax_xent<S>(logits, targets, &dlogits);
    if (!std::isfinite(loss))
      throw std::runtime_error("ar: non-finite loss at step " + std::to_string(step));
    model_.backward(cache, dlogits, scenes);
    opt_.step(registry_,
              nn::warmup_linear_lr(step, total_steps, model_.cfg.lr, model_.cfg.warmup_ratio));
    return loss;
  }

  void run(const std::vector<TrainItem>& items, const Rng& root, const MetricsFn& on_step = {}) {
    const int bs = model_.cfg.batch_size;
    const std::int64_t spe = std::int64_t((items.size() + std::size_t(bs) - 1) / std::size_t(bs));
    const std::int64_t total = spe * model_.cfg.epochs;
    std::int64_t gstep = 0;
    for (int epoch = 0; epoch < model_.cfg.epochs; ++epoch) {
      const auto order = permutation(items.size(), root.fork("ar-shuffle", std::uint64_t(epoch)));
      for (std::size_t pos = 0; pos < items.size(); pos += std::size_t(bs)) {
        std::vector<const TrainItem*> batch;
        for (std::size_t i = pos; i < std::min(items.size(), pos + std::size_t(bs)); ++i)
          batch.push_back(&items[order[i]]);
        ++gstep;
        const double loss = train_step(batch, gstep, total);
        if (on_step) on_step({gstep, loss, 0.0, loss,
                              nn::warmup_linear_lr(gstep, total, model_.cfg.lr,
                                                   model_.cfg.warmup_ratio)});
      }
    }
  }

  nn::ParamRegistry<S>& registry() { return registry_; }

 private:
  ArModel<S>& model_;
  nn::ParamRegistry<S> registry_;
  nn::AdamW<S> opt_;
};

}  // namespace ladx
