#pragma once

// The denoising network: predicts the clean latent x0 from (x_t, cond, t).
// Input is the channelwise concatenation [x_t ; self_cond] projected to the
// model width, plus learned positions and a sinusoidal-then-MLP timestep
// embedding added to every position. Blocks interleave self-attention over
// the latent positions, cross-attention where the text side queries the
// condition slots, and a feed-forward sublayer. Classifier-free guidance
// combines conditional and unconditional estimates linearly.

#include "ladx/nn/optim.hpp"
#include "ladx/nn/transformer.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace ladx {

struct DiffuserConfig {
  int blocks = 6;
  int dim = 256;
  int heads = 4;
  int ffn = 1024;
  int latent_dim = 256;
  int l_max = 24;
  int cond_slots = 8;
  int max_timestep = 1000;

  void validate() const {
    if (blocks < 1) throw std::invalid_argument("DiffuserConfig: blocks must be >= 1");
    if (dim % heads != 0) throw std::invalid_argument("DiffuserConfig: dim % heads != 0");
  }
};

template <typename S>
struct TimeEmbed {
  nn::Linear<S> fc1, fc2;
  int dim = 0;

  struct Cache {
    MatT<S> sin, pre, act;
  };

  void init(int d, Rng& rng) {
    dim = d;
    fc1.init(d, d, rng);
    fc2.init(d, d, rng);
  }

  static MatT<S> sinusoid(const std::vector<int>& ts, int dim) {
    MatT<S> out(static_cast<Eigen::Index>(ts.size()), dim);
    const int half = dim / 2;
    for (std::size_t b = 0; b < ts.size(); ++b) {
      for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        out(Eigen::Index(b), 2 * i) = S(std::sin(double(ts[b]) * freq));
        out(Eigen::Index(b), 2 * i + 1) = S(std::cos(double(ts[b]) * freq));
      }
      if (dim % 2 != 0) out(Eigen::Index(b), dim - 1) = S(0);
    }
    return out;
  }

  // One embedding row per sample.
  MatT<S> forward(const std::vector<int>& ts, Cache* cache) const {
    MatT<S> sin = sinusoid(ts, dim);
    MatT<S> pre = fc1.forward(sin);
    MatT<S> act = nn::gelu(pre);
    MatT<S> y = fc2.forward(act);
    if (cache) {
      cache->sin = std::move(sin);
      cache->pre = std::move(pre);
      cache->act = std::move(act);
    }
    return y;
  }

  void backward(Cache& c, const MatT<S>& dy) {
    MatT<S> dact = fc2.backward(c.act, dy);
    MatT<S> dpre = nn::gelu_backward(c.pre, dact);
    fc1.backward(c.sin, dpre);  // sinusoid input is constant
  }

  void visit(const std::string& prefix, const nn::ParamVisitor<S>& fn) {
    fc1.visit(prefix + ".fc1", fn);
    fc2.visit(prefix + ".fc2", fn);
  }
};

template <typename S>
class Diffuser {
 public:
  DiffuserConfig cfg;

  nn::Linear<S> in_proj;    // 2 * latent_dim -> dim
  nn::Param<S> pos;         // l_max x dim
  nn::Linear<S> cond_proj;  // latent_dim -> dim
  nn::Param<S> cond_pos;    // cond_slots x dim; slot identity for cross-attn
  TimeEmbed<S> time_emb;
  std::vector<nn::TransformerBlock<S>> blocks;
  nn::LayerNorm<S> out_ln;
  nn::Linear<S> out_proj;   // dim -> latent_dim

  Diffuser() = default;
  Diffuser(const Diffuser&) = delete;
  Diffuser& operator=(const Diffuser&) = delete;

  void init(const DiffuserConfig& config, Rng& rng) {
    cfg = config;
    cfg.validate();
    Rng r = rng.fork("diffuser-init");
    in_proj.init(2 * cfg.latent_dim, cfg.dim, r);
    pos.init_gaussian(cfg.l_max, cfg.dim, r, 0.02);
    cond_proj.init(cfg.latent_dim, cfg.dim, r);
    cond_pos.init_gaussian(cfg.cond_slots, cfg.dim, r, 0.02);
    time_emb.init(cfg.dim, r);
    blocks.resize(std::size_t(cfg.blocks));
    for (auto& b : blocks) b.init(cfg.dim, cfg.heads, cfg.ffn, r, /*cross=*/true);
    out_ln.init(cfg.dim);
    // Zero-init output projection: the denoiser starts from x0-hat = 0.
    out_proj.init(cfg.dim, cfg.latent_dim, r, 0.02, /*zero_weights=*/true);
  }

  std::uint64_t forward_passes() const { return passes_.load(std::memory_order_relaxed); }

  struct Cache {
    int batch = 0;
    MatT<S> input;       // [x_t ; self_cond]
    MatT<S> cond_in;     // raw condition features
    MatT<S> cond_kv;     // projected + slot positions
    typename TimeEmbed<S>::Cache time;
    std::vector<typename nn::TransformerBlock<S>::Cache> blocks;
    typename nn::LayerNorm<S>::Cache out_ln;
    MatT<S> head_in;
  };

  // Batched forward. x_t and self_cond are (batch * l_max) x latent_dim,
  // cond is (batch * cond_slots) x latent_dim, ts has one timestep per
  // sample. Counts one forward pass per sample.
  MatT<S> denoise_batch(const MatT<S>& x_t, const MatT<S>& cond,
                        const std::vector<int>& ts, const MatT<S>& self_cond,
                        Cache* cache) const {
    const int batch = int(ts.size());
    check_shapes(x_t, cond, ts, self_cond, batch);

    MatT<S> input(x_t.rows(), 2 * cfg.latent_dim);
    input.leftCols(cfg.latent_dim) = x_t;
    input.rightCols(cfg.latent_dim) = self_cond;

    MatT<S> x = in_proj.forward(input);
    for (int b = 0; b < batch; ++b)
      x.middleRows(b * cfg.l_max, cfg.l_max) += pos.w;

    typename TimeEmbed<S>::Cache time_tmp;
    MatT<S> tvec = time_emb.forward(ts, cache ? &cache->time : &time_tmp);
    for (int b = 0; b < batch; ++b)
      x.middleRows(b * cfg.l_max, cfg.l_max).rowwise() += tvec.row(b);

    MatT<S> cond_kv = cond_proj.forward(cond);
    for (int b = 0; b < batch; ++b)
      cond_kv.middleRows(b * cfg.cond_slots, cfg.cond_slots) += cond_pos.w;

    if (cache) {
      cache->batch = batch;
      cache->input = std::move(input);
      cache->cond_in = cond;
      cache->blocks.resize(blocks.size());
    }
    for (std::size_t i = 0; i < blocks.size(); ++i)
      x = blocks[i].forward(x, cond_kv, batch, cache ? &cache->blocks[i] : nullptr);

    typename nn::LayerNorm<S>::Cache ln_tmp;
    x = out_ln.forward(x, cache ? &cache->out_ln : &ln_tmp);
    if (cache) {
      cache->cond_kv = std::move(cond_kv);
      cache->head_in = x;
    }
    passes_.fetch_add(std::uint64_t(batch), std::memory_order_relaxed);
    return out_proj.forward(x);
  }

  // Accumulates parameter gradients and the condition gradient; returns the
  // gradient w.r.t. x_t (the self_cond branch is treated as detached).
  MatT<S> backward(Cache& cache, const MatT<S>& dxhat, MatT<S>* dcond_out) {
    MatT<S> dx = out_proj.backward(cache.head_in, dxhat);
    dx = out_ln.backward(cache.out_ln, dx);

    MatT<S> dcond_kv = MatT<S>::Zero(cache.cond_kv.rows(), cache.cond_kv.cols());
    for (std::size_t i = blocks.size(); i-- > 0;)
      dx = blocks[i].backward(cache.blocks[i], dx, &dcond_kv);

    if (cond_pos.trainable)
      for (int b = 0; b < cache.batch; ++b)
        cond_pos.g += dcond_kv.middleRows(b * cfg.cond_slots, cfg.cond_slots);
    MatT<S> dcond = cond_proj.backward(cache.cond_in, dcond_kv);
    if (dcond_out) *dcond_out = std::move(dcond);

    MatT<S> dtvec(cache.batch, cfg.dim);
    for (int b = 0; b < cache.batch; ++b) {
      dtvec.row(b) = dx.middleRows(b * cfg.l_max, cfg.l_max).colwise().sum();
      if (pos.trainable) pos.g += dx.middleRows(b * cfg.l_max, cfg.l_max);
    }
    time_emb.backward(cache.time, dtvec);

    MatT<S> dinput = in_proj.backward(cache.input, dx);
    return dinput.leftCols(cfg.latent_dim);
  }

  // Single-sample denoise: x_t, self_cond are l_max x latent_dim, cond is
  // cond_slots x latent_dim.
  MatT<S> denoise(const MatT<S>& x_t, const MatT<S>& cond, int t,
                  const MatT<S>& self_cond) const {
    return denoise_batch(x_t, cond, {t}, self_cond, nullptr);
  }

  MatT<S> cfg_denoise(const MatT<S>& x_t, const MatT<S>& cond,
                      const MatT<S>& null_cond, int t, const MatT<S>& self_cond,
                      double w) const {
    if (!std::isfinite(w)) throw std::invalid_argument("cfg_denoise: w must be finite");
    if (w == 0.0) return denoise(x_t, cond, t, self_cond);
    MatT<S> fc = denoise(x_t, cond, t, self_cond);
    MatT<S> fu = denoise(x_t, null_cond, t, self_cond);
    return cfg_combine(fc, fu, w);
  }

  // x0-hat = (1 + w) * f(x_t, v, t) - w * f(x_t, null, t).
  static MatT<S> cfg_combine(const MatT<S>& cond_est, const MatT<S>& uncond_est, double w) {
    return S(1.0 + w) * cond_est - S(w) * uncond_est;
  }

  void visit(const nn::ParamVisitor<S>& fn) {
    in_proj.visit("diffuser.in_proj", fn);
    fn("diffuser.pos", pos);
    cond_proj.visit("diffuser.cond_proj", fn);
    fn("diffuser.cond_pos", cond_pos);
    time_emb.visit("diffuser.time_emb", fn);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].visit("diffuser.block" + std::to_string(i), fn);
    out_ln.visit("diffuser.out_ln", fn);
    out_proj.visit("diffuser.out_proj", fn);
  }

 private:
  void check_shapes(const MatT<S>& x_t, const MatT<S>& cond, const std::vector<int>& ts,
                    const MatT<S>& self_cond, int batch) const {
    if (batch < 1) throw std::invalid_argument("denoise: empty batch");
    if (x_t.rows() != Eigen::Index(batch) * cfg.l_max || x_t.cols() != cfg.latent_dim)
      throw std::invalid_argument("denoise: x_t shape mismatch");
    if (self_cond.rows() != x_t.rows() || self_cond.cols() != x_t.cols())
      throw std::invalid_argument("denoise: self_cond shape mismatch");
    if (cond.rows() != Eigen::Index(batch) * cfg.cond_slots || cond.cols() != cfg.latent_dim)
      throw std::invalid_argument("denoise: condition shape mismatch");
    for (int t : ts)
      if (t < 1 || t > cfg.max_timestep)
        throw std::out_of_range("denoise: t out of range [1, T]");
  }

  mutable std::atomic<std::uint64_t> passes_{0};
};

}  // namespace ladx
