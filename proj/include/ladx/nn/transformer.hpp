#pragma once

// Multi-head attention and the pre-LN transformer block used by the text
// stack, the diffuser, and the AR baseline. Sequences are batched as
// (batch * len) x dim matrices; row b*len + i is position i of sample b.
// Linear projections run as single large GEMMs over the whole batch; the
// per-sample attention loop writes disjoint row blocks so it can run under
// OpenMP without synchronization.

#include "ladx/nn/layers.hpp"

#include <limits>
#include <vector>

namespace ladx::nn {

template <typename S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;
  int heads = 1;
  bool causal = false;

  struct Cache {
    MatT<S> xq, xkv;            // layer inputs
    MatT<S> q, k, v;            // projections
    MatT<S> ctx;                // attention output before wo
    std::vector<MatT<S>> attn;  // batch*heads softmax matrices, lq x lk
    int batch = 0, lq = 0, lk = 0;
  };

  void init(int dim, int n_heads, Rng& rng, bool causal_mask = false,
            double std_dev = 0.02) {
    heads = n_heads;
    causal = causal_mask;
    if (dim % n_heads != 0)
      throw std::invalid_argument("attention: dim must be divisible by heads");
    wq.init(dim, dim, rng, std_dev);
    wk.init(dim, dim, rng, std_dev);
    wv.init(dim, dim, rng, std_dev);
    wo.init(dim, dim, rng, std_dev);
  }

  MatT<S> forward(const MatT<S>& xq, const MatT<S>& xkv, int batch, Cache* cache) const {
    const int lq = int(xq.rows()) / batch;
    const int lk = int(xkv.rows()) / batch;
    const int dim = int(xq.cols());
    const int hd = dim / heads;
    const S scale = S(1.0 / std::sqrt(double(hd)));

    MatT<S> q = wq.forward(xq);
    MatT<S> k = wk.forward(xkv);
    MatT<S> v = wv.forward(xkv);
    MatT<S> ctx(q.rows(), dim);
    std::vector<MatT<S>> attn(std::size_t(batch) * std::size_t(heads));

#pragma omp parallel for schedule(static)
    for (int bh = 0; bh < batch * heads; ++bh) {
      const int b = bh / heads, h = bh % heads;
      auto qb = q.block(b * lq, h * hd, lq, hd);
      auto kb = k.block(b * lk, h * hd, lk, hd);
      auto vb = v.block(b * lk, h * hd, lk, hd);
      MatT<S> scores = qb * kb.transpose() * scale;
      if (causal) {
        for (int i = 0; i < lq; ++i)
          for (int j = i + 1; j < lk; ++j)
            scores(i, j) = -std::numeric_limits<S>::infinity();
      }
      MatT<S> a = softmax_rows(std::move(scores));
      ctx.block(b * lq, h * hd, lq, hd).noalias() = a * vb;
      attn[std::size_t(bh)] = std::move(a);
    }

    MatT<S> y = wo.forward(ctx);
    if (cache) {
      cache->xq = xq;
      cache->xkv = xkv;
      cache->q = std::move(q);
      cache->k = std::move(k);
      cache->v = std::move(v);
      cache->ctx = std::move(ctx);
      cache->attn = std::move(attn);
      cache->batch = batch;
      cache->lq = lq;
      cache->lk = lk;
    }
    return y;
  }

  // Returns the query-input gradient; the key/value-input gradient is added
  // into dxkv (callers pass the same buffer twice for self-attention).
  MatT<S> backward(Cache& c, const MatT<S>& dy, MatT<S>& dxkv) {
    const int dim = int(c.q.cols());
    const int hd = dim / heads;
    const S scale = S(1.0 / std::sqrt(double(hd)));

    MatT<S> dctx = wo.backward(c.ctx, dy);
    MatT<S> dq = MatT<S>::Zero(c.q.rows(), dim);
    MatT<S> dk = MatT<S>::Zero(c.k.rows(), dim);
    MatT<S> dv = MatT<S>::Zero(c.v.rows(), dim);

#pragma omp parallel for schedule(static)
    for (int bh = 0; bh < c.batch * heads; ++bh) {
      const int b = bh / heads, h = bh % heads;
      const MatT<S>& a = c.attn[std::size_t(bh)];
      auto qb = c.q.block(b * c.lq, h * hd, c.lq, hd);
      auto kb = c.k.block(b * c.lk, h * hd, c.lk, hd);
      auto vb = c.v.block(b * c.lk, h * hd, c.lk, hd);
      auto dob = dctx.block(b * c.lq, h * hd, c.lq, hd);
      MatT<S> da = dob * vb.transpose();
      dv.block(b * c.lk, h * hd, c.lk, hd).noalias() = a.transpose() * dob;
      // softmax backward: ds = a .* (da - rowsum(da .* a))
      VecT<S> row_dot = (da.array() * a.array()).rowwise().sum();
      MatT<S> ds = a.array() * (da.array().colwise() - row_dot.array());
      dq.block(b * c.lq, h * hd, c.lq, hd).noalias() = ds * kb * scale;
      dk.block(b * c.lk, h * hd, c.lk, hd).noalias() = ds.transpose() * qb * scale;
    }

    MatT<S> dxq = wq.backward(c.xq, dq);
    dxkv.noalias() += wk.backward(c.xkv, dk);
    dxkv.noalias() += wv.backward(c.xkv, dv);
    return dxq;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    wq.visit(prefix + ".wq", fn);
    wk.visit(prefix + ".wk", fn);
    wv.visit(prefix + ".wv", fn);
    wo.visit(prefix + ".wo", fn);
  }
};

// Pre-LN block: self-attention, optional cross-attention against a
// conditioning sequence, then a feed-forward sublayer.
template <typename S>
struct TransformerBlock {
  LayerNorm<S> ln1;
  MultiHeadAttention<S> self_attn;
  bool with_cross = false;
  LayerNorm<S> ln_cross;
  MultiHeadAttention<S> cross_attn;
  LayerNorm<S> ln2;
  Ffn<S> ffn;

  struct Cache {
    typename LayerNorm<S>::Cache ln1;
    typename MultiHeadAttention<S>::Cache self;
    typename LayerNorm<S>::Cache lnx;
    typename MultiHeadAttention<S>::Cache cross;
    typename LayerNorm<S>::Cache ln2;
    typename Ffn<S>::Cache ffn;
  };

  void init(int dim, int n_heads, int ffn_dim, Rng& rng, bool cross,
            bool causal_self = false, double std_dev = 0.02) {
    with_cross = cross;
    ln1.init(dim);
    self_attn.init(dim, n_heads, rng, causal_self, std_dev);
    if (with_cross) {
      ln_cross.init(dim);
      cross_attn.init(dim, n_heads, rng, false, std_dev);
    }
    ln2.init(dim);
    ffn.init(dim, ffn_dim, rng, std_dev);
  }

  // cond is (batch * m) x dim; ignored unless the block has cross-attention.
  MatT<S> forward(const MatT<S>& x, const MatT<S>& cond, int batch, Cache* cache) const {
    typename LayerNorm<S>::Cache ln1_tmp;
    MatT<S> h = ln1.forward(x, cache ? &cache->ln1 : &ln1_tmp);
    MatT<S> y = x + self_attn.forward(h, h, batch, cache ? &cache->self : nullptr);
    if (with_cross) {
      typename LayerNorm<S>::Cache lnx_tmp;
      MatT<S> hq = ln_cross.forward(y, cache ? &cache->lnx : &lnx_tmp);
      y += cross_attn.forward(hq, cond, batch, cache ? &cache->cross : nullptr);
    }
    typename LayerNorm<S>::Cache ln2_tmp;
    MatT<S> hf = ln2.forward(y, cache ? &cache->ln2 : &ln2_tmp);
    y += ffn.forward(hf, cache ? &cache->ffn : nullptr);
    return y;
  }

  // dcond accumulates the conditioning gradient for cross blocks.
  MatT<S> backward(Cache& c, const MatT<S>& dy, MatT<S>* dcond) {
    MatT<S> dh = ffn.backward(c.ffn, dy);
    MatT<S> dx = dy + ln2.backward(c.ln2, dh);
    if (with_cross) {
      MatT<S> dq = cross_attn.backward(c.cross, dx, *dcond);
      dx += ln_cross.backward(c.lnx, dq);
    }
    MatT<S> dkv = MatT<S>::Zero(dx.rows(), dx.cols());
    MatT<S> dq_self = self_attn.backward(c.self, dx, dkv);
    dx += ln1.backward(c.ln1, dq_self + dkv);
    return dx;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    ln1.visit(prefix + ".ln1", fn);
    self_attn.visit(prefix + ".self", fn);
    if (with_cross) {
      ln_cross.visit(prefix + ".lnx", fn);
      cross_attn.visit(prefix + ".cross", fn);
    }
    ln2.visit(prefix + ".ln2", fn);
    ffn.visit(prefix + ".ffn", fn);
  }
};

}  // namespace ladx::nn
