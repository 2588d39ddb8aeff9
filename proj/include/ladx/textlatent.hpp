#pragma once

// The text latent space: a transformer stack split in half. The lower
// E layers (plus embeddings) form the encoder that defines the latent
// space; the upper layers plus the LM head form the NAR decoder that maps
// latents back to per-position vocabulary logits in one parallel pass.
//
// Parameter names partition into "text.encoder.*", "text.decoder.*" and
// "text.lm_head.*"; no parameter is shared between encoder and decoder.
// After stage-0 pretraining everything except the LM head is frozen.

#include "ladx/latent.hpp"
#include "ladx/nn/transformer.hpp"
#include "ladx/vocab.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace ladx {

struct TextConfig {
  int vocab = 36;
  int l_max = 24;
  int dim = 256;
  int layers = 4;      // total transformer layers
  int enc_layers = 2;  // encoder half depth (split point)
  int heads = 4;
  int ffn = 1024;

  void validate() const {
    if (l_max < 3) throw std::invalid_argument("TextConfig: l_max too small");
    if (enc_layers < 1 || enc_layers >= layers)
      throw std::invalid_argument("TextConfig: enc_layers must be in [1, layers)");
    if (dim % heads != 0) throw std::invalid_argument("TextConfig: dim % heads != 0");
  }
};

// Per-dimension latent moments, estimated over non-special positions of a
// corpus sample. Kept in double regardless of the model scalar.
struct LatentStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd stdev;
  double epsilon = 1e-5;
  std::int64_t sample_count = 0;

  bool valid() const { return sample_count > 0 && mean.size() > 0; }
};

template <typename S>
class TextStack {
 public:
  TextConfig cfg;

  nn::Embedding<S> tok_emb;
  nn::Param<S> enc_pos;  // l_max x dim
  nn::LayerNorm<S> emb_ln;
  std::vector<nn::TransformerBlock<S>> enc_blocks;
  nn::LayerNorm<S> enc_out_ln;

  nn::Param<S> dec_pos;  // l_max x dim; decoder-side positions so that
                         // zeroed special rows stay distinguishable
  std::vector<nn::TransformerBlock<S>> dec_blocks;
  nn::LayerNorm<S> dec_out_ln;
  nn::Linear<S> lm_head;

  void init(const TextConfig& config, Rng& rng) {
    cfg = config;
    cfg.validate();
    Rng r = rng.fork("text-init");
    tok_emb.init(cfg.vocab, cfg.dim, r);
    enc_pos.init_gaussian(cfg.l_max, cfg.dim, r, 0.02);
    emb_ln.init(cfg.dim);
    enc_blocks.resize(std::size_t(cfg.enc_layers));
    for (auto& b : enc_blocks) b.init(cfg.dim, cfg.heads, cfg.ffn, r, /*cross=*/false);
    enc_out_ln.init(cfg.dim);
    dec_pos.init_gaussian(cfg.l_max, cfg.dim, r, 0.02);
    dec_blocks.resize(std::size_t(cfg.layers - cfg.enc_layers));
    for (auto& b : dec_blocks) b.init(cfg.dim, cfg.heads, cfg.ffn, r, /*cross=*/false);
    dec_out_ln.init(cfg.dim);
    lm_head.init(cfg.dim, cfg.vocab, r);
  }

  struct EncodeCache {
    std::vector<int> flat_ids;
    int batch = 0;
    typename nn::LayerNorm<S>::Cache emb_ln;
    std::vector<typename nn::TransformerBlock<S>::Cache> blocks;
    typename nn::LayerNorm<S>::Cache out_ln;
  };

  struct DecodeCache {
    int batch = 0;
    std::vector<typename nn::TransformerBlock<S>::Cache> blocks;
    typename nn::LayerNorm<S>::Cache out_ln;
    MatT<S> head_in;
  };

  // Batched contextual encoding: returns (batch * l_max) x dim latents.
  MatT<S> encode_batch(const std::vector<const TokenSeq*>& batch, EncodeCache* cache) const {
    const int b_count = int(batch.size());
    std::vector<int> flat;
    flat.reserve(std::size_t(b_count) * std::size_t(cfg.l_max));
    for (const TokenSeq* seq : batch) {
      if (seq->length() != cfg.l_max)
        throw std::invalid_argument("encode: token sequence length != l_max");
      flat.insert(flat.end(), seq->ids.begin(), seq->ids.end());
    }
    MatT<S> x = tok_emb.forward(flat);
    for (int b = 0; b < b_count; ++b)
      x.middleRows(b * cfg.l_max, cfg.l_max) += enc_pos.w;

    typename nn::LayerNorm<S>::Cache tmp;
    x = emb_ln.forward(x, cache ? &cache->emb_ln : &tmp);
    if (cache) {
      cache->flat_ids = std::move(flat);
      cache->batch = b_count;
      cache->blocks.resize(enc_blocks.size());
    }
    const MatT<S> no_cond;
    for (std::size_t i = 0; i < enc_blocks.size(); ++i)
      x = enc_blocks[i].forward(x, no_cond, b_count, cache ? &cache->blocks[i] : nullptr);
    return enc_out_ln.forward(x, cache ? &cache->out_ln : &tmp);
  }

  void encode_backward(EncodeCache& cache, const MatT<S>& dlatent) {
    MatT<S> dx = enc_out_ln.backward(cache.out_ln, dlatent);
    for (std::size_t i = enc_blocks.size(); i-- > 0;)
      dx = enc_blocks[i].backward(cache.blocks[i], dx, nullptr);
    dx = emb_ln.backward(cache.emb_ln, dx);
    if (enc_pos.trainable)
      for (int b = 0; b < cache.batch; ++b)
        enc_pos.g += dx.middleRows(b * cfg.l_max, cfg.l_max);
    tok_emb.backward(cache.flat_ids, dx);
  }

  // NAR decode: per-position vocabulary logits in one parallel pass.
  MatT<S> decode_batch(const MatT<S>& latents, int batch, DecodeCache* cache) const {
    if (latents.cols() != cfg.dim || latents.rows() != Eigen::Index(batch) * cfg.l_max)
      throw std::invalid_argument("decode: latent shape mismatch");
    MatT<S> x = latents;
    for (int b = 0; b < batch; ++b)
      x.middleRows(b * cfg.l_max, cfg.l_max) += dec_pos.w;
    if (cache) {
      cache->batch = batch;
      cache->blocks.resize(dec_blocks.size());
    }
    const MatT<S> no_cond;
    typename nn::LayerNorm<S>::Cache tmp;
    for (std::size_t i = 0; i < dec_blocks.size(); ++i)
      x = dec_blocks[i].forward(x, no_cond, batch, cache ? &cache->blocks[i] : nullptr);
    x = dec_out_ln.forward(x, cache ? &cache->out_ln : &tmp);
    if (cache) cache->head_in = x;
    return lm_head.forward(x);
  }

  // Propagates dlogits back to the decoder input; parameter gradients land
  // only on trainable params (the LM head during diffusion training).
  MatT<S> decode_backward(DecodeCache& cache, const MatT<S>& dlogits) {
    MatT<S> dx = lm_head.backward(cache.head_in, dlogits);
    dx = dec_out_ln.backward(cache.out_ln, dx);
    for (std::size_t i = dec_blocks.size(); i-- > 0;)
      dx = dec_blocks[i].backward(cache.blocks[i], dx, nullptr);
    if (dec_pos.trainable)
      for (int b = 0; b < cache.batch; ++b)
        dec_pos.g += dx.middleRows(b * cfg.l_max, cfg.l_max);
    return dx;  // gradient w.r.t. the latent input
  }

  // Single-sequence conveniences.
  LatentSeqT<S> encode(const TokenSeq& seq) const {
    std::vector<const TokenSeq*> batch = {&seq};
    LatentSeqT<S> out;
    out.values = encode_batch(batch, nullptr);
    out.special_mask = special_mask_of(seq);
    return out;
  }

  MatT<S> decode(const MatT<S>& latent) const {
    return decode_batch(latent, 1, nullptr);
  }

  void visit(const nn::ParamVisitor<S>& fn) {
    tok_emb.visit("text.encoder.tok_emb", fn);
    fn("text.encoder.pos", enc_pos);
    emb_ln.visit("text.encoder.emb_ln", fn);
    for (std::size_t i = 0; i < enc_blocks.size(); ++i)
      enc_blocks[i].visit("text.encoder.block" + std::to_string(i), fn);
    enc_out_ln.visit("text.encoder.out_ln", fn);
    fn("text.decoder.pos", dec_pos);
    for (std::size_t i = 0; i < dec_blocks.size(); ++i)
      dec_blocks[i].visit("text.decoder.block" + std::to_string(i), fn);
    dec_out_ln.visit("text.decoder.out_ln", fn);
    lm_head.visit("text.lm_head", fn);
  }
};

// norm(x) = (x - mean) / (stdev + epsilon), elementwise per dimension.
template <typename S>
void normalize_rows(MatT<S>& rows, const LatentStats& st) {
  if (!st.valid()) throw std::invalid_argument("normalize: stats missing");
  if (rows.cols() != st.mean.size())
    throw std::invalid_argument("normalize: dimension mismatch");
  const VecT<S> mean = st.mean.cast<S>();
  const VecT<S> denom = (st.stdev.array() + st.epsilon).cast<S>();
  rows = (rows.rowwise() - mean.transpose()).array().rowwise() /
         denom.transpose().array();
}

template <typename S>
void denormalize_rows(MatT<S>& rows, const LatentStats& st) {
  if (!st.valid()) throw std::invalid_argument("denormalize: stats missing");
  const VecT<S> mean = st.mean.cast<S>();
  const VecT<S> denom = (st.stdev.array() + st.epsilon).cast<S>();
  rows = (rows.array().rowwise() * denom.transpose().array()).rowwise() +
         mean.transpose().array();
}

template <typename S>
LatentSeqT<S> normalize(const LatentSeqT<S>& x, const LatentStats& st) {
  LatentSeqT<S> out = x;
  normalize_rows(out.values, st);
  return out;
}

template <typename S>
LatentSeqT<S> denormalize(const LatentSeqT<S>& x, const LatentStats& st) {
  LatentSeqT<S> out = x;
  denormalize_rows(out.values, st);
  return out;
}

// Eq-style reassignment: special-token rows become exactly zero.
template <typename S>
void reassign_rows(MatT<S>& rows, const std::vector<std::uint8_t>& mask) {
  if (rows.rows() != Eigen::Index(mask.size()))
    throw std::invalid_argument("reassign: mask length mismatch");
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    if (mask[std::size_t(i)]) rows.row(i).setZero();
}

template <typename S>
LatentSeqT<S> reassign(const LatentSeqT<S>& x) {
  if (x.special_mask.size() != std::size_t(x.values.rows()))
    throw std::invalid_argument("reassign: special mask not populated");
  LatentSeqT<S> out = x;
  reassign_rows(out.values, out.special_mask);
  return out;
}

// Per-token autoencoder fidelity: argmax(decode(reassign(normalize(encode(c)))))
// against c, over all positions.
template <typename S>
double reconstruction_accuracy(const TextStack<S>& text, const LatentStats& stats,
                               const std::vector<TokenSeq>& seqs, int batch_size = 64) {
  std::int64_t hits = 0, total = 0;
  for (std::size_t start = 0; start < seqs.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(seqs.size(), start + std::size_t(batch_size));
    std::vector<const TokenSeq*> batch;
    std::vector<std::uint8_t> mask;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(&seqs[i]);
      const auto m = special_mask_of(seqs[i]);
      mask.insert(mask.end(), m.begin(), m.end());
    }
    MatT<S> latent = text.encode_batch(batch, nullptr);
    normalize_rows(latent, stats);
    reassign_rows(latent, mask);
    const MatT<S> logits = text.decode_batch(latent, int(batch.size()), nullptr);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (int p = 0; p < text.cfg.l_max; ++p) {
        Eigen::Index argmax = 0;
        logits.row(Eigen::Index(b) * text.cfg.l_max + p).maxCoeff(&argmax);
        hits += int(argmax) == batch[b]->ids[std::size_t(p)] ? 1 : 0;
        ++total;
      }
    }
  }
  return double(hits) / double(total);
}

// Per-dimension moments over non-special latent positions only.
template <typename S>
LatentStats estimate_stats(const TextStack<S>& text, const std::vector<TokenSeq>& sample,
                           int batch_size = 64, int min_samples = 1000) {
  if (int(sample.size()) < min_samples)
    throw std::invalid_argument("estimate_stats: need at least " +
                                std::to_string(min_samples) + " captions");
  const int d = text.cfg.dim;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(d);
  std::int64_t count = 0;
  for (std::size_t start = 0; start < sample.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(sample.size(), start + std::size_t(batch_size));
    std::vector<const TokenSeq*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&sample[i]);
    MatT<S> latents = text.encode_batch(batch, nullptr);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (int i = 0; i < text.cfg.l_max; ++i) {
        if (Vocabulary::is_special(batch[b]->ids[std::size_t(i)])) continue;
        const Eigen::VectorXd row =
            latents.row(Eigen::Index(b) * text.cfg.l_max + i).template cast<double>();
        sum += row;
        sq += row.cwiseProduct(row);
        ++count;
      }
    }
  }
  LatentStats st;
  st.mean = sum / double(count);
  st.stdev = (sq / double(count) - st.mean.cwiseProduct(st.mean)).cwiseMax(0.0).cwiseSqrt();
  st.sample_count = std::int64_t(sample.size());
  return st;
}

}  // namespace ladx
