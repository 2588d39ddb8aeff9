#pragma once

// Inference: the DDIM denoising loop with classifier-free guidance and
// self-conditioning, plus Back&Refine, infilling with anchor reinsertion,
// and minimum-Bayes-risk candidate selection.

#include "ladx/bleu.hpp"
#include "ladx/condition.hpp"
#include "ladx/diffuser.hpp"
#include "ladx/schedule.hpp"
#include "ladx/textlatent.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ladx {

struct BackRefineConfig {
  bool enabled = false;
  double t_frac = 0.5;
  double l_frac = 0.5;
};

struct SamplerConfig {
  int steps = 30;
  double eta = 0.0;       // 0 = deterministic DDIM
  double guidance = 1.0;  // CFG weight w
  BackRefineConfig back_refine;
  int mbr_candidates = 1;  // 1 = off
  std::uint64_t seed = 0;

  void validate(int total_steps) const {
    if (steps < 1 || steps > total_steps)
      throw std::invalid_argument("SamplerConfig: steps must be in [1, T]");
    if (!(eta >= 0.0 && eta <= 1.0))
      throw std::invalid_argument("SamplerConfig: eta must be in [0, 1]");
    if (!std::isfinite(guidance))
      throw std::invalid_argument("SamplerConfig: guidance must be finite");
    if (back_refine.enabled &&
        (back_refine.t_frac <= 0.0 || back_refine.t_frac >= 1.0 ||
         back_refine.l_frac <= 0.0 || back_refine.l_frac >= 1.0))
      throw std::invalid_argument("SamplerConfig: back-refine fractions must be in (0, 1)");
    if (mbr_candidates < 1)
      throw std::invalid_argument("SamplerConfig: mbr candidates must be >= 1");
  }
};

// Uniform-stride timestep subsequence tau_1 < ... < tau_S with tau_S = T.
inline std::vector<int> make_tau(int total_steps, int steps) {
  if (steps < 1 || steps > total_steps)
    throw std::invalid_argument("make_tau: steps must be in [1, T]");
  std::vector<int> tau(static_cast<std::size_t>(steps));
  for (int i = 1; i <= steps; ++i)
    tau[std::size_t(i) - 1] = int(std::int64_t(i) * total_steps / steps);
  return tau;
}

// Index (1-based) of the tau entry nearest to target; ties pick the later
// (larger) timestep.
inline int nearest_tau_index(const std::vector<int>& tau, double target) {
  int best = 1;
  double best_dist = std::abs(double(tau[0]) - target);
  for (int i = 2; i <= int(tau.size()); ++i) {
    const double dist = std::abs(double(tau[std::size_t(i) - 1]) - target);
    if (dist < best_dist || (dist == best_dist)) {
      best = i;
      best_dist = dist;
    }
  }
  return best;
}

// Kept-set size for Back&Refine: ceil((1 - l_frac) * L_valid).
inline int back_refine_keep_count(double l_frac, int l_valid) {
  return int(std::ceil((1.0 - l_frac) * double(l_valid)));
}

// One DDIM transition x_t -> x_{t_prev} given the predicted clean latent:
//   x_prev = sqrt(abar_prev) * x0hat
//          + sqrt(1 - abar_prev - sigma^2) * (x_t - sqrt(abar_t) x0hat) / sqrt(1 - abar_t)
//          + sigma * noise,
//   sigma^2 = eta * ((1 - abar_prev) / (1 - abar_t)) * beta_t.
template <typename S>
MatT<S> ddim_step(const MatT<S>& x_t, const MatT<S>& xhat0, int t, int t_prev,
                  double eta, const MatT<S>& noise, const NoiseSchedule& sched) {
  if (t_prev >= t) throw std::invalid_argument("ddim_step: t_prev must be < t");
  if (t_prev < 0) throw std::invalid_argument("ddim_step: t_prev must be >= 0");
  if (!(eta >= 0.0 && eta <= 1.0))
    throw std::invalid_argument("ddim_step: eta must be in [0, 1]");
  if (x_t.rows() != xhat0.rows() || x_t.cols() != xhat0.cols())
    throw std::invalid_argument("ddim_step: shape mismatch");

  const double abar_t = sched.alpha_bar(t);
  const double abar_p = sched.alpha_bar(t_prev);
  const double sigma2 = eta * ((1.0 - abar_p) / (1.0 - abar_t)) * sched.beta(t);
  const double dir = std::sqrt(std::max(0.0, 1.0 - abar_p - sigma2));
  const double sigma = std::sqrt(std::max(0.0, sigma2));

  MatT<S> eps_hat = (x_t - S(std::sqrt(abar_t)) * xhat0) / S(std::sqrt(1.0 - abar_t));
  MatT<S> out = S(std::sqrt(abar_p)) * xhat0 + S(dir) * eps_hat;
  if (sigma > 0.0) out += S(sigma) * noise;
  return out;
}

// Generic DDIM chain over an injectable denoiser fn(x, t, self_cond) -> x0hat.
// Anchors (row -> latent) are written back after every step. The hook runs
// after each transition; oracle tests drive the chain with mock denoisers.
template <typename S, typename DenoiseFn,
          typename StepHook = std::nullptr_t>
MatT<S> ddim_chain(MatT<S> x, const std::vector<int>& tau, double eta, DenoiseFn&& fn,
                   Rng& rng, const NoiseSchedule& sched,
                   const std::map<int, VecT<S>>& anchors = {},
                   StepHook&& hook = nullptr) {
  MatT<S> self_cond = MatT<S>::Zero(x.rows(), x.cols());
  for (int i = int(tau.size()); i >= 1; --i) {
    const int t = tau[std::size_t(i) - 1];
    const int t_prev = i > 1 ? tau[std::size_t(i) - 2] : 0;
    MatT<S> xhat = fn(x, t, self_cond);
    MatT<S> noise = rng.gaussian<S>(x.rows(), x.cols());
    x = ddim_step<S>(x, xhat, t, t_prev, eta, noise, sched);
    for (const auto& [row, latent] : anchors) x.row(row) = latent.transpose();
    if constexpr (!std::is_same_v<std::decay_t<StepHook>, std::nullptr_t>)
      hook(i, t, t_prev, x, xhat);
    self_cond = std::move(xhat);
  }
  return x;
}

// argmax over candidates of mean pairwise sentence BLEU against the other
// candidates; ties break toward the lowest index.
inline std::size_t mbr_select_index(const std::vector<std::string>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("mbr_select: empty candidate list");
  if (candidates.size() == 1) return 0;
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double score = 0.0;
    for (std::size_t j = 0; j < candidates.size(); ++j)
      if (j != i) score += sentence_bleu4(candidates[i], candidates[j]);
    score /= double(candidates.size() - 1);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

inline std::string mbr_select(const std::vector<std::string>& candidates) {
  return candidates[mbr_select_index(candidates)];
}

template <typename S>
struct SampleResult {
  std::string caption;
  TokenSeq tokens;
  std::uint64_t forward_passes = 0;  // counted diffuser passes
  double wall_ms = 0.0;
  std::vector<double> confidences;   // max softmax prob per position
  bool back_refine_applied = false;
  int kept_count = 0;
  int mbr_index = 0;
  int candidates = 1;
  MatT<S> final_latent;
};

template <typename S>
class Sampler {
 public:
  Sampler(const TextStack<S>& text, const CondEncoder<S>& cond, const Diffuser<S>& diffuser,
          const NoiseSchedule& sched, const LatentStats& stats, const Vocabulary& vocab)
      : text_(text), cond_(cond), diffuser_(diffuser), sched_(sched), stats_(stats),
        vocab_(vocab) {}

  SampleResult<S> sample(const Scene& scene, const SamplerConfig& cfg) const {
    return generate(scene, {}, cfg);
  }

  // Anchors: position -> token id. Anchor latents are the normalized,
  // reassigned encoder latents of the anchor tokens; they are written back
  // after every denoising step.
  SampleResult<S> infill(const Scene& scene, const std::map<int, int>& anchors,
                         const SamplerConfig& cfg) const {
    return generate(scene, anchors, cfg);
  }

  SampleResult<S> infill_words(const Scene& scene, const std::map<int, std::string>& words,
                               const SamplerConfig& cfg) const {
    std::map<int, int> anchors;
    for (const auto& [pos, word] : words) anchors.emplace(pos, vocab_.id(word));
    return generate(scene, anchors, cfg);
  }

  // Per-position max softmax probability of decode(x).
  std::vector<double> decode_confidence(const MatT<S>& latent) const {
    const MatT<S> probs = nn::softmax_rows(text_.decode(latent));
    std::vector<double> conf(std::size_t(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
      conf[std::size_t(i)] = double(probs.row(i).maxCoeff());
    return conf;
  }

  const NoiseSchedule& schedule() const { return sched_; }

 private:
  SampleResult<S> generate(const Scene& scene, const std::map<int, int>& anchors,
                           const SamplerConfig& cfg) const {
    cfg.validate(sched_.total_steps);
    const auto t0 = std::chrono::steady_clock::now();
    const MatT<S> cond_feat = cond_.encode(scene);
    Rng root(cfg.seed);

    std::vector<SampleResult<S>> results;
    std::vector<std::string> captions;
    for (int c = 0; c < cfg.mbr_candidates; ++c) {
      Rng rng = root.fork("candidate", std::uint64_t(c));
      results.push_back(run_once(cond_feat, anchors, cfg, rng));
      captions.push_back(results.back().caption);
    }
    const std::size_t pick = mbr_select_index(captions);

    SampleResult<S> out = std::move(results[pick]);
    out.mbr_index = int(pick);
    out.candidates = cfg.mbr_candidates;
    for (std::size_t c = 0; c < results.size(); ++c)
      if (c != pick) out.forward_passes += results[c].forward_passes;
    out.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    return out;
  }

  SampleResult<S> run_once(const MatT<S>& cond_feat, const std::map<int, int>& anchors,
                           const SamplerConfig& cfg, Rng& rng) const {
    const int l = text_.cfg.l_max;
    const int d = text_.cfg.dim;
    const int steps = cfg.steps;
    const std::vector<int> tau = make_tau(sched_.total_steps, steps);
    const std::uint64_t passes_per_call = cfg.guidance != 0.0 ? 2 : 1;
    const MatT<S> null_feat = cond_.null_condition();

    // Anchor latents from the encoder, via the training-side pipeline.
    MatT<S> anchor_lat;
    if (!anchors.empty()) {
      TokenSeq probe;
      probe.ids.assign(std::size_t(l), Vocabulary::kMask);
      probe.ids[0] = Vocabulary::kCls;
      for (const auto& [pos, tok] : anchors) {
        if (pos < 0 || pos >= l)
          throw std::invalid_argument("infill: anchor position out of range");
        probe.ids[std::size_t(pos)] = tok;
      }
      LatentSeqT<S> enc = text_.encode(probe);
      enc = normalize(enc, stats_);
      enc = reassign(enc);
      anchor_lat = enc.values;
    }
    auto write_anchors = [&](MatT<S>& x) {
      for (const auto& [pos, tok] : anchors) {
        (void)tok;
        x.row(pos) = anchor_lat.row(pos);
      }
    };

    SampleResult<S> res;
    MatT<S> x = rng.gaussian<S>(l, d);
    write_anchors(x);
    MatT<S> self_cond = MatT<S>::Zero(l, d);

    const int br_index = cfg.back_refine.enabled
                             ? nearest_tau_index(tau, cfg.back_refine.t_frac * sched_.total_steps)
                             : 0;
    const int br_trigger_t = br_index > 0 ? tau[std::size_t(br_index) - 1] : -1;
    bool br_pending = cfg.back_refine.enabled;
    std::vector<std::pair<int, VecT<S>>> kept;

    int i = steps;
    while (i >= 1) {
      const int t = tau[std::size_t(i) - 1];
      const int t_prev = i > 1 ? tau[std::size_t(i) - 2] : 0;
      MatT<S> xhat =
          diffuser_.cfg_denoise(x, cond_feat, null_feat, t, self_cond, cfg.guidance);
      res.forward_passes += passes_per_call;

      if (br_pending && t == br_trigger_t) {
        // Rollback: keep the highest-confidence latents (position 0 is not
        // eligible), renoise everything else, restart from t = T.
        const std::vector<double> conf = decode_confidence(xhat);
        const int keep_n = back_refine_keep_count(cfg.back_refine.l_frac, l - 1);
        std::vector<int> order;
        for (int p = 1; p < l; ++p) order.push_back(p);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
          return conf[std::size_t(a)] > conf[std::size_t(b)];
        });
        kept.clear();
        for (int k = 0; k < keep_n; ++k)
          kept.emplace_back(order[std::size_t(k)], xhat.row(order[std::size_t(k)]).transpose());

        x = rng.gaussian<S>(l, d);
        for (const auto& [pos, latent] : kept) x.row(pos) = latent.transpose();
        write_anchors(x);
        self_cond = std::move(xhat);
        res.back_refine_applied = true;
        res.kept_count = keep_n;
        br_pending = false;
        i = steps;
        continue;
      }

      MatT<S> noise = rng.gaussian<S>(l, d);
      x = ddim_step<S>(x, xhat, t, t_prev, cfg.eta, noise, sched_);
      for (const auto& [pos, latent] : kept) x.row(pos) = latent.transpose();
      write_anchors(x);
      self_cond = std::move(xhat);
      --i;
    }

    const MatT<S> logits = text_.decode(x);
    const MatT<S> probs = nn::softmax_rows(logits);
    res.tokens.ids.resize(std::size_t(l));
    res.confidences.resize(std::size_t(l));
    for (int p = 0; p < l; ++p) {
      Eigen::Index argmax = 0;
      probs.row(p).maxCoeff(&argmax);
      res.tokens.ids[std::size_t(p)] = int(argmax);
      res.confidences[std::size_t(p)] = double(probs(p, argmax));
    }
    res.caption = strip_specials(res.tokens, vocab_);
    res.final_latent = x;
    return res;
  }

  const TextStack<S>& text_;
  const CondEncoder<S>& cond_;
  const Diffuser<S>& diffuser_;
  const NoiseSchedule& sched_;
  const LatentStats& stats_;
  const Vocabulary& vocab_;
};

}  // namespace ladx
