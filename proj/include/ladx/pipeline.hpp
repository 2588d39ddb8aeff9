#pragma once

// Assembles the full model set (text stack, condition encoder, diffuser,
// schedule, stats) from a RunConfig, and moves it in and out of
// checkpoints. Checkpoints embed the resolved config text, so loading never
// needs the original config file.

#include "ladx/checkpoint.hpp"
#include "ladx/config.hpp"

#include <memory>
#include <string>

namespace ladx {

template <typename S>
struct Pipeline {
  RunConfig cfg;
  Vocabulary vocab;
  TextStack<S> text;
  CondEncoder<S> cond;
  std::unique_ptr<Diffuser<S>> diffuser;
  NoiseSchedule schedule;
  LatentStats stats;

  static Pipeline build(const RunConfig& cfg) {
    Pipeline p;
    p.cfg = cfg;
    p.cfg.finalize();
    p.vocab = Vocabulary::standard();
    if (p.vocab.size() != p.cfg.text.vocab)
      throw std::invalid_argument("pipeline: config vocab size does not match the vocabulary");
    Rng rng(p.cfg.seed);
    p.text.init(p.cfg.text, rng);
    p.cond.init(p.cfg.text.dim, rng);
    p.diffuser = std::make_unique<Diffuser<S>>();
    p.diffuser->init(p.cfg.diffuser, rng);
    p.schedule = p.cfg.make_noise_schedule();
    return p;
  }

  nn::ParamRegistry<S> registry() {
    nn::ParamRegistry<S> reg;
    text.visit(reg.collector());
    cond.visit("cond", reg.collector());
    diffuser->visit(reg.collector());
    return reg;
  }

  Sampler<S> sampler() const {
    return Sampler<S>(text, cond, *diffuser, schedule, stats, vocab);
  }

  CheckpointData to_checkpoint(const std::string& phase, std::int64_t step,
                               std::int64_t total_plan_steps) {
    CheckpointData data;
    data.config_digest = cfg.digest();
    data.config_text = cfg.to_toml();
    data.phase = phase;
    data.step = step;
    data.total_plan_steps = total_plan_steps;
    data.has_stats = stats.valid();
    data.stats = stats;
    data.sched_kind = cfg.sched_kind;
    data.sched_steps = cfg.sched_steps;
    data.sched_s = cfg.sched_s;
    data.sched_noise_factor = cfg.noise_factor;
    nn::ParamRegistry<S> reg = registry();
    pack_params(reg, data);
    return data;
  }

  static Pipeline from_checkpoint(const CheckpointData& data) {
    Pipeline p = build(RunConfig::from_text(data.config_text));
    nn::ParamRegistry<S> reg = p.registry();
    unpack_params(reg, data);
    if (data.has_stats) p.stats = data.stats;
    return p;
  }
};

}  // namespace ladx
