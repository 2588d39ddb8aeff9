#pragma once

// Run configuration: one TOML file merged with flag overrides. The parser
// covers the subset this project uses ([section], key = value, strings,
// numbers, booleans, # comments). to_toml() emits a canonical form whose
// FNV-1a hash is the config digest embedded in checkpoints and manifests.

#include "ladx/ar.hpp"
#include "ladx/diffuser.hpp"
#include "ladx/sampler.hpp"
#include "ladx/schedule.hpp"
#include "ladx/textlatent.hpp"
#include "ladx/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ladx {

class TomlFile {
 public:
  static TomlFile parse(const std::string& text) {
    TomlFile file;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string stripped = strip(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      if (stripped.front() == '[') {
        if (stripped.back() != ']')
          throw std::invalid_argument("toml: bad section header at line " +
                                      std::to_string(line_no));
        section = strip(stripped.substr(1, stripped.size() - 2));
        continue;
      }
      const auto eq = stripped.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("toml: expected key = value at line " +
                                    std::to_string(line_no));
      const std::string key = strip(stripped.substr(0, eq));
      std::string value = strip(stripped.substr(eq + 1));
      if (!value.empty() && value.front() == '"') {
        const auto close = value.find('"', 1);
        if (close == std::string::npos)
          throw std::invalid_argument("toml: unterminated string at line " +
                                      std::to_string(line_no));
        value = value.substr(1, close - 1);
      } else {
        const auto hash = value.find('#');
        if (hash != std::string::npos) value = strip(value.substr(0, hash));
      }
      file.kv_[section][key] = value;
    }
    return file;
  }

  static TomlFile parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("toml: cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text);
  }

  bool has(const std::string& section, const std::string& key) const {
    const auto s = kv_.find(section);
    return s != kv_.end() && s->second.count(key) > 0;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const {
    return has(section, key) ? kv_.at(section).at(key) : fallback;
  }

  double get_double(const std::string& section, const std::string& key, double fallback) const {
    if (!has(section, key)) return fallback;
    return std::stod(kv_.at(section).at(key));
  }

  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) const {
    if (!has(section, key)) return fallback;
    return std::stoll(kv_.at(section).at(key));
  }

  bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& v = kv_.at(section).at(key);
    if (v == "true") return true;
    if (v == "false") return false;
    throw std::invalid_argument("toml: bad boolean for " + section + "." + key);
  }

 private:
  static std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::map<std::string, std::string>> kv_;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int n_train = 8192, n_val = 512, n_test = 512;
  ScheduleKind sched_kind = ScheduleKind::cosine;
  int sched_steps = 1000;
  double sched_s = 0.008;
  double noise_factor = 1.0;
  TextConfig text;
  DiffuserConfig diffuser;
  Stage0Config stage0;
  TrainConfig trainer;
  SamplerConfig sampler;
  ArConfig ar;

  NoiseSchedule make_noise_schedule() const {
    return make_schedule(sched_kind, sched_steps, sched_s, noise_factor);
  }

  static RunConfig from_toml(const TomlFile& t) {
    RunConfig c;
    c.seed = std::uint64_t(t.get_int("run", "seed", 0));
    c.n_train = int(t.get_int("data", "n_train", c.n_train));
    c.n_val = int(t.get_int("data", "n_val", c.n_val));
    c.n_test = int(t.get_int("data", "n_test", c.n_test));
    c.sched_kind = schedule_kind_from_string(t.get_string("schedule", "kind", "cosine"));
    c.sched_steps = int(t.get_int("schedule", "steps", c.sched_steps));
    c.sched_s = t.get_double("schedule", "s", c.sched_s);
    c.noise_factor = t.get_double("schedule", "noise_factor", c.noise_factor);
    c.text.vocab = int(t.get_int("text", "vocab", c.text.vocab));
    c.text.l_max = int(t.get_int("text", "l_max", c.text.l_max));
    c.text.dim = int(t.get_int("text", "dim", c.text.dim));
    c.text.layers = int(t.get_int("text", "layers", c.text.layers));
    c.text.enc_layers = int(t.get_int("text", "enc_layers", c.text.enc_layers));
    c.text.heads = int(t.get_int("text", "heads", c.text.heads));
    c.text.ffn = int(t.get_int("text", "ffn", c.text.ffn));
    c.diffuser.blocks = int(t.get_int("diffuser", "blocks", c.diffuser.blocks));
    c.diffuser.dim = int(t.get_int("diffuser", "dim", c.diffuser.dim));
    c.diffuser.heads = int(t.get_int("diffuser", "heads", c.diffuser.heads));
    c.diffuser.ffn = int(t.get_int("diffuser", "ffn", c.diffuser.ffn));
    c.stage0.epochs = int(t.get_int("stage0", "epochs", c.stage0.epochs));
    c.stage0.batch_size = int(t.get_int("stage0", "batch_size", c.stage0.batch_size));
    c.stage0.lr = t.get_double("stage0", "lr", c.stage0.lr);
    c.stage0.warmup_ratio = t.get_double("stage0", "warmup_ratio", c.stage0.warmup_ratio);
    c.stage0.weight_decay = t.get_double("stage0", "weight_decay", c.stage0.weight_decay);
    c.stage0.stats_sample = int(t.get_int("stage0", "stats_sample", c.stage0.stats_sample));
    c.trainer.lambda = t.get_double("trainer", "lambda", c.trainer.lambda);
    c.trainer.cfg_drop_prob = t.get_double("trainer", "cfg_drop_prob", c.trainer.cfg_drop_prob);
    c.trainer.self_cond_prob = t.get_double("trainer", "self_cond_prob", c.trainer.self_cond_prob);
    c.trainer.peak_lr = t.get_double("trainer", "peak_lr", c.trainer.peak_lr);
    c.trainer.warmup_ratio = t.get_double("trainer", "warmup_ratio", c.trainer.warmup_ratio);
    c.trainer.batch_size = int(t.get_int("trainer", "batch_size", c.trainer.batch_size));
    c.trainer.epochs = int(t.get_int("trainer", "epochs", c.trainer.epochs));
    c.trainer.weight_decay = t.get_double("trainer", "weight_decay", c.trainer.weight_decay);
    c.sampler.steps = int(t.get_int("sampler", "steps", c.sampler.steps));
    c.sampler.eta = t.get_double("sampler", "eta", c.sampler.eta);
    c.sampler.guidance = t.get_double("sampler", "guidance", c.sampler.guidance);
    c.sampler.mbr_candidates = int(t.get_int("sampler", "mbr", c.sampler.mbr_candidates));
    c.sampler.back_refine.enabled =
        t.get_bool("sampler", "back_refine", c.sampler.back_refine.enabled);
    c.sampler.back_refine.t_frac = t.get_double("sampler", "t_frac", c.sampler.back_refine.t_frac);
    c.sampler.back_refine.l_frac = t.get_double("sampler", "l_frac", c.sampler.back_refine.l_frac);
    c.ar.blocks = int(t.get_int("ar", "blocks", c.ar.blocks));
    c.ar.dim = int(t.get_int("ar", "dim", c.ar.dim));
    c.ar.heads = int(t.get_int("ar", "heads", c.ar.heads));
    c.ar.ffn = int(t.get_int("ar", "ffn", c.ar.ffn));
    c.ar.lr = t.get_double("ar", "lr", c.ar.lr);
    c.ar.warmup_ratio = t.get_double("ar", "warmup_ratio", c.ar.warmup_ratio);
    c.ar.batch_size = int(t.get_int("ar", "batch_size", c.ar.batch_size));
    c.ar.epochs = int(t.get_int("ar", "epochs", c.ar.epochs));
    c.ar.weight_decay = t.get_double("ar", "weight_decay", c.ar.weight_decay);
    c.finalize();
    return c;
  }

  static RunConfig from_file(const std::string& path) {
    return from_toml(TomlFile::parse_file(path));
  }

  static RunConfig from_text(const std::string& text) {
    return from_toml(TomlFile::parse(text));
  }

  // Propagates shared dimensions and validates.
  void finalize() {
    text.validate();
    diffuser.latent_dim = text.dim;
    diffuser.l_max = text.l_max;
    diffuser.cond_slots = CondEncoder<float>::kSlots;
    diffuser.max_timestep = sched_steps;
    diffuser.validate();
    ar.l_max = text.l_max;
    ar.vocab = text.vocab;
    trainer.seed = seed;
    trainer.validate();
    sampler.validate(sched_steps);
  }

  std::string to_toml() const {
    std::ostringstream out;
    auto num = [](double v) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    out << "[run]\nseed = " << seed << "\n\n";
    out << "[data]\nn_train = " << n_train << "\nn_val = " << n_val
        << "\nn_test = " << n_test << "\n\n";
    out << "[schedule]\nkind = \"" << to_string(sched_kind) << "\"\nsteps = " << sched_steps
        << "\ns = " << num(sched_s) << "\nnoise_factor = " << num(noise_factor) << "\n\n";
    out << "[text]\nvocab = " << text.vocab << "\nl_max = " << text.l_max
        << "\ndim = " << text.dim << "\nlayers = " << text.layers
        << "\nenc_layers = " << text.enc_layers << "\nheads = " << text.heads
        << "\nffn = " << text.ffn << "\n\n";
    out << "[diffuser]\nblocks = " << diffuser.blocks << "\ndim = " << diffuser.dim
        << "\nheads = " << diffuser.heads << "\nffn = " << diffuser.ffn << "\n\n";
    out << "[stage0]\nepochs = " << stage0.epochs << "\nbatch_size = " << stage0.batch_size
        << "\nlr = " << num(stage0.lr) << "\nwarmup_ratio = " << num(stage0.warmup_ratio)
        << "\nweight_decay = " << num(stage0.weight_decay)
        << "\nstats_sample = " << stage0.stats_sample << "\n\n";
    out << "[trainer]\nlambda = " << num(trainer.lambda)
        << "\ncfg_drop_prob = " << num(trainer.cfg_drop_prob)
        << "\nself_cond_prob = " << num(trainer.self_cond_prob)
        << "\npeak_lr = " << num(trainer.peak_lr)
        << "\nwarmup_ratio = " << num(trainer.warmup_ratio)
        << "\nbatch_size = " << trainer.batch_size << "\nepochs = " << trainer.epochs
        << "\nweight_decay = " << num(trainer.weight_decay) << "\n\n";
    out << "[sampler]\nsteps = " << sampler.steps << "\neta = " << num(sampler.eta)
        << "\nguidance = " << num(sampler.guidance) << "\nmbr = " << sampler.mbr_candidates
        << "\nback_refine = " << (sampler.back_refine.enabled ? "true" : "false")
        << "\nt_frac = " << num(sampler.back_refine.t_frac)
        << "\nl_frac = " << num(sampler.back_refine.l_frac) << "\n\n";
    out << "[ar]\nblocks = " << ar.blocks << "\ndim = " << ar.dim << "\nheads = " << ar.heads
        << "\nffn = " << ar.ffn << "\nlr = " << num(ar.lr)
        << "\nwarmup_ratio = " << num(ar.warmup_ratio) << "\nbatch_size = " << ar.batch_size
        << "\nepochs = " << ar.epochs << "\nweight_decay = " << num(ar.weight_decay) << "\n";
    return out.str();
  }

  std::uint64_t digest() const { return fnv1a(to_toml()); }
};

}  // namespace ladx
