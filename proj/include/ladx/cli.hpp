#pragma once

// Command implementations behind the `ladx` binary. Every command writes
// its artifacts under the run directory together with a manifest (command,
// config digest, content hashes of inputs/outputs, timings). Rerunning a
// command with the same config and seeds reproduces its data, checkpoints,
// and captions bitwise (eta = 0).

#include "ladx/eval.hpp"
#include "ladx/pipeline.hpp"
#include "ladx/trainer.hpp"

#include <json.hpp>
#include <omp.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ladx::cli {

using Scalar = float;

struct Options {
  std::string config_path;
  std::string out_dir = "run";
  std::string data_dir;  // defaults to out_dir
  std::optional<std::uint64_t> seed;
  int threads = 0;

  std::string data_path(const std::string& file) const {
    const std::string dir = data_dir.empty() ? out_dir : data_dir;
    return (std::filesystem::path(dir) / file).string();
  }
  std::string out_path(const std::string& file) const {
    return (std::filesystem::path(out_dir) / file).string();
  }
};

inline int effective_threads(int requested) {
  int threads = requested > 0 ? requested : omp_get_max_threads();
  if (const char* env = std::getenv("LADX_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) threads = std::min(threads, cap);
  }
  return threads;
}

inline int setup_threads(const Options& opts) {
  const int threads = effective_threads(opts.threads);
  omp_set_num_threads(threads);
  Eigen::setNbThreads(threads);
  return threads;
}

inline RunConfig load_config(const Options& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : RunConfig::from_file(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  cfg.finalize();
  return cfg;
}

inline std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash missing file: " + path);
  Fnv1a h;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h.update(buf, std::size_t(in.gcount()));
  return hex64(h.digest());
}

inline void require_file(const std::string& path, const std::string& hint) {
  if (!std::filesystem::exists(path))
    throw std::runtime_error("missing prerequisite artifact: " + path + " (" + hint + ")");
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

class ManifestWriter {
 public:
  ManifestWriter(const Options& opts, const std::string& command, const RunConfig& cfg,
                 int threads)
      : opts_(opts), start_(std::chrono::steady_clock::now()) {
    j_["command"] = command;
    j_["config_digest"] = hex64(cfg.digest());
    j_["seed"] = cfg.seed;
    j_["threads"] = threads;
    j_["inputs"] = nlohmann::json::object();
    j_["outputs"] = nlohmann::json::object();
  }

  void input(const std::string& path) { j_["inputs"][path] = file_hash(path); }
  void output(const std::string& path) { j_["outputs"][path] = file_hash(path); }

  void write(const std::string& command) {
    j_["wall_ms"] = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start_)
                        .count();
    write_text_file(opts_.out_path("manifest_" + command + ".json"), j_.dump(2) + "\n");
  }

 private:
  Options opts_;
  nlohmann::json j_;
  std::chrono::steady_clock::time_point start_;
};

inline void dump_config(const Options& opts, const RunConfig& cfg) {
  std::filesystem::create_directories(opts.out_dir);
  write_text_file(opts.out_path("config.toml"), cfg.to_toml());
}

inline Corpus load_corpus(const Options& opts) {
  const std::string path = opts.data_path("corpus.jsonl");
  require_file(path, "run gen-data first");
  return load_jsonl(path);
}

template <typename S>
void report_param_counts(Pipeline<S>& pipe) {
  nn::ParamRegistry<S> reg = pipe.registry();
  std::int64_t text_n = 0, cond_n = 0, diff_n = 0;
  for (const auto& item : reg.items()) {
    if (item.name.rfind("text.", 0) == 0) text_n += item.param->count();
    else if (item.name.rfind("cond.", 0) == 0) cond_n += item.param->count();
    else diff_n += item.param->count();
  }
  std::cout << "parameters: text=" << text_n << " cond=" << cond_n
            << " diffuser=" << diff_n << " total=" << (text_n + cond_n + diff_n) << "\n";
}

// ---------------------------------------------------------------- gen-data

inline void cmd_gen_data(const Options& opts) {
  const int threads = setup_threads(opts);
  const RunConfig cfg = load_config(opts);
  dump_config(opts, cfg);
  ManifestWriter manifest(opts, "gen-data", cfg, threads);

  const std::string dir = opts.data_dir.empty() ? opts.out_dir : opts.data_dir;
  std::filesystem::create_directories(dir);
  const Corpus corpus = generate_dataset(cfg.seed, cfg.n_train, cfg.n_val, cfg.n_test);
  save_jsonl(corpus, opts.data_path("corpus.jsonl"));
  Vocabulary::standard().save(opts.data_path("vocab.txt"));

  manifest.output(opts.data_path("corpus.jsonl"));
  manifest.output(opts.data_path("vocab.txt"));
  manifest.write("gen-data");
  std::cout << "gen-data: " << corpus.examples.size() << " examples -> "
            << opts.data_path("corpus.jsonl") << "\n";
}

// -------------------------------------------------------------- pretrain-ae

inline void cmd_pretrain_ae(const Options& opts) {
  const int threads = setup_threads(opts);
  const RunConfig cfg = load_config(opts);
  dump_config(opts, cfg);
  ManifestWriter manifest(opts, "pretrain-ae", cfg, threads);
  manifest.input(opts.data_path("corpus.jsonl"));

  const Corpus corpus = load_corpus(opts);
  Pipeline<Scalar> pipe = Pipeline<Scalar>::build(cfg);
  report_param_counts(pipe);
  const auto items = prepare_items(corpus.split("train"), pipe.vocab, cfg.text.l_max);

  std::ofstream csv(opts.out_path("stage0_metrics.csv"), std::ios::binary | std::ios::trunc);
  csv << "step,loss,latent_loss,caption_loss,lr\n";
  Stage0Trainer<Scalar> trainer(pipe.text, cfg.stage0);
  pipe.stats = trainer.run(items, Rng(cfg.seed).fork("stage0"), [&](const StepMetrics& m) {
    csv << m.step << ',' << m.loss << ',' << m.latent << ',' << m.caption << ',' << m.lr << "\n";
  });
  csv.close();

  std::vector<TokenSeq> train_seqs;
  for (std::size_t i = 0; i < std::min<std::size_t>(items.size(), 1024); ++i)
    train_seqs.push_back(items[i].tokens);
  std::cout << "stage0 reconstruction (train subset): "
            << reconstruction_accuracy(pipe.text, pipe.stats, train_seqs) << "\n";

  const std::int64_t steps =
      std::int64_t(cfg.stage0.epochs) *
      std::int64_t((items.size() + std::size_t(cfg.stage0.batch_size) - 1) /
                   std::size_t(cfg.stage0.batch_size));
  save_checkpoint(opts.out_path("ae.ckpt"), pipe.to_checkpoint("stage0", steps, steps));
  manifest.output(opts.out_path("ae.ckpt"));
  manifest.write("pretrain-ae");
  std::cout << "pretrain-ae: saved " << opts.out_path("ae.ckpt") << "\n";
}

// -------------------------------------------------------------------- train

struct TrainOptions {
  int epochs = -1;       // -1: run the config's full plan
  std::string from;      // checkpoint to start from; default diff.ckpt, else ae.ckpt
};

inline void cmd_train(const Options& opts, const TrainOptions& topts) {
  const int threads = setup_threads(opts);
  ManifestWriter* manifest = nullptr;  // created after config resolution

  std::string from = topts.from;
  if (from.empty())
    from = std::filesystem::exists(opts.out_path("diff.ckpt")) ? opts.out_path("diff.ckpt")
                                                               : opts.out_path("ae.ckpt");
  require_file(from, "run pretrain-ae first");
  const CheckpointData ckpt = load_checkpoint(from);

  // The checkpoint's embedded config governs the run; an explicit --config
  // must agree with it.
  if (!opts.config_path.empty()) {
    const RunConfig given = load_config(opts);
    if (given.digest() != ckpt.config_digest)
      throw std::runtime_error("config digest mismatch with checkpoint " + from);
  }
  RunConfig cfg = RunConfig::from_text(ckpt.config_text);
  dump_config(opts, cfg);
  ManifestWriter mf(opts, "train", cfg, threads);
  manifest = &mf;
  manifest->input(from);
  manifest->input(opts.data_path("corpus.jsonl"));

  const Corpus corpus = load_corpus(opts);
  Pipeline<Scalar> pipe = Pipeline<Scalar>::from_checkpoint(ckpt);
  if (!pipe.stats.valid())
    throw std::runtime_error("checkpoint has no latent stats; run pretrain-ae first");
  report_param_counts(pipe);
  const auto items = prepare_items(corpus.split("train"), pipe.vocab, cfg.text.l_max);

  DiffusionTrainer<Scalar> trainer(pipe.text, pipe.cond, *pipe.diffuser, pipe.schedule,
                                   pipe.stats, cfg.trainer);
  std::int64_t start_step = 0;
  std::int64_t plan = trainer.steps_per_epoch(items.size()) * std::int64_t(cfg.trainer.epochs);
  if (ckpt.phase == "diffusion") {
    start_step = ckpt.step;
    plan = ckpt.total_plan_steps;
    unpack_adam(trainer.optimizer(), trainer.registry(), ckpt, ckpt.step);
  }
  const int epochs = topts.epochs >= 0 ? topts.epochs : cfg.trainer.epochs;

  const std::string csv_path = opts.out_path("train_metrics.csv");
  const bool fresh_csv = !std::filesystem::exists(csv_path) || ckpt.phase != "diffusion";
  std::ofstream csv(csv_path, std::ios::binary | (fresh_csv ? std::ios::trunc : std::ios::app));
  if (fresh_csv) csv << "step,loss,latent_loss,caption_loss,lr\n";

  const std::int64_t end_step =
      trainer.run(items, Rng(cfg.seed).fork("diffusion"), epochs, start_step, plan,
                  [&](const StepMetrics& m) {
                    csv << m.step << ',' << m.loss << ',' << m.latent << ',' << m.caption
                        << ',' << m.lr << "\n";
                  });
  csv.close();

  CheckpointData out = pipe.to_checkpoint("diffusion", end_step, plan);
  pack_adam(trainer.optimizer(), trainer.registry(), out);
  save_checkpoint(opts.out_path("diff.ckpt"), out);
  manifest->output(opts.out_path("diff.ckpt"));
  manifest->write("train");
  std::cout << "train: step " << start_step << " -> " << end_step << " of plan " << plan
            << ", saved " << opts.out_path("diff.ckpt") << "\n";
}

// ------------------------------------------------------------ sample/infill

struct SampleOptions {
  int count = 8;
  std::string scene_json;      // inline scene instead of the test split
  std::string anchors;         // "3=red,7=square"
  std::optional<int> steps;
  std::optional<double> eta;
  std::optional<double> guidance;
  std::optional<int> mbr;
  std::optional<std::string> back_refine;  // "t_frac,l_frac"
};

inline std::map<int, std::string> parse_anchors(const std::string& text) {
  std::map<int, std::string> anchors;
  if (text.empty()) return anchors;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("bad anchor '" + part + "', expected pos=word");
    const int pos = std::stoi(part.substr(0, eq));
    const std::string word = part.substr(eq + 1);
    if (!anchors.emplace(pos, word).second)
      throw std::invalid_argument("conflicting anchors at position " + std::to_string(pos));
  }
  return anchors;
}

inline SamplerConfig apply_sampler_overrides(SamplerConfig cfg, const SampleOptions& sopts,
                                             int total_steps) {
  if (sopts.steps) cfg.steps = *sopts.steps;
  if (sopts.eta) cfg.eta = *sopts.eta;
  if (sopts.guidance) cfg.guidance = *sopts.guidance;
  if (sopts.mbr) cfg.mbr_candidates = *sopts.mbr;
  if (sopts.back_refine) {
    cfg.back_refine.enabled = true;
    const auto comma = sopts.back_refine->find(',');
    if (comma == std::string::npos)
      throw std::invalid_argument("--back-refine expects t_frac,l_frac");
    cfg.back_refine.t_frac = std::stod(sopts.back_refine->substr(0, comma));
    cfg.back_refine.l_frac = std::stod(sopts.back_refine->substr(comma + 1));
  }
  cfg.validate(total_steps);
  return cfg;
}

inline void cmd_sample(const Options& opts, const SampleOptions& sopts, const char* name) {
  const int threads = setup_threads(opts);
  const std::string ckpt_path = opts.out_path("diff.ckpt");
  require_file(ckpt_path, "run train first");
  const CheckpointData ckpt = load_checkpoint(ckpt_path);
  if (ckpt.phase != "diffusion")
    throw std::runtime_error("checkpoint " + ckpt_path + " is not a trained diffusion model");

  Pipeline<Scalar> pipe = Pipeline<Scalar>::from_checkpoint(ckpt);
  RunConfig cfg = pipe.cfg;
  if (opts.seed) cfg.seed = *opts.seed;
  ManifestWriter manifest(opts, name, cfg, threads);
  manifest.input(ckpt_path);

  const SamplerConfig base = apply_sampler_overrides(cfg.sampler, sopts, cfg.sched_steps);
  const auto anchors = parse_anchors(sopts.anchors);

  std::vector<Scene> scenes;
  if (!sopts.scene_json.empty()) {
    scenes.push_back(scene_from_json(nlohmann::json::parse(sopts.scene_json)));
  } else {
    const Corpus corpus = load_corpus(opts);
    const auto test = corpus.split("test");
    for (int i = 0; i < sopts.count && i < int(test.size()); ++i)
      scenes.push_back(test[std::size_t(i)].scene);
  }

  const Sampler<Scalar> sampler = pipe.sampler();
  std::ofstream jsonl(opts.out_path("samples.jsonl"), std::ios::binary | std::ios::trunc);
  std::ofstream captions(opts.out_path("captions.txt"), std::ios::binary | std::ios::trunc);
  Rng seeder(cfg.seed);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    SamplerConfig c = base;
    c.seed = seeder.fork("sample", std::uint64_t(i)).seed();
    const SampleResult<Scalar> res = anchors.empty()
                                         ? sampler.sample(scenes[i], c)
                                         : sampler.infill_words(scenes[i], anchors, c);
    nlohmann::json line = {{"caption", res.caption},
                           {"forward_passes", res.forward_passes},
                           {"wall_ms", res.wall_ms},
                           {"confidences", res.confidences},
                           {"scene", scene_to_json(scenes[i])},
                           {"seed", c.seed},
                           {"back_refine_applied", res.back_refine_applied},
                           {"mbr_index", res.mbr_index}};
    jsonl << line.dump() << "\n";
    captions << res.caption << "\n";
    std::cout << res.caption << "\n";
  }
  jsonl.close();
  captions.close();
  manifest.output(opts.out_path("samples.jsonl"));
  manifest.output(opts.out_path("captions.txt"));
  manifest.write(name);
}

// --------------------------------------------------------------------- eval

inline void cmd_eval(const Options& opts, const SampleOptions& sopts) {
  const int threads = setup_threads(opts);
  const std::string ckpt_path = opts.out_path("diff.ckpt");
  require_file(ckpt_path, "run train first");
  const CheckpointData ckpt = load_checkpoint(ckpt_path);
  Pipeline<Scalar> pipe = Pipeline<Scalar>::from_checkpoint(ckpt);
  RunConfig cfg = pipe.cfg;
  if (opts.seed) cfg.seed = *opts.seed;
  ManifestWriter manifest(opts, "eval", cfg, threads);
  manifest.input(ckpt_path);
  manifest.input(opts.data_path("corpus.jsonl"));

  const Corpus corpus = load_corpus(opts);
  const SamplerConfig base = apply_sampler_overrides(cfg.sampler, sopts, cfg.sched_steps);
  const Sampler<Scalar> sampler = pipe.sampler();
  const EvalReport report = evaluate(sampler, corpus.split("test"), base, pipe.vocab,
                                     Rng(cfg.seed).fork("eval").seed(), cfg.text.l_max);
  write_text_file(opts.out_path("eval.json"), report.to_json().dump(2) + "\n");
  manifest.output(opts.out_path("eval.json"));
  manifest.write("eval");
  std::cout << "eval: bleu4=" << report.bleu << " token_acc=" << report.token_accuracy
            << " length_acc=" << report.length_accuracy
            << " mean_passes=" << report.mean_forward_passes << "\n";
}

// -------------------------------------------------------------------- bench

inline void cmd_bench(const Options& opts, const SampleOptions& sopts) {
  const int threads = setup_threads(opts);
  const std::string ckpt_path = opts.out_path("diff.ckpt");
  require_file(ckpt_path, "run train first");
  const CheckpointData ckpt = load_checkpoint(ckpt_path);
  Pipeline<Scalar> pipe = Pipeline<Scalar>::from_checkpoint(ckpt);
  RunConfig cfg = pipe.cfg;
  ManifestWriter manifest(opts, "bench", cfg, threads);
  manifest.input(ckpt_path);

  // The AR baseline trains on demand and is cached as its own checkpoint.
  ArModel<Scalar> ar;
  const std::string ar_path = opts.out_path("ar.ckpt");
  if (std::filesystem::exists(ar_path)) {
    const CheckpointData ar_ckpt = load_checkpoint(ar_path);
    RunConfig ar_cfg = RunConfig::from_text(ar_ckpt.config_text);
    Rng rng(ar_cfg.seed);
    ar.init(ar_cfg.ar, rng);
    nn::ParamRegistry<Scalar> reg;
    ar.visit(reg.collector());
    unpack_params(reg, ar_ckpt);
  } else {
    const Corpus corpus = load_corpus(opts);
    Rng rng(cfg.seed);
    ar.init(cfg.ar, rng);
    const auto items = prepare_items(corpus.split("train"), pipe.vocab, cfg.text.l_max);
    ArTrainer<Scalar> trainer(ar);
    std::cout << "bench: training AR baseline (" << cfg.ar.epochs << " epochs)\n";
    trainer.run(items, Rng(cfg.seed).fork("ar"));
    CheckpointData out;
    out.config_digest = cfg.digest();
    out.config_text = cfg.to_toml();
    out.phase = "ar";
    nn::ParamRegistry<Scalar> reg;
    ar.visit(reg.collector());
    pack_params(reg, out);
    save_checkpoint(ar_path, out);
  }

  const SamplerConfig base = apply_sampler_overrides(cfg.sampler, sopts, cfg.sched_steps);
  const std::vector<int> buckets = {6, 10, 14, 18};
  const auto rows = latency_sweep(pipe.sampler(), ar, pipe.vocab, base, buckets, 5, 20,
                                  Rng(cfg.seed).fork("bench").seed());
  write_bench_csv(opts.out_path("bench.csv"), rows);
  manifest.output(opts.out_path("bench.csv"));
  manifest.write("bench");
  for (const auto& r : rows)
    std::cout << "bench: " << r.model << " bucket=" << r.length_bucket
              << " wall_ms=" << r.wall_ms << " passes=" << r.forward_passes
              << " bleu4=" << r.bleu << "\n";
}

}  // namespace ladx::cli
