// ladx: desk-scale latent text diffusion. Subcommands cover the full
// pipeline: gen-data -> pretrain-ae -> train -> sample/infill/eval/bench.

#include "ladx/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"ladx: latent text diffusion on a synthetic scene-caption corpus"};
  app.require_subcommand(1);

  ladx::cli::Options opts;
  app.add_option("--config", opts.config_path, "TOML config file");
  app.add_option("--out", opts.out_dir, "run directory for artifacts")->capture_default_str();
  app.add_option("--data-dir", opts.data_dir, "corpus directory (default: --out)");
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "override the run seed");
  app.add_option("--threads", opts.threads, "worker threads (capped by LADX_THREADS)");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic scene-caption corpus");
  auto* pre = app.add_subcommand("pretrain-ae", "stage-0: pretrain the text autoencoder");
  auto* train = app.add_subcommand("train", "train the diffuser on text latents");
  ladx::cli::TrainOptions topts;
  train->add_option("--epochs", topts.epochs, "epochs to run now (-1 = full config plan)");
  train->add_option("--from", topts.from, "checkpoint to start or resume from");

  ladx::cli::SampleOptions sopts;
  int steps_v = 0;
  double eta_v = 0, guidance_v = 0;
  int mbr_v = 0;
  std::string br_v;
  auto add_sampler_flags = [&](CLI::App* cmd) {
    cmd->add_option("--steps", steps_v, "denoising steps S")
        ->each([&](const std::string&) { sopts.steps = steps_v; });
    cmd->add_option("--eta", eta_v, "DDIM eta in [0,1]; 0 = deterministic")
        ->each([&](const std::string&) { sopts.eta = eta_v; });
    cmd->add_option("--guidance", guidance_v, "classifier-free guidance weight w")
        ->each([&](const std::string&) { sopts.guidance = guidance_v; });
    cmd->add_option("--mbr", mbr_v, "minimum-Bayes-risk candidate count (1 = off)")
        ->each([&](const std::string&) { sopts.mbr = mbr_v; });
    cmd->add_option("--back-refine", br_v, "enable Back&Refine as t_frac,l_frac (e.g. 0.5,0.5)")
        ->each([&](const std::string&) { sopts.back_refine = br_v; });
  };

  auto* sample = app.add_subcommand("sample", "generate captions for test scenes");
  sample->add_option("--count", sopts.count, "number of test scenes to caption");
  sample->add_option("--scene", sopts.scene_json, "inline scene JSON instead of the test split");
  sample->add_option("--anchors", sopts.anchors, "anchor tokens, e.g. \"3=red,7=square\"");
  add_sampler_flags(sample);

  auto* infill = app.add_subcommand("infill", "custom generation with anchored tokens");
  infill->add_option("--count", sopts.count, "number of test scenes to caption");
  infill->add_option("--scene", sopts.scene_json, "inline scene JSON instead of the test split");
  infill->add_option("--anchors", sopts.anchors, "anchor tokens, e.g. \"3=red,7=square\"")
      ->required();
  add_sampler_flags(infill);

  auto* eval = app.add_subcommand("eval", "evaluate BLEU/token/length accuracy on the test split");
  add_sampler_flags(eval);

  auto* bench = app.add_subcommand("bench", "forward-pass and latency sweep vs the AR baseline");
  add_sampler_flags(bench);

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) opts.seed = seed_value;

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (gen->parsed()) ladx::cli::cmd_gen_data(opts);
    else if (pre->parsed()) ladx::cli::cmd_pretrain_ae(opts);
    else if (train->parsed()) ladx::cli::cmd_train(opts, topts);
    else if (sample->parsed()) ladx::cli::cmd_sample(opts, sopts, "sample");
    else if (infill->parsed()) ladx::cli::cmd_sample(opts, sopts, "infill");
    else if (eval->parsed()) ladx::cli::cmd_eval(opts, sopts);
    else if (bench->parsed()) ladx::cli::cmd_bench(opts, sopts);
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", e.what()}, {"command", command}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
