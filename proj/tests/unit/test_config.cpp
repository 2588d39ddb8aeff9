#include "ladx/config.hpp"

#include "ladx/cli.hpp"

#include <catch_amalgamated.hpp>

using namespace ladx;

TEST_CASE("config round-trips through TOML canonically") {
  RunConfig a;
  a.finalize();
  const std::string text = a.to_toml();
  const RunConfig b = RunConfig::from_text(text);
  CHECK(b.to_toml() == text);
  CHECK(b.digest() == a.digest());
}

TEST_CASE("toml overrides reach every section") {
  const std::string text = R"(
# run configuration
[run]
seed = 99

[data]
n_train = 100
n_val = 10
n_test = 10

[schedule]
kind = "linear"
steps = 250
s = 0.01
noise_factor = 1.5

[text]
dim = 64
layers = 4
enc_layers = 3
heads = 4
ffn = 128

[diffuser]
blocks = 2
dim = 64
heads = 4
ffn = 96

[trainer]
lambda = 0.5
peak_lr = 1e-4   # inline comment
epochs = 3

[sampler]
steps = 5
back_refine = true
t_frac = 0.8
l_frac = 0.2
)";
  const RunConfig cfg = RunConfig::from_text(text);
  CHECK(cfg.seed == 99);
  CHECK(cfg.n_train == 100);
  CHECK(cfg.sched_kind == ScheduleKind::linear);
  CHECK(cfg.sched_steps == 250);
  CHECK(cfg.sched_s == Catch::Approx(0.01));
  CHECK(cfg.noise_factor == Catch::Approx(1.5));
  CHECK(cfg.text.dim == 64);
  CHECK(cfg.text.enc_layers == 3);
  CHECK(cfg.diffuser.blocks == 2);
  CHECK(cfg.diffuser.ffn == 96);
  CHECK(cfg.trainer.lambda == Catch::Approx(0.5));
  CHECK(cfg.trainer.peak_lr == Catch::Approx(1e-4));
  CHECK(cfg.trainer.epochs == 3);
  CHECK(cfg.sampler.steps == 5);
  CHECK(cfg.sampler.back_refine.enabled);
  CHECK(cfg.sampler.back_refine.t_frac == Catch::Approx(0.8));
  // The diffuser inherits the latent geometry from the text stack.
  CHECK(cfg.diffuser.latent_dim == 64);
  CHECK(cfg.diffuser.max_timestep == 250);
}

TEST_CASE("digest changes when any field changes") {
  RunConfig a;
  a.finalize();
  RunConfig b = a;
  b.trainer.lambda = 0.21;
  CHECK(a.digest() != b.digest());
  RunConfig c = a;
  c.seed = 1;
  CHECK(a.digest() != c.digest());
}

TEST_CASE("toml parser rejects malformed input") {
  CHECK_THROWS_AS(TomlFile::parse("[broken\nkey = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(TomlFile::parse("[s]\njust a line\n"), std::invalid_argument);
  CHECK_THROWS_AS(TomlFile::parse("[s]\nkey = \"unterminated\n"), std::invalid_argument);
  const TomlFile t = TomlFile::parse("[s]\nflag = maybe\n");
  CHECK_THROWS_AS(t.get_bool("s", "flag", false), std::invalid_argument);
}

TEST_CASE("config validation rejects bad values") {
  RunConfig bad;
  bad.trainer.cfg_drop_prob = 1.5;
  CHECK_THROWS_AS(bad.finalize(), std::invalid_argument);
  RunConfig bad2;
  bad2.text.enc_layers = 4;  // must be < layers
  CHECK_THROWS_AS(bad2.finalize(), std::invalid_argument);
  RunConfig bad3;
  bad3.sampler.steps = 0;
  CHECK_THROWS_AS(bad3.finalize(), std::invalid_argument);
}

TEST_CASE("anchor strings parse and conflicts are rejected") {
  const auto anchors = cli::parse_anchors("3=red,7=square");
  REQUIRE(anchors.size() == 2);
  CHECK(anchors.at(3) == "red");
  CHECK(anchors.at(7) == "square");
  CHECK(cli::parse_anchors("").empty());
  CHECK_THROWS_AS(cli::parse_anchors("3=red,3=blue"), std::invalid_argument);
  CHECK_THROWS_AS(cli::parse_anchors("nonsense"), std::invalid_argument);
}

TEST_CASE("LADX_THREADS caps the worker count") {
  setenv("LADX_THREADS", "1", 1);
  CHECK(cli::effective_threads(8) == 1);
  CHECK(cli::effective_threads(1) == 1);
  unsetenv("LADX_THREADS");
  CHECK(cli::effective_threads(3) == 3);
}
