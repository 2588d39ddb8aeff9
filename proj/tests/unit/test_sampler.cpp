#include "ladx/sampler.hpp"

#include "ladx/pipeline.hpp"
#include "test_util.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace ladx;
using Mat = MatT<double>;

namespace {

LatentStats unit_stats(int d) {
  LatentStats st;
  st.mean = Eigen::VectorXd::Zero(d);
  st.stdev = Eigen::VectorXd::Ones(d);
  st.sample_count = 1000;
  return st;
}

Scene demo_scene() {
  Scene s;
  s.objects = {{Shape::triangle, Color::green, ObjSize::small}};
  s.relation = Relation::none;
  return s;
}

Pipeline<double> tiny_pipeline() {
  Pipeline<double> pipe = Pipeline<double>::build(testutil::tiny_config());
  pipe.stats = unit_stats(pipe.cfg.text.dim);
  // Give the zero-initialized output projection some signal so captions
  // depend on the chain.
  Rng rng(55);
  pipe.diffuser->out_proj.w.init_gaussian(pipe.cfg.diffuser.dim, pipe.cfg.text.dim, rng, 0.05);
  return pipe;
}

}  // namespace

TEST_CASE("make_tau is strictly increasing and ends at T") {
  const auto tau30 = make_tau(1000, 30);
  REQUIRE(tau30.size() == 30);
  CHECK(tau30.back() == 1000);
  for (std::size_t i = 1; i < tau30.size(); ++i) CHECK(tau30[i] > tau30[i - 1]);

  const auto tau5 = make_tau(1000, 5);
  CHECK(tau5 == std::vector<int>{200, 400, 600, 800, 1000});

  const auto tau_full = make_tau(10, 10);
  CHECK(tau_full == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});

  CHECK_THROWS_AS(make_tau(10, 11), std::invalid_argument);
  CHECK_THROWS_AS(make_tau(10, 0), std::invalid_argument);
}

TEST_CASE("nearest tau index picks the closest step, later on ties") {
  const std::vector<int> tau = {10, 20, 30, 40};
  CHECK(nearest_tau_index(tau, 9.0) == 1);
  CHECK(nearest_tau_index(tau, 21.0) == 2);
  CHECK(nearest_tau_index(tau, 25.0) == 3);  // tie 20/30 -> later
  CHECK(nearest_tau_index(tau, 100.0) == 4);
}

TEST_CASE("ddim_step reproduces the substituted closed form") {
  // Hand-built schedule with abar = {1, 0.5, 0.25}.
  NoiseSchedule sched;
  sched.kind = ScheduleKind::linear;
  sched.total_steps = 2;
  sched.noise_factor = 1.0;
  sched.betas = {0.5, 0.5};
  sched.alphas = {0.5, 0.5};
  sched.alpha_bars = {1.0, 0.5, 0.25};

  Rng rng(1);
  const Mat x0 = rng.gaussian<double>(3, 4);
  const Mat eps = rng.gaussian<double>(3, 4);
  const Mat x_t = 0.5 * x0 + std::sqrt(0.75) * eps;  // q_sample at abar = 0.25

  const Mat out = ddim_step<double>(x_t, x0, 2, 1, 0.0, Mat::Zero(3, 4), sched);
  const Mat expected = std::sqrt(0.5) * x0 + std::sqrt(0.5) * eps;
  CHECK((out - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("eta = 0 makes the step independent of the noise argument") {
  const NoiseSchedule sched = make_schedule(ScheduleKind::cosine, 100);
  Rng rng(2);
  const Mat x_t = rng.gaussian<double>(4, 6);
  const Mat xhat = rng.gaussian<double>(4, 6);
  const Mat n1 = rng.gaussian<double>(4, 6);
  const Mat n2 = rng.gaussian<double>(4, 6);
  CHECK(ddim_step<double>(x_t, xhat, 60, 30, 0.0, n1, sched) ==
        ddim_step<double>(x_t, xhat, 60, 30, 0.0, n2, sched));
}

TEST_CASE("eta = 1 full-sequence steps match the DDPM posterior oracle") {
  const NoiseSchedule sched = make_schedule(ScheduleKind::cosine, 50);
  Rng rng(3);
  const Mat x0 = rng.gaussian<double>(2, 3);
  for (int t = 2; t <= 50; ++t) {
    const Mat x_t = rng.gaussian<double>(2, 3);
    const double abar_t = sched.alpha_bar(t);
    const double abar_p = sched.alpha_bar(t - 1);
    const double beta = sched.beta(t);
    const double alpha = sched.alpha(t);

    // Independent closed form of the forward-process posterior.
    const Mat posterior_mean = (std::sqrt(abar_p) * beta / (1.0 - abar_t)) * x0 +
                               (std::sqrt(alpha) * (1.0 - abar_p) / (1.0 - abar_t)) * x_t;
    const double posterior_var = (1.0 - abar_p) / (1.0 - abar_t) * beta;

    const Mat mean_part = ddim_step<double>(x_t, x0, t, t - 1, 1.0, Mat::Zero(2, 3), sched);
    CHECK((mean_part - posterior_mean).cwiseAbs().maxCoeff() < 1e-9);

    // sigma^2 equals the posterior variance: recover sigma via a unit-noise step.
    const Mat with_noise = ddim_step<double>(x_t, x0, t, t - 1, 1.0, Mat::Ones(2, 3), sched);
    const double sigma = with_noise(0, 0) - mean_part(0, 0);
    CHECK(sigma * sigma == Catch::Approx(posterior_var).epsilon(1e-9));
  }
}

TEST_CASE("ddim_step argument validation") {
  const NoiseSchedule sched = make_schedule(ScheduleKind::cosine, 100);
  const Mat x = Mat::Zero(2, 2);
  CHECK_THROWS_AS(ddim_step<double>(x, x, 10, 10, 0.0, x, sched), std::invalid_argument);
  CHECK_THROWS_AS(ddim_step<double>(x, x, 10, -1, 0.0, x, sched), std::invalid_argument);
  CHECK_THROWS_AS(ddim_step<double>(x, x, 10, 5, 1.5, x, sched), std::invalid_argument);
  CHECK_THROWS_AS(ddim_step<double>(x, Mat::Zero(3, 2), 10, 5, 0.0, x, sched),
                  std::invalid_argument);
}

TEST_CASE("oracle recovery: a true-x0 denoiser recovers x0 through the chain") {
  const NoiseSchedule sched = make_schedule(ScheduleKind::cosine, 1000);
  Rng rng(4);
  const Mat x0 = rng.gaussian<double>(6, 8);
  for (int steps : {5, 10, 30}) {
    Rng chain_rng(100 + steps);
    Mat x_start = chain_rng.gaussian<double>(6, 8);
    const Mat out = ddim_chain<double>(
        x_start, make_tau(1000, steps), 0.0,
        [&](const Mat&, int, const Mat&) { return x0; }, chain_rng, sched);
    const double rel = (out - x0).norm() / x0.norm();
    CHECK(rel < 1e-6);
  }
}

TEST_CASE("anchors persist through every chain step") {
  const NoiseSchedule sched = make_schedule(ScheduleKind::cosine, 200);
  Rng rng(5);
  const Mat x0 = rng.gaussian<double>(6, 8);
  std::map<int, VecT<double>> anchors;
  anchors[1] = rng.gaussian<double>(8, 1);
  anchors[4] = rng.gaussian<double>(8, 1);

  int checks = 0;
  Rng chain_rng(6);
  Mat x_start = chain_rng.gaussian<double>(6, 8);
  const Mat out = ddim_chain<double>(
      x_start, make_tau(200, 10), 0.7,
      [&](const Mat&, int, const Mat&) { return x0; }, chain_rng, sched, anchors,
      [&](int, int, int, const Mat& x, const Mat&) {
        for (const auto& [row, latent] : anchors) {
          CHECK(x.row(row) == latent.transpose());  // exact reinsertion
          ++checks;
        }
      });
  CHECK(checks == 20);
  for (const auto& [row, latent] : anchors) CHECK(out.row(row) == latent.transpose());
}

TEST_CASE("back-refine keep counts follow the ceil rule") {
  CHECK(back_refine_keep_count(0.5, 24) == 12);  // 12 kept, 12 renoised
  CHECK(back_refine_keep_count(0.5, 23) == 12);
  CHECK(back_refine_keep_count(0.2, 23) == 19);
  CHECK(back_refine_keep_count(0.8, 23) == 5);

  // The ablation grid is accepted by config validation.
  for (double tf : {0.2, 0.5, 0.8})
    for (double lf : {0.2, 0.5, 0.8}) {
      SamplerConfig cfg;
      cfg.back_refine = {true, tf, lf};
      CHECK_NOTHROW(cfg.validate(1000));
    }
}

TEST_CASE("sampler config validation") {
  SamplerConfig cfg;
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(100), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.steps = 101;
  CHECK_THROWS_AS(cfg.validate(100), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.eta = 1.5;
  CHECK_THROWS_AS(cfg.validate(100), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.mbr_candidates = 0;
  CHECK_THROWS_AS(cfg.validate(100), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.back_refine = {true, 0.0, 0.5};
  CHECK_THROWS_AS(cfg.validate(100), std::invalid_argument);
}

TEST_CASE("mbr selection: singleton, majority, and tie rules") {
  CHECK(mbr_select({"a red circle"}) == "a red circle");

  // Brute-force pairwise matrix oracle for {A, A, B}.
  const std::string a = "a small red circle above a large blue square";
  const std::string b = "there is a small green star";
  const std::vector<std::string> cands = {a, a, b};
  double score_a = (sentence_bleu4(a, a) + sentence_bleu4(a, b)) / 2.0;
  double score_b = sentence_bleu4(b, a);
  CHECK(score_a > score_b);
  CHECK(mbr_select_index(cands) == 0);
  CHECK(mbr_select(cands) == a);

  CHECK(mbr_select_index({b, b, b}) == 0);  // all identical -> lowest index
  CHECK_THROWS_AS(mbr_select({}), std::invalid_argument);
}

TEST_CASE("sampling is deterministic and counts passes exactly") {
  Pipeline<double> pipe = tiny_pipeline();
  const Sampler<double> sampler = pipe.sampler();

  SamplerConfig cfg;
  cfg.steps = 8;
  cfg.eta = 0.0;
  cfg.guidance = 1.0;
  cfg.seed = 77;
  cfg.validate(pipe.schedule.total_steps);

  const std::uint64_t before = pipe.diffuser->forward_passes();
  const auto r1 = sampler.sample(demo_scene(), cfg);
  CHECK(pipe.diffuser->forward_passes() - before == 16);  // 2 passes per step
  CHECK(r1.forward_passes == 16);

  const auto r2 = sampler.sample(demo_scene(), cfg);
  CHECK(r1.tokens.ids == r2.tokens.ids);
  CHECK(r1.final_latent == r2.final_latent);  // bitwise
  CHECK(r1.caption == r2.caption);
  CHECK(r1.confidences == r2.confidences);

  SamplerConfig unguided = cfg;
  unguided.guidance = 0.0;
  CHECK(sampler.sample(demo_scene(), unguided).forward_passes == 8);

  // A different seed changes the outcome (untrained model, pure noise in).
  SamplerConfig other = cfg;
  other.seed = 78;
  CHECK(sampler.sample(demo_scene(), other).final_latent != r1.final_latent);
}

TEST_CASE("back-refine reruns the chain and reports the kept set") {
  Pipeline<double> pipe = tiny_pipeline();
  const Sampler<double> sampler = pipe.sampler();

  SamplerConfig cfg;
  cfg.steps = 8;
  cfg.eta = 0.0;
  cfg.guidance = 1.0;
  cfg.seed = 99;
  cfg.back_refine = {true, 0.5, 0.5};

  // tau over T=100 is {12,25,...,100}; the trigger 0.5T = 50 sits at index 4,
  // so the first run denoises 5 times and the rerun all 8: 13 calls x 2.
  const auto res = sampler.sample(demo_scene(), cfg);
  CHECK(res.back_refine_applied);
  CHECK(res.kept_count == back_refine_keep_count(0.5, pipe.cfg.text.l_max - 1));
  CHECK(res.forward_passes == 26);

  // Unguided: same iteration count, one pass each.
  SamplerConfig unguided = cfg;
  unguided.guidance = 0.0;
  CHECK(sampler.sample(demo_scene(), unguided).forward_passes == 13);
}

TEST_CASE("infill with no anchors degenerates to sample bitwise") {
  Pipeline<double> pipe = tiny_pipeline();
  const Sampler<double> sampler = pipe.sampler();
  SamplerConfig cfg;
  cfg.steps = 6;
  cfg.seed = 123;

  const auto plain = sampler.sample(demo_scene(), cfg);
  const auto anchored = sampler.infill(demo_scene(), {}, cfg);
  CHECK(plain.tokens.ids == anchored.tokens.ids);
  CHECK(plain.final_latent == anchored.final_latent);
}

TEST_CASE("full anchoring pins the final latent to the anchor latents") {
  Pipeline<double> pipe = tiny_pipeline();
  const Sampler<double> sampler = pipe.sampler();
  const int l = pipe.cfg.text.l_max;

  const std::string caption = "a small red circle above a large blue square";
  const TokenSeq tokens = tokenize(caption, pipe.vocab, l);
  std::map<int, int> anchors;
  for (int p = 0; p < l; ++p) anchors[p] = tokens.ids[std::size_t(p)];

  SamplerConfig cfg;
  cfg.steps = 5;
  cfg.seed = 5;
  const auto res = sampler.infill(demo_scene(), anchors, cfg);

  LatentSeqT<double> expected = pipe.text.encode(tokens);
  expected = normalize(expected, pipe.stats);
  expected = reassign(expected);
  CHECK(res.final_latent == expected.values);
}

TEST_CASE("anchor positions outside the sequence are rejected") {
  Pipeline<double> pipe = tiny_pipeline();
  const Sampler<double> sampler = pipe.sampler();
  SamplerConfig cfg;
  cfg.steps = 5;
  CHECK_THROWS_AS(sampler.infill(demo_scene(), {{24, 5}}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(sampler.infill(demo_scene(), {{-1, 5}}, cfg), std::invalid_argument);
}

TEST_CASE("mbr sampling aggregates candidate costs") {
  Pipeline<double> pipe = tiny_pipeline();
  const Sampler<double> sampler = pipe.sampler();
  SamplerConfig cfg;
  cfg.steps = 4;
  cfg.seed = 9;
  cfg.mbr_candidates = 3;
  const auto res = sampler.sample(demo_scene(), cfg);
  CHECK(res.candidates == 3);
  CHECK(res.forward_passes == 3 * 4 * 2);
  CHECK(res.mbr_index >= 0);
  CHECK(res.mbr_index < 3);
}

// The Back&Refine restart draws its replacement rows from Rng::gaussian;
// their law is standard normal.
TEST_CASE("renoised rows are standard normal in the Monte-Carlo sense") {
  Rng rng(31337);
  const int n = 20000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 3.0 / std::sqrt(double(n)));
  CHECK(std::abs(var - 1.0) < 0.05);
}
