#include "ladx/diffuser.hpp"

#include "ladx/condition.hpp"
#include "ladx/schedule.hpp"
#include "ladx/textlatent.hpp"
#include "ladx/trainer.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace ladx;
using Mat = MatT<double>;

namespace {

struct TinyRig {
  TextStack<double> text;
  CondEncoder<double> cond;
  Diffuser<double> diffuser;
  NoiseSchedule sched;

  TinyRig(int dim, int l_max, int blocks) {
    TextConfig tc;
    tc.vocab = 36;
    tc.l_max = l_max;
    tc.dim = dim;
    tc.layers = 2;
    tc.enc_layers = 1;
    tc.heads = 2;
    tc.ffn = 2 * dim;
    Rng rng(21);
    text.init(tc, rng);

    cond.init(dim, rng);

    DiffuserConfig dc;
    dc.blocks = blocks;
    dc.dim = dim;
    dc.heads = 2;
    dc.ffn = 2 * dim;
    dc.latent_dim = dim;
    dc.l_max = l_max;
    dc.cond_slots = CondEncoder<double>::kSlots;
    dc.max_timestep = 100;
    diffuser.init(dc, rng);
    // Random output projection so gradients flow through it from the start.
    Rng out_rng(22);
    diffuser.out_proj.w.init_gaussian(dim, dim, out_rng, 0.05);

    sched = make_schedule(ScheduleKind::cosine, 100);
  }
};

Scene demo_scene() {
  Scene s;
  s.objects = {{Shape::circle, Color::red, ObjSize::small},
               {Shape::square, Color::blue, ObjSize::large}};
  s.relation = Relation::above;
  return s;
}

}  // namespace

TEST_CASE("denoise maps (L, d) to (L, d) deterministically and counts passes") {
  TinyRig rig(16, 8, 1);
  Rng rng(30);
  const Mat x_t = rng.gaussian<double>(8, 16);
  const Mat self_cond = Mat::Zero(8, 16);
  const Mat cond = rig.cond.encode(demo_scene());

  const std::uint64_t before = rig.diffuser.forward_passes();
  const Mat a = rig.diffuser.denoise(x_t, cond, 50, self_cond);
  const Mat b = rig.diffuser.denoise(x_t, cond, 50, self_cond);
  CHECK(a.rows() == 8);
  CHECK(a.cols() == 16);
  CHECK(a == b);  // bitwise determinism
  CHECK(rig.diffuser.forward_passes() - before == 2);
}

TEST_CASE("denoise validates shapes and timestep range") {
  TinyRig rig(16, 8, 1);
  Rng rng(31);
  const Mat x_t = rng.gaussian<double>(8, 16);
  const Mat bad = rng.gaussian<double>(7, 16);
  const Mat zero = Mat::Zero(8, 16);
  const Mat cond = rig.cond.encode(demo_scene());
  CHECK_THROWS_AS(rig.diffuser.denoise(bad, cond, 50, zero.topRows(7)), std::invalid_argument);
  CHECK_THROWS_AS(rig.diffuser.denoise(x_t, cond, 0, zero), std::out_of_range);
  CHECK_THROWS_AS(rig.diffuser.denoise(x_t, cond, 101, zero), std::out_of_range);
  CHECK_THROWS_AS(rig.diffuser.denoise(x_t, cond.topRows(3), 50, zero), std::invalid_argument);
}

TEST_CASE("cfg algebra: combination, identity, and pure-unconditional cases") {
  // Property test over random mock estimates against a naive per-coordinate
  // oracle loop.
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat fc = rng.gaussian<double>(4, 5);
    const Mat fu = rng.gaussian<double>(4, 5);
    const double w = rng.normal() * 2.0;
    const Mat got = Diffuser<double>::cfg_combine(fc, fu, w);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j)  // FMA contraction may differ in the last ulp
        CHECK(got(i, j) ==
              Catch::Approx((1.0 + w) * fc(i, j) - w * fu(i, j)).epsilon(1e-12).margin(1e-15));
  }

  // Scalar stand-ins: f_c = 0.8, f_u = 0.2, w = 1 -> 1.4.
  Mat fc1(1, 1), fu1(1, 1);
  fc1 << 0.8;
  fu1 << 0.2;
  CHECK(Diffuser<double>::cfg_combine(fc1, fu1, 1.0)(0, 0) == Catch::Approx(1.4));

  TinyRig rig(16, 8, 1);
  Rng xr(33);
  const Mat x_t = xr.gaussian<double>(8, 16);
  const Mat zero = Mat::Zero(8, 16);
  const Mat cond = rig.cond.encode(demo_scene());
  const Mat null_cond = rig.cond.null_condition();

  // w = 0: bitwise equal to the conditional pass, one counted pass.
  std::uint64_t before = rig.diffuser.forward_passes();
  const Mat w0 = rig.diffuser.cfg_denoise(x_t, cond, null_cond, 40, zero, 0.0);
  CHECK(rig.diffuser.forward_passes() - before == 1);
  CHECK(w0 == rig.diffuser.denoise(x_t, cond, 40, zero));

  // w = -1: bitwise equal to the unconditional branch, two counted passes.
  before = rig.diffuser.forward_passes();
  const Mat wm1 = rig.diffuser.cfg_denoise(x_t, cond, null_cond, 40, zero, -1.0);
  CHECK(rig.diffuser.forward_passes() - before == 2);
  CHECK(wm1 == rig.diffuser.denoise(x_t, null_cond, 40, zero));

  CHECK_THROWS_AS(rig.diffuser.cfg_denoise(x_t, cond, null_cond, 40, zero,
                                           std::numeric_limits<double>::quiet_NaN()),
                  std::invalid_argument);
}

TEST_CASE("output depends on the condition and the self-conditioning channel") {
  TinyRig rig(16, 8, 1);
  Rng rng(34);
  const Mat x_t = rng.gaussian<double>(8, 16);
  const Mat zero = Mat::Zero(8, 16);

  Scene other = demo_scene();
  other.objects[0].color = Color::green;
  const Mat out_a = rig.diffuser.denoise(x_t, rig.cond.encode(demo_scene()), 50, zero);
  const Mat out_b = rig.diffuser.denoise(x_t, rig.cond.encode(other), 50, zero);
  CHECK((out_a - out_b).cwiseAbs().maxCoeff() > 1e-12);

  const Mat sc = rng.gaussian<double>(8, 16);
  const Mat out_c = rig.diffuser.denoise(x_t, rig.cond.encode(demo_scene()), 50, sc);
  CHECK((out_a - out_c).cwiseAbs().maxCoeff() > 1e-12);

  // Different timesteps give different predictions.
  const Mat out_d = rig.diffuser.denoise(x_t, rig.cond.encode(demo_scene()), 51, zero);
  CHECK((out_a - out_d).cwiseAbs().maxCoeff() > 1e-12);
}

TEST_CASE("condition slots: locality, swap behavior, and the null condition") {
  TinyRig rig(16, 8, 1);

  Scene a = demo_scene();
  Scene b = a;
  b.objects[1].color = Color::yellow;
  const Mat fa = rig.cond.encode(a);
  const Mat fb = rig.cond.encode(b);
  for (int slot = 0; slot < CondEncoder<double>::kSlots; ++slot) {
    if (slot == 1) {
      CHECK((fa.row(slot) - fb.row(slot)).cwiseAbs().maxCoeff() > 0.0);
    } else {
      CHECK(fa.row(slot) == fb.row(slot));  // only that object's slot differs
    }
  }

  // Permuting two objects with relation none swaps exactly the two slots.
  Scene p1, p2;
  p1.objects = {a.objects[0], a.objects[1]};
  p1.relation = Relation::none;
  p2.objects = {a.objects[1], a.objects[0]};
  p2.relation = Relation::none;
  const Mat f1 = rig.cond.encode(p1);
  const Mat f2 = rig.cond.encode(p2);
  CHECK(f1.row(0) == f2.row(1));
  CHECK(f1.row(1) == f2.row(0));
  for (int slot = 2; slot < CondEncoder<double>::kSlots; ++slot)
    CHECK(f1.row(slot) == f2.row(slot));

  // Null condition: (M, d), identical across calls, one embedding broadcast.
  const Mat null_a = rig.cond.null_condition();
  const Mat null_b = rig.cond.null_condition();
  CHECK(null_a.rows() == CondEncoder<double>::kSlots);
  CHECK(null_a.cols() == 16);
  CHECK(null_a == null_b);
  for (int slot = 1; slot < CondEncoder<double>::kSlots; ++slot)
    CHECK(null_a.row(slot) == null_a.row(0));

  // Distinct from every encoded scene (nearest-neighbor check).
  Rng rng(36);
  for (int i = 0; i < 50; ++i) {
    const Mat f = rig.cond.encode(sample_scene(rng));
    CHECK((f - null_a).cwiseAbs().maxCoeff() > 1e-9);
  }
}

// The full Eq.-style two-fold loss on a d=8, L=6, 1-block configuration in
// double precision: analytic gradients vs central differences (step 1e-5)
// within 1e-3 relative error.
TEST_CASE("total-loss gradients match finite differences on the tiny config") {
  TinyRig rig(8, 6, 1);
  const double lambda = 0.2;
  const Scene scene = demo_scene();
  const int t = 37;

  TokenSeq tokens;
  tokens.ids = {Vocabulary::kCls, 5, 9, 17, Vocabulary::kSep, Vocabulary::kPad};

  // Fixed stats so normalize is a constant affine map.
  LatentStats stats;
  stats.mean = Eigen::VectorXd::Constant(8, 0.1);
  stats.stdev = Eigen::VectorXd::Constant(8, 1.3);
  stats.sample_count = 1000;

  Rng rng(40);
  const Mat eps = rng.gaussian<double>(6, 8);

  auto build_x0 = [&] {
    LatentSeqT<double> lat = rig.text.encode(tokens);
    lat = normalize(lat, stats);
    lat = reassign(lat);
    return lat.values;
  };
  auto loss_fn = [&] {
    const Mat x0 = build_x0();
    const Mat x_t = q_sample_values(x0, t, eps, rig.sched);
    const Mat cond = rig.cond.encode(scene);
    const Mat xhat = rig.diffuser.denoise(x_t, cond, t, Mat::Zero(6, 8));
    return latent_loss(xhat, x0) + lambda * caption_loss(rig.text, xhat, tokens);
  };

  // Analytic pass mirroring the trainer's composition.
  nn::ParamRegistry<double> reg;
  rig.text.visit(reg.collector());
  rig.cond.visit("cond", reg.collector());
  rig.diffuser.visit(reg.collector());
  reg.set_trainable(false);
  reg.set_trainable_prefix("diffuser.", true);
  reg.set_trainable_prefix("cond.", true);
  reg.set_trainable_prefix("text.lm_head", true);
  reg.zero_grad();

  {
    const Mat x0 = build_x0();
    const Mat x_t = q_sample_values(x0, t, eps, rig.sched);
    const Mat cond = rig.cond.encode(scene);
    typename Diffuser<double>::Cache cache;
    const Mat xhat =
        rig.diffuser.denoise_batch(x_t, cond, {t}, Mat::Zero(6, 8), &cache);
    Mat dxhat = (xhat - x0) * (2.0 / double(xhat.size()));
    typename TextStack<double>::DecodeCache dcache;
    const Mat logits = rig.text.decode_batch(xhat, 1, &dcache);
    Mat dlogits;
    nn::softmax_xent<double>(logits, tokens.ids, &dlogits);
    dlogits *= lambda;
    dxhat += rig.text.decode_backward(dcache, dlogits);
    Mat dcond;
    rig.diffuser.backward(cache, dxhat, &dcond);
    rig.cond.backward(scene, dcond);
  }

  Rng pick(41);
  const double h = 1e-5;
  int checked = 0;
  for (const auto& item : reg.items()) {
    if (!item.param->trainable) continue;
    nn::Param<double>& p = *item.param;
    for (int k = 0; k < 2; ++k) {
      const int i = pick.uniform_int(0, int(p.w.rows()) - 1);
      const int j = pick.uniform_int(0, int(p.w.cols()) - 1);
      const double orig = p.w(i, j);
      p.w(i, j) = orig + h;
      const double lp = loss_fn();
      p.w(i, j) = orig - h;
      const double lm = loss_fn();
      p.w(i, j) = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = p.g(i, j);
      const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
      INFO(item.name << " (" << i << "," << j << ") fd=" << fd << " an=" << an);
      CHECK((err < 1e-3 || (std::abs(fd) < 1e-9 && std::abs(an) < 1e-9)));
      ++checked;
    }
  }
  CHECK(checked > 40);
}

TEST_CASE("frozen parameters receive no gradient in the trainer wiring") {
  TinyRig rig(8, 6, 1);
  nn::ParamRegistry<double> reg;
  rig.text.visit(reg.collector());
  reg.set_trainable(false);
  reg.set_trainable_prefix("text.lm_head", true);
  reg.zero_grad();

  Rng rng(44);
  typename TextStack<double>::DecodeCache dcache;
  const Mat latent = rng.gaussian<double>(6, 8);
  const Mat logits = rig.text.decode_batch(latent, 1, &dcache);
  Mat dlogits;
  nn::softmax_xent<double>(logits, {0, 4, 5, 1, 2, 2}, &dlogits);
  rig.text.decode_backward(dcache, dlogits);

  for (const auto& item : reg.items()) {
    const double gnorm = item.param->g.cwiseAbs().maxCoeff();
    if (item.name.rfind("text.lm_head", 0) == 0)
      CHECK(gnorm > 0.0);
    else
      CHECK(gnorm == 0.0);
  }
}
