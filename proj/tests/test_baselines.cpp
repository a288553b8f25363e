#include <cmath>

#include "doctest.h"
#include "vpd/baselines.hpp"
#include "vpd/checks.hpp"

using namespace vpd;

namespace {

struct BatchFixture {
  Vocabulary vocab = standard_vocab(3);
  Policy policy = Policy::tabular(vocab, GenMask::Ordinary, 2);
  std::vector<Trajectory> trajs;
  std::vector<FeedbackRecord> fbs;

  // trajectories generated at the current parameters: every rho is 1
  explicit BatchFixture(Rng& rng, int n = 4) {
    std::vector<int> x = {rng.uniform_int(3), rng.uniform_int(3)};
    Context sc = Context::student(x);
    for (int k = 0; k < n; ++k) {
      Context step = sc;
      Trajectory t;
      t.prompt = x;
      t.response = {rng.uniform_int(3), rng.uniform_int(3)};
      t.reward = k % 2;
      for (std::size_t s = 0; s <= t.response.size(); ++s) {
        auto& v = policy.params.table[step.serialize(vocab)];
        if (v.empty()) {
          v.assign(policy.vocab.total(), 0.0);
          for (auto& e : v) e = 0.4 * rng.normal();
        }
        if (s < t.response.size()) step.prefix.push_back(t.response[s]);
      }
      trajs.push_back(std::move(t));
      FeedbackRecord fb;
      fb.mode = FeedbackMode::SelfCritique;
      fb.tokens = {vocab.id(TokenRole::Crit), rng.uniform_int(3)};
      fbs.push_back(fb);
    }
    for (auto& t : trajs) t.token_logprobs = step_logprobs(policy, Context::student(t.prompt), t.response);
  }

  std::vector<const Trajectory*> flat() const {
    std::vector<const Trajectory*> f;
    for (const auto& t : trajs) f.push_back(&t);
    return f;
  }
};

}  // namespace

TEST_SUITE("baselines") {
  TEST_CASE("group advantages: collapse cases and the +-1 pattern") {
    auto all_win = grpo_advantages({1, 1, 1, 1});
    auto all_fail = grpo_advantages({0, 0, 0, 0});
    for (double a : all_win) CHECK(a == 0.0);
    for (double a : all_fail) CHECK(a == 0.0);

    auto mixed = grpo_advantages({1, 1, 0, 0});  // mean 0.5, population std 0.5
    double expect = 0.5 / (0.5 + 1e-6);
    CHECK(mixed[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(mixed[1] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(mixed[2] == doctest::Approx(-expect).epsilon(1e-12));
    CHECK(mixed[3] == doctest::Approx(-expect).epsilon(1e-12));

    CHECK_THROWS(grpo_advantages({1}));
  }

  TEST_CASE("surrogate at the generating parameters equals minus the mean advantage") {
    Rng rng(51);
    BatchFixture fx(rng);
    std::vector<double> adv = {0.3, -0.7, 1.1, 0.2};
    LossResult r = grpo_loss(fx.policy, fx.flat(), adv, 0.2);
    double mean = (0.3 - 0.7 + 1.1 + 0.2) / 4.0;
    CHECK(r.loss == doctest::Approx(-mean).epsilon(1e-12));
  }

  TEST_CASE("all-zero advantages produce exactly zero loss and gradient") {
    Rng rng(52);
    BatchFixture fx(rng);
    std::vector<double> adv(4, 0.0);
    LossResult r = grpo_loss(fx.policy, fx.flat(), adv, 0.2);
    CHECK(r.loss == 0.0);
    CHECK(r.grad.is_zero());
  }

  TEST_CASE("uniform groups give the exploration bottleneck: zero gradient") {
    Rng rng(53);
    BatchFixture fx(rng);
    for (auto& t : fx.trajs) t.reward = 0;  // all-fail group
    std::vector<int> rewards(4, 0);
    auto adv = grpo_advantages(rewards);
    LossResult r = grpo_loss(fx.policy, fx.flat(), adv, 0.2);
    CHECK(r.grad.is_zero());
    CHECK(r.loss == 0.0);
  }

  TEST_CASE("sdpo equals live-teacher distillation when the snapshot matches") {
    Rng rng(54);
    BatchFixture fx(rng);
    DistillConfig cfg{Divergence::ReverseKl, TokenReduction::Mean};
    Policy snapshot = fx.policy;  // same params
    for (std::size_t i = 0; i < fx.trajs.size(); ++i) {
      double a = sdpo_loss(fx.policy, snapshot, fx.trajs[i], fx.fbs[i], cfg).loss;
      double b = distill_loss(fx.policy, fx.policy, fx.trajs[i], fx.fbs[i], cfg).loss;
      CHECK(a == doctest::Approx(b).epsilon(1e-15));
    }
  }

  TEST_CASE("ema teacher: rate 0 freezes, repeated 0.05 updates compound") {
    Policy p = Policy::tabular(standard_vocab(3), GenMask::Ordinary, 2);
    Context c = Context::student({0});
    auto key = c.serialize(p.vocab);
    PolicyParams target = p.params;
    target.table[key] = std::vector<double>(p.vocab.total(), 0.0);
    PolicyParams source = p.params;
    source.table[key] = std::vector<double>(p.vocab.total(), 10.0);

    PolicyParams frozen = target;
    ema_update(frozen, source, 0.0);
    ema_update(frozen, source, 0.0);
    CHECK(frozen.max_abs_diff(target) == 0.0);

    PolicyParams moving = target;
    ema_update(moving, source, 0.05);
    ema_update(moving, source, 0.05);
    CHECK(moving.table[key][0] == doctest::Approx((1.0 - 0.95 * 0.95) * 10.0).epsilon(1e-12));
    CHECK(moving.table[key][0] == doctest::Approx(0.975).epsilon(1e-12));
  }

  TEST_CASE("token advantages are the stop-gradient log ratios") {
    Rng rng(55);
    BatchFixture fx(rng);
    Policy teacher = fx.policy;
    auto zero = sdpo_token_advantage(fx.policy, teacher, fx.trajs[0], fx.fbs[0]);
    // teacher == student parameters but different contexts: ratios are of the
    // two context evaluations, zero only when those distributions agree
    Policy same_ctx_teacher = fx.policy;
    FeedbackRecord no_help = fx.fbs[0];
    auto d = sdpo_token_advantage(fx.policy, same_ctx_teacher, fx.trajs[0], no_help);
    CHECK(d.size() == fx.trajs[0].response.size());

    // teacher prob 0.8 vs student prob 0.4 at one token -> ln 2
    Vocabulary vocab = standard_vocab(2);
    Policy student = Policy::tabular(vocab, GenMask::Ordinary, 1);
    Policy teach = Policy::tabular(vocab, GenMask::Ordinary, 1);
    Trajectory t;
    t.prompt = {0};
    t.response = {0};
    FeedbackRecord fb;
    fb.mode = FeedbackMode::SelfCritique;
    fb.tokens = {vocab.id(TokenRole::Crit)};
    auto set_prob = [&](Policy& p, const Context& ctx, double prob) {
      auto& v = p.params.table[ctx.serialize(vocab)];
      v.assign(p.vocab.total(), 0.0);
      v[0] = std::log(prob / (1.0 - prob));
    };
    set_prob(student, Context::student(t.prompt), 0.4);
    set_prob(teach, Context::teacher(fb.tokens, t.prompt), 0.8);
    auto adv = sdpo_token_advantage(student, teach, t, fb);
    CHECK(adv[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(adv[0] == doctest::Approx(0.69315).epsilon(1e-4));
  }

  TEST_CASE("joint loss degenerates to its parts and is homogeneous") {
    Rng rng(56);
    BatchFixture fx(rng);
    DistillConfig dcfg{Divergence::ReverseKl, TokenReduction::Mean};
    Policy teacher = fx.policy;
    for (auto& [k, v] : teacher.params.table)
      for (auto& e : v) e += 0.3;

    std::vector<int> rewards;
    for (auto& t : fx.trajs) rewards.push_back(t.reward);
    auto adv = grpo_advantages(rewards);

    auto joint = [&](double w_opd, double w_rl) {
      double l = 0.0;
      GradientRecord g;
      g.kind = ParamKind::Tabular;
      for (std::size_t i = 0; i < fx.trajs.size(); ++i) {
        LossResult r = sdpo_loss(fx.policy, teacher, fx.trajs[i], fx.fbs[i], dcfg);
        l += r.loss / fx.trajs.size();
        g.add_scaled(r.grad, 1.0 / fx.trajs.size());
      }
      LossResult rl = grpo_loss(fx.policy, fx.flat(), adv, 0.2);
      GradientRecord total;
      total.kind = ParamKind::Tabular;
      total.add_scaled(g, w_opd);
      total.add_scaled(rl.grad, w_rl);
      return std::pair<double, GradientRecord>(w_opd * l + w_rl * rl.loss, std::move(total));
    };

    auto [l_opd_only, g1] = joint(1.0, 0.0);
    double sdpo_mean = 0.0;
    for (std::size_t i = 0; i < fx.trajs.size(); ++i)
      sdpo_mean += sdpo_loss(fx.policy, teacher, fx.trajs[i], fx.fbs[i], dcfg).loss / fx.trajs.size();
    CHECK(l_opd_only == doctest::Approx(sdpo_mean).epsilon(1e-12));

    auto [l_rl_only, g2] = joint(0.0, 1.0);
    CHECK(l_rl_only == doctest::Approx(grpo_loss(fx.policy, fx.flat(), adv, 0.2).loss).epsilon(1e-12));

    auto [l_half, g_half] = joint(0.5, 0.5);
    auto [l_double, g_double] = joint(1.0, 1.0);
    CHECK(l_double == doctest::Approx(2.0 * l_half).epsilon(1e-12));

    // gradient additivity, componentwise
    GradientRecord manual;
    manual.kind = ParamKind::Tabular;
    manual.add_scaled(g1, 0.5);
    manual.add_scaled(g2, 0.5);
    manual.add_scaled(g_half, -1.0);
    CHECK(manual.max_abs() <= 1e-12);
  }

  TEST_CASE("reshape advantage fusion") {
    HybridConfig hc;
    hc.omega_rl = 1.0;
    hc.omega_opd = 0.0;
    CHECK(reshape_advantage(0.8, 123.0, hc) == doctest::Approx(0.8).epsilon(1e-15));
    hc.omega_opd = 1.0;
    CHECK(reshape_advantage(1.0, 0.5, hc) == doctest::Approx(1.5).epsilon(1e-15));
    hc.omega_rl = 0.5;
    hc.omega_opd = 0.5;
    CHECK(reshape_advantage(0.0, 0.6, hc) != 0.0);  // dense signal survives the collapse case
  }

  TEST_CASE("reweight advantage: clip paths and the sign(0) rule") {
    // alpha 0 leaves the group advantage untouched
    CHECK(reweight_advantage(0.7, -2.0, 0.0, 0.2) == doctest::Approx(0.7).epsilon(1e-15));

    // worked clip path: A=-1, delta=-0.3 -> w = e^{0.3} ~ 1.3499 clipped to 1.2
    double w = std::exp(0.3);
    CHECK(w == doctest::Approx(1.3499).epsilon(1e-4));
    CHECK(reweight_advantage(-1.0, -0.3, 1.0, 0.2) == doctest::Approx(-1.2).epsilon(1e-12));

    // credit amplification capped at 1 + eps_w
    CHECK(reweight_advantage(1.0, 9.0, 1.0, 0.2) == doctest::Approx(1.2).epsilon(1e-12));

    // sign(0) := 0 -> zero stays zero regardless of the log-ratio
    CHECK(reweight_advantage(0.0, 5.0, 1.0, 0.2) == 0.0);
    CHECK_THROWS(reweight_advantage(1.0, 0.0, 1.0, 0.0));
  }

  TEST_CASE("reweighting sign coherence and magnitude bound") {
    Rng rng(57);
    for (int i = 0; i < 200; ++i) {
      double a = rng.normal();
      if (std::fabs(a) < 1e-3) continue;
      double alpha = rng.uniform01();
      double eps_w = 0.05 + 0.9 * rng.uniform01();
      // w = exp(sign(A) * delta): credit grows with delta on successes, and
      // the penalty magnitude shrinks with delta on failures
      double prev_credit = -1e300;
      double prev_penalty = 1e300;
      for (double d = -2.0; d <= 2.0; d += 0.1) {
        double v = reweight_advantage(a, d, alpha, eps_w);
        if (a > 0) {
          CHECK(v >= prev_credit - 1e-12);
          prev_credit = v;
        } else {
          CHECK(std::fabs(v) <= prev_penalty + 1e-12);
          prev_penalty = std::fabs(v);
        }
        CHECK(std::fabs(v) <= std::fabs(a) * (1.0 + alpha * eps_w) + 1e-12);
      }
    }
  }

  TEST_CASE("alpha schedule hits exactly zero and stays there") {
    HybridConfig hc;
    hc.alpha_start = 1.0;
    hc.alpha_schedule = AlphaSchedule::LinearDecayToZero;
    hc.total_steps_for_decay = 10;
    CHECK(hc.alpha_at(0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(hc.alpha_at(5) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(hc.alpha_at(10) == 0.0);
    CHECK(hc.alpha_at(999) == 0.0);
    // at alpha 0 reweighting is the identity: pure verifier-driven updates
    CHECK(reweight_advantage(-0.8, 1.7, hc.alpha_at(10), 0.2) == doctest::Approx(-0.8).epsilon(1e-15));
  }
}
