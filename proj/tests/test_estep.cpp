#include <cmath>

#include "doctest.h"
#include "vpd/checks.hpp"
#include "vpd/estep.hpp"

using namespace vpd;

namespace {

struct Fixture {
  Vocabulary vocab = standard_vocab(3);
  Policy policy = Policy::tabular(vocab, GenMask::Ordinary, 2);
  std::vector<Trajectory> storage;

  EStepItem item(std::vector<int> prompt, std::vector<int> y, int reward, double frozen) {
    storage.reserve(64);
    Trajectory t;
    t.prompt = std::move(prompt);
    t.response = std::move(y);
    t.reward = reward;
    storage.push_back(std::move(t));
    EStepItem it;
    it.traj = &storage.back();
    it.fb.mode = FeedbackMode::EnvDiagnostic;
    it.fb.tokens = {vocab.id(TokenRole::Err)};
    it.frozen_logprob = frozen;
    return it;
  }
};

}  // namespace

TEST_SUITE("estep") {
  TEST_CASE("implicit reward is the scaled teacher/frozen log gap") {
    Fixture fx;
    auto it = fx.item({0, 1}, {2, 0}, 1, 0.0);
    Context teacher = Context::teacher(it.fb.tokens, it.traj->prompt);
    double teacher_lp = sequence_logprob(fx.policy, teacher, it.traj->response);

    CHECK(implicit_reward(fx.policy, *it.traj, it.fb, teacher_lp, 0.3) == doctest::Approx(0.0).epsilon(1e-15));
    // teacher -1, frozen -2, beta 0.1 -> 0.1
    CHECK(0.1 * (-1.0 - -2.0) == doctest::Approx(0.1).epsilon(1e-15));
    double r1 = implicit_reward(fx.policy, *it.traj, it.fb, teacher_lp - 1.0, 0.1);
    CHECK(r1 == doctest::Approx(0.1).epsilon(1e-12));
    double r2 = implicit_reward(fx.policy, *it.traj, it.fb, teacher_lp - 1.0, 0.2);
    CHECK(r2 == doctest::Approx(2.0 * r1).epsilon(1e-12));
  }

  TEST_CASE("reward shift: midpoint, symmetry, ema blend, degenerate") {
    Fixture fx;
    EStepBatch batch;
    Context t_ctx = Context::teacher({fx.vocab.id(TokenRole::Err)}, {0, 1});
    // engineer exact class means 0.4 and -0.2 through frozen offsets
    double base_lp = sequence_logprob(fx.policy, t_ctx, std::vector<int>{2, 0});
    EStepState st;
    st.beta = 1.0;
    batch.positives.push_back(fx.item({0, 1}, {2, 0}, 1, base_lp - 0.4));
    batch.negatives.push_back(fx.item({0, 1}, {2, 0}, 0, base_lp + 0.2));
    CHECK(reward_shift(batch, fx.policy, st) == doctest::Approx(0.1).epsilon(1e-12));

    EStepBatch sym;
    sym.positives.push_back(fx.item({0, 1}, {2, 0}, 1, base_lp - 0.7));
    sym.negatives.push_back(fx.item({0, 1}, {2, 0}, 0, base_lp + 0.7));
    CHECK(reward_shift(sym, fx.policy, st) == doctest::Approx(0.0).epsilon(1e-12));

    EStepState ema = st;
    ema.delta_rule = DeltaRule::Ema;
    ema.ema_rate = 0.5;
    ema.delta = 0.0;
    CHECK(reward_shift(batch, fx.policy, ema) == doctest::Approx(0.05).epsilon(1e-12));

    EStepBatch degenerate;
    degenerate.positives.push_back(fx.item({0, 1}, {2, 0}, 1, base_lp));
    CHECK_THROWS(reward_shift(degenerate, fx.policy, st));
    CHECK_THROWS(bco_loss(degenerate, fx.policy, st));
  }

  TEST_CASE("bco loss values from hand-evaluated sigmoids") {
    Fixture fx;
    Context t_ctx = Context::teacher({fx.vocab.id(TokenRole::Err)}, {0, 1});
    double base_lp = sequence_logprob(fx.policy, t_ctx, std::vector<int>{2, 0});
    EStepState st;
    st.beta = 1.0;
    st.delta = 0.0;

    // all implicit rewards equal delta -> sigma(0) on both classes -> 2 log 2
    EStepBatch flat;
    flat.positives.push_back(fx.item({0, 1}, {2, 0}, 1, base_lp));
    flat.negatives.push_back(fx.item({0, 1}, {2, 0}, 0, base_lp));
    CHECK(bco_loss(flat, fx.policy, st).loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));

    // z = +1 for the positive, z = -1 for the negative -> 2 * (-log sigma(1))
    EStepBatch unit;
    unit.positives.push_back(fx.item({0, 1}, {2, 0}, 1, base_lp - 1.0));
    unit.negatives.push_back(fx.item({0, 1}, {2, 0}, 0, base_lp + 1.0));
    double neg_log_sig1 = std::log(1.0 + std::exp(-1.0));  // hand evaluation: 0.31326
    CHECK(neg_log_sig1 == doctest::Approx(0.31326).epsilon(1e-4));
    CHECK(bco_loss(unit, fx.policy, st).loss == doctest::Approx(2.0 * neg_log_sig1).epsilon(1e-12));
  }

  TEST_CASE("bco gradient matches finite differences") {
    Rng rng(12);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      Fixture fx;
      EStepBatch batch;
      for (int k = 0; k < 4; ++k) {
        std::vector<int> prompt = {rng.uniform_int(3), rng.uniform_int(3)};
        std::vector<int> y = {rng.uniform_int(3), rng.uniform_int(3)};
        auto it = fx.item(prompt, y, k < 2 ? 1 : 0, rng.normal());
        Context tc = Context::teacher(it.fb.tokens, prompt);
        Context step = tc;
        for (std::size_t t = 0; t <= y.size(); ++t) {
          auto& v = fx.policy.params.table[step.serialize(fx.vocab)];
          if (v.empty()) v.assign(fx.policy.vocab.total(), 0.0);
          for (auto& e : v) e = rng.normal();
          if (t < y.size()) step.prefix.push_back(y[t]);
        }
        (k < 2 ? batch.positives : batch.negatives).push_back(it);
      }
      EStepState st;
      st.beta = 0.3;
      st.delta = 0.2 * rng.normal();
      LossResult res = bco_loss(batch, fx.policy, st);
      worst = std::max(worst, fd_max_rel_err(fx.policy, res.grad,
                                             [&] { return bco_loss(batch, fx.policy, st).loss; }));
    }
    CHECK(worst <= 1e-5);
  }

  TEST_CASE("shift invariance: adding c to every implicit reward and to delta") {
    Fixture fx;
    Context t_ctx = Context::teacher({fx.vocab.id(TokenRole::Err)}, {0, 1});
    double base_lp = sequence_logprob(fx.policy, t_ctx, std::vector<int>{2, 0});
    EStepState st;
    st.beta = 0.5;
    st.delta = 0.11;
    EStepBatch batch;
    batch.positives.push_back(fx.item({0, 1}, {2, 0}, 1, base_lp - 0.9));
    batch.negatives.push_back(fx.item({0, 1}, {2, 1}, 0, base_lp + 0.4));
    double l0 = bco_loss(batch, fx.policy, st).loss;

    // shift r~ by c via the frozen terms (r~ = beta(lp - frozen)), shift delta by c
    const double c = 0.77;
    EStepBatch shifted = batch;
    for (auto& it : shifted.positives) it.frozen_logprob -= c / st.beta;
    for (auto& it : shifted.negatives) it.frozen_logprob -= c / st.beta;
    EStepState st2 = st;
    st2.delta += c;
    double l1 = bco_loss(shifted, fx.policy, st2).loss;
    CHECK(std::fabs(l0 - l1) <= 1e-12);
  }

  TEST_CASE("loss is monotone in the margins") {
    Fixture fx;
    Context t_ctx = Context::teacher({fx.vocab.id(TokenRole::Err)}, {0, 1});
    double base_lp = sequence_logprob(fx.policy, t_ctx, std::vector<int>{2, 0});
    EStepState st;
    st.beta = 1.0;
    st.delta = 0.0;
    EStepBatch batch;
    batch.positives.push_back(fx.item({0, 1}, {2, 0}, 1, base_lp));
    batch.negatives.push_back(fx.item({0, 1}, {2, 1}, 0, base_lp));
    double prev = bco_loss(batch, fx.policy, st).loss;
    for (int i = 1; i <= 10; ++i) {
      EStepBatch b2 = batch;
      b2.positives[0].frozen_logprob = base_lp - 0.2 * i;  // raises the positive's r~
      b2.negatives[0].frozen_logprob = base_lp + 0.2 * i;  // lowers the negative's r~
      double cur = bco_loss(b2, fx.policy, st).loss;
      CHECK(cur <= prev + 1e-15);
      prev = cur;
    }
  }

  TEST_CASE("dpo pair loss and the decoupling bound") {
    CHECK(dpo_pair_loss(0.4, 0.4) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(dpo_pair_loss(1.0, 0.0) == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(dpo_pair_loss(1.0, 0.0) == doctest::Approx(0.31326).epsilon(1e-4));
    Rng rng(77);
    for (int i = 0; i < 10000; ++i) {
      double rp = 4.0 * rng.normal();
      double rn = 4.0 * rng.normal();
      CHECK(dpo_pair_loss(rp, rn) <= neg_log_sigmoid(rp) + neg_log_sigmoid(-rn) + 1e-12);
    }
  }

  TEST_CASE("analytic E-step: identity tilt, hand value, random-search optimality") {
    DistTable student = DistTable::uniform(2, 1);
    std::vector<double> zero = {0.0, 0.0};
    DistTable same = analytic_estep(student, zero, 1.0);
    CHECK(same.p[0] == doctest::Approx(0.5).epsilon(1e-15));

    std::vector<double> r01 = {1.0, 0.0};
    DistTable q = analytic_estep(student, r01, 1.0);
    CHECK(q.p[0] == doctest::Approx(0.73106).epsilon(1e-4));
    CHECK(q.p[1] == doctest::Approx(0.26894).epsilon(1e-4));

    Rng rng(3);
    DistTable stud = random_softmax_dist(3, 2, rng);
    EnvSpec env;
    env.family = EnvFamily::KeyedCopy;
    env.vocab = standard_vocab(3);
    env.prompt_len = 2;
    env.response_len = 2;
    env.transform_key = 9;
    auto x = sample_prompt(env, rng);
    auto rewards = reward_table(env, x);
    const double beta = 0.4;
    DistTable opt = analytic_estep(stud, rewards, beta);
    double best = expected_reward(opt, rewards) - beta * exact_kl(opt, stud);
    for (int i = 0; i < 1000; ++i) {
      DistTable qq = random_softmax_dist(3, 2, rng);
      double val = expected_reward(qq, rewards) - beta * exact_kl(qq, stud);
      CHECK(val <= best + 1e-12);
    }
  }

  TEST_CASE("analytic write-back reproduces the table conditionals exactly") {
    Rng rng(19);
    DistTable q = random_softmax_dist(3, 2, rng);
    Policy p = Policy::tabular(standard_vocab(3), GenMask::Ordinary, 2);
    Context t_ctx = Context::teacher({p.vocab.id(TokenRole::Err)}, {1, 0});
    write_dist_to_tabular(p, t_ctx, q);
    DistTable back = enumerate_dist(p, t_ctx, 3, 2);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(back.p[i] == doctest::Approx(q.p[i]).epsilon(1e-12));
  }

  TEST_CASE("frozen likelihoods stay fixed while teacher parameters move") {
    Fixture fx;
    auto it = fx.item({0, 1}, {2, 0}, 1, -1.25);
    double before = it.frozen_logprob;
    Context tc = Context::teacher(it.fb.tokens, it.traj->prompt);
    auto& v = fx.policy.params.table[tc.serialize(fx.vocab)];
    v.assign(fx.policy.vocab.total(), 0.0);
    v[2] = 5.0;  // E-step moves teacher-context parameters
    CHECK(it.frozen_logprob == before);
    double r_after = implicit_reward(fx.policy, *it.traj, it.fb, it.frozen_logprob, 1.0);
    CHECK(std::isfinite(r_after));
  }

  TEST_CASE("missing frozen likelihood and absent feedback are errors") {
    Fixture fx;
    auto it = fx.item({0, 1}, {2, 0}, 1, 0.0);
    CHECK_THROWS(implicit_reward(fx.policy, *it.traj, it.fb, std::nan(""), 0.1));
    FeedbackRecord none;
    CHECK_THROWS(implicit_reward(fx.policy, *it.traj, none, -1.0, 0.1));
  }

  TEST_CASE("reward margin is the gap of class means") {
    Fixture fx;
    Context t_ctx = Context::teacher({fx.vocab.id(TokenRole::Err)}, {0, 1});
    double base_lp = sequence_logprob(fx.policy, t_ctx, std::vector<int>{2, 0});
    EStepBatch batch;
    batch.positives.push_back(fx.item({0, 1}, {2, 0}, 1, base_lp));
    batch.negatives.push_back(fx.item({0, 1}, {2, 0}, 0, base_lp));
    CHECK(reward_margin(batch, fx.policy, 0.5) == doctest::Approx(0.0).epsilon(1e-12));
    batch.positives[0].frozen_logprob = base_lp - 0.4;
    batch.negatives[0].frozen_logprob = base_lp + 0.2;
    CHECK(reward_margin(batch, fx.policy, 1.0) == doctest::Approx(0.6).epsilon(1e-12));
  }
}
