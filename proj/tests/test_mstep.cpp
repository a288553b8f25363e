#include <cmath>

#include "doctest.h"
#include "vpd/checks.hpp"
#include "vpd/mstep.hpp"

using namespace vpd;

namespace {

FeedbackRecord critique_fb(const Vocabulary& vocab, std::vector<int> payload) {
  FeedbackRecord fb;
  fb.mode = FeedbackMode::SelfCritique;
  fb.tokens = {vocab.id(TokenRole::Crit)};
  fb.tokens.insert(fb.tokens.end(), payload.begin(), payload.end());
  return fb;
}

void randomize_path(Policy& p, const Context& ctx, const std::vector<int>& y, Rng& rng) {
  Context step = ctx;
  for (std::size_t t = 0; t <= y.size(); ++t) {
    auto& v = p.params.table[step.serialize(p.vocab)];
    if (v.empty()) v.assign(p.vocab.total(), 0.0);
    for (auto& e : v) e = rng.normal();
    if (t < y.size()) step.prefix.push_back(y[t]);
  }
}

}  // namespace

TEST_SUITE("mstep") {
  TEST_CASE("token divergences vanish on identical inputs") {
    std::vector<double> p = {0.3, 0.2, 0.5};
    for (auto kind : {Divergence::ReverseKl, Divergence::ForwardKl, Divergence::Js})
      CHECK(token_divergence(p, p, kind) == doctest::Approx(0.0).epsilon(1e-15));
  }

  TEST_CASE("reverse KL two-term hand sum") {
    std::vector<double> s = {0.5, 0.5};
    std::vector<double> t = {0.75, 0.25};
    double hand = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
    CHECK(token_divergence(s, t, Divergence::ReverseKl) == doctest::Approx(hand).epsilon(1e-12));
    CHECK(token_divergence(s, t, Divergence::ReverseKl) == doctest::Approx(0.14384).epsilon(1e-4));
  }

  TEST_CASE("js is symmetric") {
    Rng rng(6);
    for (int i = 0; i < 1000; ++i) {
      int n = 2 + rng.uniform_int(4);
      std::vector<double> a(n), b(n);
      double sa = 0, sb = 0;
      for (int k = 0; k < n; ++k) {
        a[k] = std::exp(rng.normal());
        b[k] = std::exp(rng.normal());
        sa += a[k];
        sb += b[k];
      }
      for (int k = 0; k < n; ++k) {
        a[k] /= sa;
        b[k] /= sb;
      }
      CHECK(std::fabs(token_divergence(a, b, Divergence::Js) - token_divergence(b, a, Divergence::Js)) <= 1e-12);
    }
  }

  TEST_CASE("distill loss is zero with zero gradient when distributions agree") {
    Vocabulary vocab = standard_vocab(3);
    Policy p = Policy::tabular(vocab, GenMask::Ordinary, 2);  // unseen keys: both contexts uniform
    Trajectory traj;
    traj.prompt = {0, 2};
    traj.response = {1, 1};
    auto fb = critique_fb(vocab, {1});
    for (auto kind : {Divergence::ReverseKl, Divergence::ForwardKl, Divergence::Js}) {
      LossResult r = distill_loss(p, p, traj, fb, {kind, TokenReduction::Mean});
      CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-15));
      CHECK(r.grad.max_abs() <= 1e-15);
    }
  }

  TEST_CASE("single-step loss reduces to token_divergence") {
    Rng rng(9);
    Vocabulary vocab = standard_vocab(4);
    Policy p = Policy::tabular(vocab, GenMask::Ordinary, 1);
    Trajectory traj;
    traj.prompt = {3};
    traj.response = {2};
    auto fb = critique_fb(vocab, {0});
    Context sc = Context::student(traj.prompt);
    Context tc = Context::teacher(fb.tokens, traj.prompt);
    randomize_path(p, sc, {}, rng);
    randomize_path(p, tc, {}, rng);
    auto s = next_token_dist(p, sc);
    auto q = next_token_dist(p, tc);
    for (auto kind : {Divergence::ReverseKl, Divergence::ForwardKl, Divergence::Js}) {
      LossResult r = distill_loss(p, p, traj, fb, {kind, TokenReduction::Mean});
      CHECK(r.loss == doctest::Approx(token_divergence(s, q, kind)).epsilon(1e-12));
    }
  }

  TEST_CASE("stop-gradient: teacher-context keys never appear in the gradient") {
    Rng rng(14);
    Vocabulary vocab = standard_vocab(3);
    Policy p = Policy::tabular(vocab, GenMask::Ordinary, 2);
    Trajectory traj;
    traj.prompt = {0, 1};
    traj.response = {2, 0};
    auto fb = critique_fb(vocab, {2});
    Context sc = Context::student(traj.prompt);
    Context tc = Context::teacher(fb.tokens, traj.prompt);
    randomize_path(p, sc, traj.response, rng);
    randomize_path(p, tc, traj.response, rng);

    LossResult r = distill_loss(p, p, traj, fb, {Divergence::ReverseKl, TokenReduction::Mean});
    Context probe = tc;
    for (std::size_t t = 0; t <= traj.response.size(); ++t) {
      CHECK(r.grad.table.find(probe.serialize(vocab)) == r.grad.table.end());
      if (t < traj.response.size()) probe.prefix.push_back(traj.response[t]);
    }
    // perturbing a teacher-only key changes the loss but its gradient entry stays absent (zero)
    double before = distill_loss(p, p, traj, fb, {Divergence::ReverseKl, TokenReduction::Mean}).loss;
    p.params.table[tc.serialize(vocab)][0] += 0.5;
    double after = distill_loss(p, p, traj, fb, {Divergence::ReverseKl, TokenReduction::Mean}).loss;
    CHECK(before != after);
  }

  TEST_CASE("distill gradients match finite differences for all three kinds") {
    Rng rng(25);
    for (auto kind : {Divergence::ReverseKl, Divergence::ForwardKl, Divergence::Js}) {
      double worst = 0.0;
      for (int i = 0; i < 50; ++i) {
        Vocabulary vocab = standard_vocab(3);
        Policy student = Policy::tabular(vocab, GenMask::Ordinary, 2);
        Policy teacher = Policy::tabular(vocab, GenMask::Ordinary, 2);
        Trajectory traj;
        traj.prompt = {rng.uniform_int(3), rng.uniform_int(3)};
        traj.response = {rng.uniform_int(3), rng.uniform_int(3)};
        auto fb = critique_fb(vocab, {rng.uniform_int(3)});
        randomize_path(student, Context::student(traj.prompt), traj.response, rng);
        randomize_path(teacher, Context::teacher(fb.tokens, traj.prompt), traj.response, rng);
        DistillConfig cfg{kind, i % 2 ? TokenReduction::Sum : TokenReduction::Mean};
        LossResult r = distill_loss(student, teacher, traj, fb, cfg);
        worst = std::max(worst, fd_max_rel_err(student, r.grad, [&] {
          return distill_loss(student, teacher, traj, fb, cfg).loss;
        }));
      }
      CHECK(worst <= 1e-5);
    }
  }

  TEST_CASE("loss is nonnegative and a small step decreases it") {
    Rng rng(33);
    for (int i = 0; i < 20; ++i) {
      Vocabulary vocab = standard_vocab(3);
      Policy p = Policy::tabular(vocab, GenMask::Ordinary, 2);
      Trajectory traj;
      traj.prompt = {rng.uniform_int(3), rng.uniform_int(3)};
      traj.response = {rng.uniform_int(3), rng.uniform_int(3)};
      auto fb = critique_fb(vocab, {rng.uniform_int(3)});
      randomize_path(p, Context::student(traj.prompt), traj.response, rng);
      randomize_path(p, Context::teacher(fb.tokens, traj.prompt), traj.response, rng);
      DistillConfig cfg{Divergence::ReverseKl, TokenReduction::Mean};
      LossResult r = distill_loss(p, p, traj, fb, cfg);
      CHECK(r.loss >= 0.0);
      apply_gradient(p.params, r.grad, -1e-3);
      double after = distill_loss(p, p, traj, fb, cfg).loss;
      CHECK(after <= r.loss + 1e-12);
    }
  }

  TEST_CASE("importance ratios are one for replayed parameters") {
    Rng rng(40);
    Vocabulary vocab = standard_vocab(3);
    Policy p = Policy::tabular(vocab, GenMask::Ordinary, 2);
    Context ctx = Context::student({0, 1});
    Trajectory traj = sample_trajectory(p, ctx, rng, 2);
    auto ratios = importance_ratio(p, traj);
    double drift = 0.0;
    for (double r : ratios) {
      CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
      drift += std::log(r);
    }
    CHECK(std::fabs(drift) <= 1e-12);

    // first-step probability was 1/3 (uniform V=3); retune it to 2/3 so the
    // logprob rises by exactly ln 2 -> ratio 2.0 at that token
    Policy q = p;
    auto& w = q.params.table[ctx.serialize(vocab)];
    if (w.empty()) w.assign(q.vocab.total(), 0.0);
    w[traj.response[0]] = std::log(4.0);  // softmax: 4/(4+2) = 2/3
    auto shifted = importance_ratio(q, traj);
    CHECK(shifted[0] == doctest::Approx(2.0).epsilon(1e-12));
  }
}
