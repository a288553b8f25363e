#include "vpd/checks.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "vpd/baselines.hpp"
#include "vpd/estep.hpp"
#include "vpd/mstep.hpp"
#include "vpd/oracle.hpp"

namespace vpd {

double fd_max_rel_err(Policy& policy, const GradientRecord& grad, const std::function<double()>& loss,
                      double h) {
  double worst = 0.0;
  auto probe = [&](double* slot, double g) {
    double orig = *slot;
    *slot = orig + h;
    double fp = loss();
    *slot = orig - h;
    double fm = loss();
    *slot = orig;
    double fd = (fp - fm) / (2.0 * h);
    double rel = std::fabs(g - fd) / std::max({1.0, std::fabs(g), std::fabs(fd)});
    worst = std::max(worst, rel);
  };
  if (grad.kind == ParamKind::Tabular) {
    for (const auto& [key, gv] : grad.table) {
      auto& pv = policy.params.table[key];
      if (pv.empty()) pv.assign(gv.size(), 0.0);
      for (std::size_t i = 0; i < gv.size(); ++i) probe(&pv[i], gv[i]);
    }
  } else {
    for (std::size_t i = 0; i < grad.weights.size(); ++i) {
      if (grad.weights[i] == 0.0 && policy.params.weights[i] == 0.0) continue;
      probe(&policy.params.weights[i], grad.weights[i]);
    }
  }
  return worst;
}

namespace {

void randomize_context_path(Policy& policy, const Context& ctx, const std::vector<int>& y, Rng& rng,
                            double scale = 1.0) {
  Context c = ctx;
  for (std::size_t t = 0; t <= y.size(); ++t) {
    auto key = c.serialize(policy.vocab);
    auto& v = policy.params.table[key];
    if (v.empty()) v.assign(policy.vocab.total(), 0.0);
    for (auto& x : v) x = scale * rng.normal();
    if (t < y.size()) c.prefix.push_back(y[t]);
  }
}

std::vector<int> random_tokens(int len, int base, Rng& rng) {
  std::vector<int> y(len);
  for (auto& t : y) t = rng.uniform_int(base);
  return y;
}

CheckResult check_normalization(Rng rng) {
  CheckResult r{"policy-normalization", 0.0, 1e-12};
  Vocabulary vocab = standard_vocab(5);
  for (int i = 0; i < 1000; ++i) {
    Policy p = Policy::tabular(vocab, i % 2 == 0 ? GenMask::Ordinary : GenMask::Full);
    auto x = random_tokens(2, vocab.ordinary, rng);
    Context ctx = Context::student(x);
    randomize_context_path(p, ctx, {}, rng, 2.0);
    auto probs = next_token_dist(p, ctx);
    double s = 0.0;
    for (double v : probs) s += v;
    r.max_residual = std::max(r.max_residual, std::fabs(s - 1.0));
    ++r.cases;
  }
  return r;
}

// Shared fixture for the exact identities: V=4, T=3 sequence space.
struct IdentityFixture {
  int base = 4;
  int length = 3;
  std::vector<double> rewards;
  DistTable ref;

  explicit IdentityFixture(Rng& rng) {
    EnvSpec env;
    env.family = EnvFamily::KeyedCopy;
    env.vocab = standard_vocab(base);
    env.prompt_len = length;
    env.response_len = length;
    env.transform_key = 17;
    auto x = random_tokens(length, base, rng);
    rewards = reward_table(env, x);
    ref = random_softmax_dist(base, length, rng);
  }
};

CheckResult check_objective_kl_equivalence(Rng rng) {
  CheckResult r{"identity-objective-kl-equivalence", 0.0, 1e-9};
  IdentityFixture fx(rng);
  const double beta = 0.7;
  double log_z = log_partition(fx.ref, fx.rewards, beta);
  DistTable pi_star = optimal_policy(fx.ref, fx.rewards, beta);
  for (int i = 0; i < 100; ++i) {
    DistTable pi = random_softmax_dist(fx.base, fx.length, rng);
    double lhs = exact_objective(pi, fx.ref, fx.rewards, beta);
    double rhs = beta * log_z - beta * exact_kl(pi, pi_star);
    r.max_residual = std::max(r.max_residual, std::fabs(lhs - rhs));
    ++r.cases;
  }
  return r;
}

CheckResult check_elbo_decomposition(Rng rng) {
  CheckResult r{"identity-elbo-decomposition", 0.0, 1e-9};
  IdentityFixture fx(rng);
  const double beta = 0.4;
  double log_z = log_partition(fx.ref, fx.rewards, beta);
  DistTable pi_star = optimal_policy(fx.ref, fx.rewards, beta);
  for (int i = 0; i < 100; ++i) {
    DistTable q = random_softmax_dist(fx.base, fx.length, rng);
    double lhs = elbo(q, fx.ref, fx.rewards, beta) + exact_kl(q, pi_star);
    r.max_residual = std::max(r.max_residual, std::fabs(lhs - log_z));
    ++r.cases;
  }
  return r;
}

CheckResult check_trust_region(Rng rng) {
  CheckResult r{"identity-trust-region", 0.0, 1e-9};
  IdentityFixture fx(rng);
  const double beta = 0.3;
  for (int i = 0; i < 100; ++i) {
    DistTable prior = random_softmax_dist(fx.base, fx.length, rng);  // pi_theta
    DistTable q = random_softmax_dist(fx.base, fx.length, rng);
    DistTable dyn = optimal_policy(prior, fx.rewards, beta);
    double log_z_dyn = log_partition(prior, fx.rewards, beta);
    double resid = exact_kl(q, dyn) - log_z_dyn + expected_reward(q, fx.rewards) / beta - exact_kl(q, prior);
    r.max_residual = std::max(r.max_residual, std::fabs(resid));
    ++r.cases;
  }
  return r;
}

CheckResult check_alignment_bonus(Rng rng) {
  CheckResult r{"identity-alignment-bonus", 0.0, 1e-9};
  IdentityFixture fx(rng);
  const double beta = 0.3;
  DistTable prior = random_softmax_dist(fx.base, fx.length, rng);  // pi_theta, fixed
  DistTable pi_star = optimal_policy(fx.ref, fx.rewards, beta);
  DistTable dyn = optimal_policy(prior, fx.rewards, beta);
  double lo = 1e300, hi = -1e300;
  for (int i = 0; i < 100; ++i) {
    DistTable q = random_softmax_dist(fx.base, fx.length, rng);
    double v = exact_kl(q, dyn) - exact_kl(q, pi_star) + expected_log_ratio(q, prior, fx.ref);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    ++r.cases;
  }
  r.max_residual = hi - lo;  // constancy in q
  return r;
}

CheckResult check_optimality(Rng rng) {
  CheckResult r{"optimal-policy-optimality", 0.0, 0.0};
  for (int e = 0; e < 3; ++e) {
    EnvSpec env;
    env.family = e % 2 == 0 ? EnvFamily::KeyedCopy : EnvFamily::ModSum;
    env.vocab = standard_vocab(3 + e);
    env.prompt_len = 2;
    env.response_len = env.family == EnvFamily::ModSum ? 1 : 2;
    env.transform_key = 31 * (e + 1);
    auto x = random_tokens(env.prompt_len, env.vocab.ordinary, rng);
    auto rewards = reward_table(env, x);
    DistTable ref = random_softmax_dist(env.vocab.ordinary, env.response_len, rng);
    const double beta = 0.5;
    DistTable pi_star = optimal_policy(ref, rewards, beta);
    double j_star = exact_objective(pi_star, ref, rewards, beta);
    for (int i = 0; i < 1000; ++i) {
      // Dirichlet(1) direction mixed into pi*; always full support.
      DistTable pert = pi_star;
      double mix = 0.02 + 0.98 * rng.uniform01();
      std::vector<double> dir(pert.size());
      double s = 0.0;
      for (auto& d : dir) {
        d = -std::log(1.0 - rng.uniform01() + 1e-300);
        s += d;
      }
      for (std::size_t k = 0; k < pert.size(); ++k) pert.p[k] = (1.0 - mix) * pert.p[k] + mix * dir[k] / s;
      double j = exact_objective(pert, ref, rewards, beta);
      if (j > j_star) ++r.violations;
      r.max_residual = std::max(r.max_residual, std::max(0.0, j - j_star));
      ++r.cases;
    }
  }
  return r;
}

CheckResult check_bco_bound(Rng rng) {
  CheckResult r{"bco-decoupling-bound", 0.0, 1e-12};
  for (int i = 0; i < 10000; ++i) {
    double rp = 4.0 * rng.normal();
    double rn = 4.0 * rng.normal();
    double lhs = dpo_pair_loss(rp, rn);
    double rhs = neg_log_sigmoid(rp) + neg_log_sigmoid(-rn);
    double slack = lhs - rhs;  // must be <= tolerance
    if (slack > r.tolerance) ++r.violations;
    r.max_residual = std::max(r.max_residual, slack);
    ++r.cases;
  }
  r.max_residual = std::max(r.max_residual, 0.0);
  return r;
}

// ---- finite-difference gradient checks -----------------------------------

struct FdFixture {
  EnvSpec env;
  Vocabulary vocab;

  explicit FdFixture(int base = 4, int len = 3) {
    env.family = EnvFamily::KeyedCopy;
    env.vocab = standard_vocab(base);
    env.prompt_len = len;
    env.response_len = len;
    env.transform_key = 7;
    vocab = env.vocab;
  }
};

CheckResult check_fd_logprob(Rng rng) {
  CheckResult r{"grad-logprob", 0.0, 1e-5};
  FdFixture fx;
  for (int i = 0; i < 50; ++i) {
    bool linear = i % 2 == 1;
    Policy p = linear ? Policy::linear(fx.vocab, GenMask::Ordinary, 4)
                      : Policy::tabular(fx.vocab, GenMask::Ordinary, 4);
    auto x = random_tokens(fx.env.prompt_len, fx.vocab.ordinary, rng);
    auto y = random_tokens(fx.env.response_len, fx.vocab.ordinary, rng);
    Context ctx = Context::student(x);
    if (linear) {
      for (auto& w : p.params.weights) w = 0.3 * rng.normal();
    } else {
      randomize_context_path(p, ctx, y, rng);
    }
    GradientRecord g = logprob_grad(p, ctx, y);
    double err = fd_max_rel_err(p, g, [&] { return sequence_logprob(p, ctx, y); });
    r.max_residual = std::max(r.max_residual, err);
    ++r.cases;
  }
  return r;
}

CheckResult check_fd_bco(Rng rng) {
  CheckResult r{"grad-bco-loss", 0.0, 1e-5};
  FdFixture fx(3, 2);
  for (int i = 0; i < 50; ++i) {
    Policy p = Policy::tabular(fx.vocab, GenMask::Ordinary, 4);
    std::vector<Trajectory> trajs(4);
    std::vector<FeedbackRecord> fbs(4);
    EStepBatch batch;
    for (int k = 0; k < 4; ++k) {
      auto x = random_tokens(fx.env.prompt_len, fx.vocab.ordinary, rng);
      trajs[k].prompt = x;
      trajs[k].response = random_tokens(fx.env.response_len, fx.vocab.ordinary, rng);
      trajs[k].reward = k < 2 ? 1 : 0;
      fbs[k].mode = FeedbackMode::EnvDiagnostic;
      fbs[k].tokens = {fx.vocab.id(TokenRole::Err), rng.uniform_int(fx.vocab.ordinary)};
      Context tc = Context::teacher(fbs[k].tokens, x);
      randomize_context_path(p, tc, trajs[k].response, rng);
      EStepItem item{&trajs[k], fbs[k], rng.normal()};
      (k < 2 ? batch.positives : batch.negatives).push_back(item);
    }
    EStepState st;
    st.beta = 0.25;
    st.delta = 0.3 * rng.normal();
    LossResult res = bco_loss(batch, p, st);
    double err = fd_max_rel_err(p, res.grad, [&] { return bco_loss(batch, p, st).loss; });
    r.max_residual = std::max(r.max_residual, err);
    ++r.cases;
  }
  return r;
}

CheckResult check_fd_distill(Divergence kind, Rng rng) {
  CheckResult r{std::string("grad-distill-") + to_string(kind), 0.0, 1e-5};
  FdFixture fx(3, 2);
  for (int i = 0; i < 50; ++i) {
    bool linear = i % 3 == 2;
    Policy student = linear ? Policy::linear(fx.vocab, GenMask::Ordinary, 4)
                            : Policy::tabular(fx.vocab, GenMask::Ordinary, 4);
    auto x = random_tokens(fx.env.prompt_len, fx.vocab.ordinary, rng);
    Trajectory traj;
    traj.prompt = x;
    traj.response = random_tokens(fx.env.response_len, fx.vocab.ordinary, rng);
    FeedbackRecord fb;
    fb.mode = FeedbackMode::SelfCritique;
    fb.tokens = {fx.vocab.id(TokenRole::Crit), rng.uniform_int(fx.vocab.ordinary)};
    Context sc = Context::student(x);
    Context tc = Context::teacher(fb.tokens, x);
    if (linear) {
      for (auto& w : student.params.weights) w = 0.3 * rng.normal();
    } else {
      randomize_context_path(student, sc, traj.response, rng);
    }
    // Teacher snapshot: sg[] realized as a frozen copy, so finite differences
    // probe only the student path even under the linear (shared-feature) kind.
    Policy teacher = linear ? Policy::linear(fx.vocab, GenMask::Ordinary, 4)
                            : Policy::tabular(fx.vocab, GenMask::Ordinary, 4);
    if (linear) {
      for (auto& w : teacher.params.weights) w = 0.3 * rng.normal();
    } else {
      randomize_context_path(teacher, tc, traj.response, rng);
    }
    DistillConfig cfg{kind, i % 2 == 0 ? TokenReduction::Mean : TokenReduction::Sum};
    LossResult res = distill_loss(student, teacher, traj, fb, cfg);
    double err = fd_max_rel_err(student, res.grad,
                                [&] { return distill_loss(student, teacher, traj, fb, cfg).loss; });
    r.max_residual = std::max(r.max_residual, err);
    ++r.cases;
  }
  return r;
}

// Trajectories sampled under slightly offset "old" parameters keep the
// ratios strictly inside the clip interval, away from the kinks.
void make_surrogate_instance(const FdFixture& fx, Rng& rng, Policy& p, std::vector<Trajectory>& trajs,
                             std::vector<FeedbackRecord>& fbs) {
  p = Policy::tabular(fx.vocab, GenMask::Ordinary, 4);
  auto x = random_tokens(fx.env.prompt_len, fx.vocab.ordinary, rng);
  trajs.assign(4, {});
  fbs.assign(4, {});
  for (int k = 0; k < 4; ++k) {
    trajs[k].prompt = x;
    trajs[k].response = random_tokens(fx.env.response_len, fx.vocab.ordinary, rng);
    trajs[k].reward = k % 2;
    Context sc = Context::student(x);
    randomize_context_path(p, sc, trajs[k].response, rng, 0.5);
  }
  for (int k = 0; k < 4; ++k) {
    Context sc = Context::student(x);
    auto lps = step_logprobs(p, sc, trajs[k].response);
    trajs[k].token_logprobs = lps;  // generation-time logprobs at current params
    for (auto& lp : trajs[k].token_logprobs) lp += 0.02 * rng.normal();  // rho near 1
    fbs[k].mode = FeedbackMode::SelfCritique;
    fbs[k].tokens = {fx.vocab.id(TokenRole::Crit), rng.uniform_int(fx.vocab.ordinary)};
  }
}

CheckResult check_fd_grpo(Rng rng) {
  CheckResult r{"grad-grpo-loss", 0.0, 1e-5};
  FdFixture fx(3, 2);
  for (int i = 0; i < 50; ++i) {
    Policy p;
    std::vector<Trajectory> trajs;
    std::vector<FeedbackRecord> fbs;
    make_surrogate_instance(fx, rng, p, trajs, fbs);
    std::vector<const Trajectory*> flat;
    std::vector<int> rewards;
    for (auto& t : trajs) {
      flat.push_back(&t);
      rewards.push_back(t.reward);
    }
    auto adv = grpo_advantages(rewards);
    LossResult res = grpo_loss(p, flat, adv, 0.2);
    double err = fd_max_rel_err(p, res.grad, [&] { return grpo_loss(p, flat, adv, 0.2).loss; });
    r.max_residual = std::max(r.max_residual, err);
    ++r.cases;
  }
  return r;
}

CheckResult check_fd_hybrid(Rng rng) {
  CheckResult r{"grad-hybrid-losses", 0.0, 1e-5};
  FdFixture fx(3, 2);
  HybridConfig hc;
  for (int i = 0; i < 51; ++i) {
    Policy p;
    std::vector<Trajectory> trajs;
    std::vector<FeedbackRecord> fbs;
    make_surrogate_instance(fx, rng, p, trajs, fbs);
    Policy teacher = p;  // frozen copy
    for (auto& [k, v] : teacher.params.table)
      for (auto& w : v) w += 0.2 * rng.normal();
    std::vector<const Trajectory*> flat;
    std::vector<int> rewards;
    for (auto& t : trajs) {
      flat.push_back(&t);
      rewards.push_back(t.reward);
    }
    auto seq_adv = grpo_advantages(rewards);

    int variant = i % 3;
    if (variant == 0) {
      // joint: omega_opd * distill + omega_rl * clipped surrogate
      DistillConfig dc{Divergence::ReverseKl, TokenReduction::Mean};
      auto joint = [&] {
        double l = 0.0;
        for (std::size_t k = 0; k < trajs.size(); ++k)
          l += sdpo_loss(p, teacher, trajs[k], fbs[k], dc).loss / trajs.size();
        std::vector<double> a(seq_adv.begin(), seq_adv.end());
        return hc.omega_opd * l + hc.omega_rl * grpo_loss(p, flat, a, hc.ppo_clip).loss;
      };
      GradientRecord g;
      g.kind = p.params.kind;
      for (std::size_t k = 0; k < trajs.size(); ++k)
        g.add_scaled(sdpo_loss(p, teacher, trajs[k], fbs[k], dc).grad, hc.omega_opd / trajs.size());
      g.add_scaled(grpo_loss(p, flat, seq_adv, hc.ppo_clip).grad, hc.omega_rl);
      r.max_residual = std::max(r.max_residual, fd_max_rel_err(p, g, joint));
    } else {
      // reshape / reweight: fused advantages are stop-gradient inputs.
      std::vector<std::vector<double>> adv(trajs.size());
      for (std::size_t k = 0; k < trajs.size(); ++k) {
        auto d = sdpo_token_advantage(p, teacher, trajs[k], fbs[k]);
        adv[k].resize(d.size());
        for (std::size_t t = 0; t < d.size(); ++t) {
          // keep |delta| away from the reweight clip kink at log(1.2)
          double dt = std::clamp(d[t], -1.5, 1.5);
          if (std::fabs(std::fabs(dt) - std::log(1.0 + hc.reweight_clip)) < 0.03) dt += 0.06;
          adv[k][t] = variant == 1 ? reshape_advantage(seq_adv[k], dt, hc)
                                   : reweight_advantage(seq_adv[k], dt, 0.7, hc.reweight_clip);
        }
      }
      LossResult res = clipped_surrogate_loss(p, flat, adv, hc.ppo_clip);
      double err =
          fd_max_rel_err(p, res.grad, [&] { return clipped_surrogate_loss(p, flat, adv, hc.ppo_clip).loss; });
      r.max_residual = std::max(r.max_residual, err);
    }
    ++r.cases;
  }
  return r;
}

}  // namespace

std::vector<CheckResult> run_oracle_checks(std::uint64_t seed) {
  Rng root(seed);
  auto sub = [&](std::uint64_t tag) { return root.derive({tag}); };
  std::vector<CheckResult> out;
  out.push_back(check_normalization(sub(1)));
  out.push_back(check_objective_kl_equivalence(sub(2)));
  out.push_back(check_elbo_decomposition(sub(3)));
  out.push_back(check_trust_region(sub(4)));
  out.push_back(check_alignment_bonus(sub(5)));
  out.push_back(check_optimality(sub(6)));
  out.push_back(check_bco_bound(sub(7)));
  out.push_back(check_fd_logprob(sub(8)));
  out.push_back(check_fd_bco(sub(9)));
  out.push_back(check_fd_distill(Divergence::ReverseKl, sub(10)));
  out.push_back(check_fd_distill(Divergence::ForwardKl, sub(11)));
  out.push_back(check_fd_distill(Divergence::Js, sub(12)));
  out.push_back(check_fd_grpo(sub(13)));
  out.push_back(check_fd_hybrid(sub(14)));
  return out;
}

std::string check_report_lines(const std::vector<CheckResult>& results) {
  std::string out;
  for (const auto& r : results) {
    nlohmann::json j;
    j["identity"] = r.name;
    j["max_residual"] = r.max_residual;
    j["tolerance"] = r.tolerance;
    j["cases"] = r.cases;
    j["violations"] = r.violations;
    j["pass"] = r.pass();
    out += j.dump();
    out += "\n";
  }
  return out;
}

}  // namespace vpd
