#include "vpd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <stdexcept>

#include "json.hpp"
#include "vpd/baselines.hpp"

namespace vpd {

using nlohmann::json;

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string MetricsRecord::to_json_line() const {
  json j;
  j["batch"] = batch;
  j["method"] = method;
  j["train_acc"] = train_acc;
  j["eval_acc"] = opt_json(eval_acc);
  j["reward_margin"] = opt_json(reward_margin);
  j["distill_loss"] = opt_json(distill_loss);
  j["token_kl"] = opt_json(token_kl);
  j["estep_loss"] = opt_json(estep_loss);
  j["estep_pos_mean"] = opt_json(estep_pos_mean);
  j["estep_neg_mean"] = opt_json(estep_neg_mean);
  j["delta"] = opt_json(delta);
  j["exact_j"] = opt_json(exact_j);
  j["elbo"] = opt_json(elbo);
  j["importance_drift"] = opt_json(importance_drift);
  j["estep_ran"] = estep_ran;
  j["zero_gradient"] = zero_gradient;
  j["skipped_no_feedback"] = skipped_no_feedback;
  j["skipped_estep"] = skipped_estep;
  return j.dump();
}

std::string RunSummary::to_json() const {
  json j;
  j["method"] = method;
  j["batches"] = batches;
  j["final_eval_acc"] = opt_json(final_eval_acc);
  j["best_eval_acc"] = opt_json(best_eval_acc);
  j["zero_gradient_batches"] = zero_gradient_batches;
  j["skipped_no_feedback"] = skipped_no_feedback;
  j["skipped_estep"] = skipped_estep;
  j["wall_ms"] = wall_ms;
  return j.dump(2);
}

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg), env_(cfg.env()) {
  cfg_.validate();
  const int response_len = env_.response_len;
  const int max_len = cfg_.max_len != 0 ? cfg_.max_len : response_len;
  policy_ = cfg_.policy_kind == ParamKind::Tabular
                ? Policy::tabular(env_.vocab, GenMask::Ordinary, max_len)
                : Policy::linear(env_.vocab, GenMask::Ordinary, max_len);

  if (cfg_.policy_init == PolicyInit::Adversarial) {
    // Pin every prompt's generation path to a deterministically wrong token
    // at each position, so every rollout group starts all-fail.
    std::vector<int> x(env_.prompt_len, 0);
    std::function<void(int)> walk = [&](int pos) {
      if (pos == env_.prompt_len) {
        auto want = target(env_, x);
        Context c = Context::student(x);
        for (int t = 0; t < response_len; ++t) {
          int wrong = (want[t] + 1) % env_.vocab.ordinary;
          std::vector<double> logits(policy_.vocab.total(), 0.0);
          logits[wrong] = cfg_.adversarial_logit;
          policy_.params.table[c.serialize(policy_.vocab)] = logits;
          c.prefix.push_back(wrong);
        }
        return;
      }
      for (int v = 0; v < env_.vocab.ordinary; ++v) {
        x[pos] = v;
        walk(pos + 1);
      }
    };
    walk(0);
  }

  ref_params_ = policy_.params;
  sdpo_teacher_ = policy_.params;
  velocity_.kind = policy_.params.kind;
  estep_state_.delta_rule = cfg_.delta_rule;
  estep_state_.ema_rate = cfg_.delta_ema_rate;
  estep_state_.beta = cfg_.beta;
  estep_state_.prior_mode = cfg_.prior_mode;
  summary_.method = to_string(cfg_.method);

  Rng root(cfg_.seed);
  for (int i = 0; i < cfg_.eval_prompts; ++i) {
    Rng r = root.derive({0x6576616cULL /*eval*/, static_cast<std::uint64_t>(i)});
    eval_prompts_.push_back(sample_prompt(env_, r));
  }
}

std::vector<Trainer::Group> Trainer::rollout_batch(int batch_index) {
  std::vector<Group> groups;
  Rng root(cfg_.seed);
  const int T = env_.response_len;
  for (int p = 0; p < cfg_.prompts_per_batch; ++p) {
    Group g;
    Rng pr = root.derive({0x70726d70ULL /*prmp*/, static_cast<std::uint64_t>(batch_index),
                          static_cast<std::uint64_t>(p)});
    g.prompt = sample_prompt(env_, pr);
    Context ctx = Context::student(g.prompt);
    for (int i = 0; i < cfg_.rollouts_per_prompt; ++i) {
      Rng rr = root.derive({0x726f6c6cULL /*roll*/, static_cast<std::uint64_t>(batch_index),
                            static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(i)});
      Trajectory traj = sample_trajectory(policy_, ctx, rr, T);
      traj.reward = verify(env_, g.prompt, traj.response).reward;
      traj.group_id = p;
      traj.rollout_index = i;
      g.trajectories.push_back(std::move(traj));
    }
    for (int i = 0; i < cfg_.rollouts_per_prompt; ++i)
      g.feedback.push_back(make_feedback(env_, cfg_.feedback_mode, g.prompt, static_cast<std::size_t>(i),
                                         std::span<const Trajectory>(g.trajectories)));
    groups.push_back(std::move(g));
  }
  return groups;
}

void Trainer::descend(const GradientRecord& grad, double lr) {
  if (grad.is_zero()) return;  // empty updates must not churn parameter bits
  if (cfg_.momentum > 0.0) {
    velocity_.scale(cfg_.momentum);
    velocity_.add_scaled(grad, 1.0);
    apply_gradient(policy_.params, velocity_, -lr);
  } else {
    apply_gradient(policy_.params, grad, -lr);
  }
}

Policy Trainer::teacher_view() const {
  Policy t = policy_;
  t.params = sdpo_teacher_;
  return t;
}

EStepBatch Trainer::build_estep_batch(const std::vector<Group>& groups) const {
  EStepBatch batch;
  Policy ref_view = policy_;
  ref_view.params = ref_params_;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
      if (g.feedback[i].mode == FeedbackMode::None) continue;
      const Trajectory& traj = g.trajectories[i];
      EStepItem item;
      item.traj = &traj;
      item.fb = g.feedback[i];
      Context sc = Context::student(traj.prompt);
      item.frozen_logprob = cfg_.prior_mode == PriorMode::DynamicStudent
                                ? sequence_logprob(policy_, sc, traj.response)
                                : sequence_logprob(ref_view, sc, traj.response);
      (traj.reward == 1 ? batch.positives : batch.negatives).push_back(std::move(item));
    }
  }
  return batch;
}

void Trainer::oracle_metrics(const std::vector<Group>& groups, MetricsRecord& rec) const {
  std::size_t space = DistTable::space_size(env_.vocab.ordinary, env_.response_len);
  if (space > cfg_.enum_cap) return;
  Policy ref_view = policy_;
  ref_view.params = ref_params_;
  double j_sum = 0.0, f_sum = 0.0;
  for (const auto& g : groups) {
    Context sc = Context::student(g.prompt);
    auto rewards = reward_table(env_, g.prompt);
    DistTable ref_dist = enumerate_dist(ref_view, sc, env_.vocab.ordinary, env_.response_len, cfg_.enum_cap);
    DistTable cur = enumerate_dist(policy_, sc, env_.vocab.ordinary, env_.response_len, cfg_.enum_cap);
    j_sum += exact_objective(cur, ref_dist, rewards, cfg_.beta);
    // ELBO of the canonical "passed"-diagnostic teacher posterior.
    Context tc = Context::teacher({env_.vocab.id(TokenRole::Err)}, g.prompt);
    DistTable teacher = enumerate_dist(policy_, tc, env_.vocab.ordinary, env_.response_len, cfg_.enum_cap);
    f_sum += elbo(teacher, ref_dist, rewards, cfg_.beta);
  }
  rec.exact_j = j_sum / static_cast<double>(groups.size());
  rec.elbo = f_sum / static_cast<double>(groups.size());
}

MetricsRecord Trainer::run_batch() {
  const int batch_index = ++batch_index_;
  MetricsRecord rec;
  rec.batch = batch_index;
  rec.method = to_string(cfg_.method);

  auto groups = rollout_batch(batch_index);

  int total = 0, wins = 0;
  for (const auto& g : groups)
    for (const auto& t : g.trajectories) {
      ++total;
      wins += t.reward;
    }
  rec.train_acc = static_cast<double>(wins) / static_cast<double>(total);

  for (const auto& g : groups)
    for (const auto& fb : g.feedback)
      if (fb.mode == FeedbackMode::None && cfg_.feedback_mode != FeedbackMode::None) ++rec.skipped_no_feedback;

  // --- E-step (VPD only, every F-th rollout batch, same batch reused) ---
  if (cfg_.method == Method::Vpd && batch_index % cfg_.estep_frequency == 0) {
    EStepBatch ebatch = build_estep_batch(groups);
    if (ebatch.degenerate()) {
      ++rec.skipped_estep;
    } else {
      estep_state_.delta = reward_shift(ebatch, policy_, estep_state_);
      rec.delta = estep_state_.delta;
      auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
      };
      rec.estep_pos_mean = mean_of(implicit_rewards(policy_, ebatch.positives, cfg_.beta));
      rec.estep_neg_mean = mean_of(implicit_rewards(policy_, ebatch.negatives, cfg_.beta));
      double last_loss = 0.0;
      for (int s = 0; s < cfg_.estep_steps; ++s) {
        LossResult r = bco_loss(ebatch, policy_, estep_state_);
        descend(r.grad, cfg_.estep_lr);
        last_loss = r.loss;
      }
      rec.estep_loss = last_loss;
      rec.estep_ran = true;
    }
  }

  // --- M-step / baseline update ---
  GradientRecord update;
  update.kind = policy_.params.kind;
  DistillConfig dcfg{cfg_.divergence, cfg_.token_reduction};

  auto batch_advantages = [&](const Group& g) {
    std::vector<int> rewards;
    for (const auto& t : g.trajectories) rewards.push_back(t.reward);
    return grpo_advantages(rewards);
  };

  switch (cfg_.method) {
    case Method::Vpd:
    case Method::Sdpo: {
      Policy snapshot = teacher_view();
      const Policy& teacher = cfg_.method == Method::Vpd ? policy_ : snapshot;
      double loss_sum = 0.0, tk_sum = 0.0;
      int used = 0;
      for (const auto& g : groups)
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
          if (g.feedback[i].mode == FeedbackMode::None) continue;
          LossResult r = distill_loss(policy_, teacher, g.trajectories[i], g.feedback[i], dcfg);
          update.add_scaled(r.grad, 1.0);
          loss_sum += r.loss;
          tk_sum += cfg_.token_reduction == TokenReduction::Mean
                        ? r.loss
                        : r.loss / static_cast<double>(g.trajectories[i].response.size());
          ++used;
        }
      if (used > 0) {
        update.scale(1.0 / used);
        rec.distill_loss = loss_sum / used;
        rec.token_kl = tk_sum / used;
      }
      break;
    }
    case Method::Grpo: {
      std::vector<const Trajectory*> flat;
      std::vector<double> adv;
      for (const auto& g : groups) {
        auto a = batch_advantages(g);
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
          flat.push_back(&g.trajectories[i]);
          adv.push_back(a[i]);
        }
      }
      LossResult r = grpo_loss(policy_, flat, adv, cfg_.hybrid.ppo_clip);
      update = std::move(r.grad);
      break;
    }
    case Method::HybridJoint: {
      Policy teacher = teacher_view();
      GradientRecord g_opd;
      g_opd.kind = policy_.params.kind;
      double loss_sum = 0.0;
      int used = 0;
      std::vector<const Trajectory*> flat;
      std::vector<double> adv;
      for (const auto& g : groups) {
        auto a = batch_advantages(g);
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
          flat.push_back(&g.trajectories[i]);
          adv.push_back(a[i]);
          if (g.feedback[i].mode == FeedbackMode::None) continue;
          LossResult r = sdpo_loss(policy_, teacher, g.trajectories[i], g.feedback[i], dcfg);
          g_opd.add_scaled(r.grad, 1.0);
          loss_sum += r.loss;
          ++used;
        }
      }
      if (used > 0) {
        g_opd.scale(1.0 / used);
        rec.distill_loss = loss_sum / used;
      }
      LossResult rl = grpo_loss(policy_, flat, adv, cfg_.hybrid.ppo_clip);
      update.add_scaled(g_opd, cfg_.hybrid.omega_opd);
      update.add_scaled(rl.grad, cfg_.hybrid.omega_rl);
      break;
    }
    case Method::HybridReshape:
    case Method::HybridReweight: {
      Policy teacher = teacher_view();
      std::vector<const Trajectory*> flat;
      std::vector<std::vector<double>> adv;
      double alpha = cfg_.hybrid.alpha_at(batch_index - 1);
      std::vector<std::vector<double>> deltas;
      std::vector<double> seq_adv;
      for (const auto& g : groups) {
        auto a = batch_advantages(g);
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
          const auto& traj = g.trajectories[i];
          std::vector<double> d(traj.response.size(), 0.0);
          if (g.feedback[i].mode != FeedbackMode::None)
            d = sdpo_token_advantage(policy_, teacher, traj, g.feedback[i]);
          flat.push_back(&traj);
          deltas.push_back(std::move(d));
          seq_adv.push_back(a[i]);
        }
      }
      if (cfg_.hybrid.standardize_token_adv) {
        double m = 0.0;
        long n = 0;
        for (const auto& d : deltas)
          for (double x : d) {
            m += x;
            ++n;
          }
        m /= std::max<long>(1, n);
        double var = 0.0;
        for (const auto& d : deltas)
          for (double x : d) var += (x - m) * (x - m);
        double sd = std::sqrt(var / std::max<long>(1, n));
        for (auto& d : deltas)
          for (double& x : d) x = (x - m) / (sd + 1e-6);
      }
      for (std::size_t i = 0; i < flat.size(); ++i) {
        std::vector<double> a_t(flat[i]->response.size());
        for (std::size_t t = 0; t < a_t.size(); ++t)
          a_t[t] = cfg_.method == Method::HybridReshape
                       ? reshape_advantage(seq_adv[i], deltas[i][t], cfg_.hybrid)
                       : reweight_advantage(seq_adv[i], deltas[i][t], alpha, cfg_.hybrid.reweight_clip);
        adv.push_back(std::move(a_t));
      }
      LossResult r = clipped_surrogate_loss(policy_, flat, adv, cfg_.hybrid.ppo_clip);
      update = std::move(r.grad);
      break;
    }
  }

  rec.zero_gradient = update.is_zero();
  if (rec.zero_gradient) ++summary_.zero_gradient_batches;
  descend(update, cfg_.mstep_lr);

  // EMA teacher snapshot advances once per batch for snapshot-based methods.
  if (cfg_.method == Method::Sdpo || cfg_.method == Method::HybridJoint ||
      cfg_.method == Method::HybridReshape || cfg_.method == Method::HybridReweight)
    ema_update(sdpo_teacher_, policy_.params, cfg_.teacher_update_rate);

  // --- metrics ---
  if (cfg_.feedback_mode != FeedbackMode::None) {
    EStepBatch mbatch;
    Policy teacher = cfg_.method == Method::Vpd || cfg_.method == Method::Grpo ? policy_ : teacher_view();
    for (const auto& g : groups)
      for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
        if (g.feedback[i].mode == FeedbackMode::None) continue;
        EStepItem item;
        item.traj = &g.trajectories[i];
        item.fb = g.feedback[i];
        item.frozen_logprob = sequence_logprob(policy_, Context::student(g.prompt), g.trajectories[i].response);
        (g.trajectories[i].reward == 1 ? mbatch.positives : mbatch.negatives).push_back(std::move(item));
      }
    if (!mbatch.degenerate()) rec.reward_margin = reward_margin(mbatch, teacher, cfg_.beta);
  }

  {
    double drift = 0.0;
    long n = 0;
    for (const auto& g : groups)
      for (const auto& t : g.trajectories) {
        for (double r : importance_ratio(policy_, t)) {
          drift += std::log(r);
          ++n;
        }
      }
    rec.importance_drift = drift / static_cast<double>(n);
  }

  if (cfg_.oracle_checks) oracle_metrics(groups, rec);

  if (batch_index % cfg_.eval_every == 0 || batch_index == cfg_.total_batches) {
    double acc = evaluate();
    rec.eval_acc = acc;
    summary_.final_eval_acc = acc;
    if (!summary_.best_eval_acc || acc > *summary_.best_eval_acc) summary_.best_eval_acc = acc;
  }

  summary_.batches = batch_index;
  summary_.skipped_no_feedback += rec.skipped_no_feedback;
  summary_.skipped_estep += rec.skipped_estep;
  return rec;
}

double Trainer::evaluate() {
  const int T = env_.response_len;
  Rng root(cfg_.seed);
  double wins = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < eval_prompts_.size(); ++i) {
    Context ctx = Context::student(eval_prompts_[i]);
    if (cfg_.eval_decode == EvalDecode::Greedy) {
      auto y = greedy_decode(policy_, ctx, T);
      wins += verify(env_, eval_prompts_[i], y).reward;
      total += 1.0;
    } else {
      for (int t = 0; t < cfg_.eval_trials; ++t) {
        Rng r = root.derive({0x65767472ULL /*evtr*/, static_cast<std::uint64_t>(batch_index_),
                             static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(t)});
        Trajectory traj = sample_trajectory(policy_, ctx, r, T);
        wins += verify(env_, eval_prompts_[i], traj.response).reward;
        total += 1.0;
      }
    }
  }
  return wins / total;
}

// ---------------------------------------------------------------------------
// Checkpointing: everything batch-to-batch state lives in. RNG streams are
// derived from (seed, batch, ...) statelessly, so resume is exact.

namespace {

constexpr char kCkptMagic[8] = {'V', 'P', 'D', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& os, std::uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint truncated");
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return x;
}

void put_f64_bits(std::ostream& os, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, 8);
  put_u64(os, bits);
}

double get_f64_bits(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double x;
  std::memcpy(&x, &bits, 8);
  return x;
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint " + path);
  os.write(kCkptMagic, 8);
  put_u64(os, static_cast<std::uint64_t>(batch_index_));
  put_f64_bits(os, estep_state_.delta);
  put_u64(os, static_cast<std::uint64_t>(summary_.zero_gradient_batches));
  put_u64(os, static_cast<std::uint64_t>(summary_.skipped_no_feedback));
  put_u64(os, static_cast<std::uint64_t>(summary_.skipped_estep));
  put_f64_bits(os, summary_.final_eval_acc.value_or(std::nan("")));
  put_f64_bits(os, summary_.best_eval_acc.value_or(std::nan("")));
  save_policy(policy_, os);
  Policy wrap = policy_;
  wrap.params = ref_params_;
  save_policy(wrap, os);
  wrap.params = sdpo_teacher_;
  save_policy(wrap, os);
  wrap.params.kind = velocity_.kind;
  wrap.params.table = velocity_.table;
  wrap.params.weights = velocity_.weights;
  if (wrap.params.kind == ParamKind::LinearSoftmax && wrap.params.weights.empty())
    wrap.params.weights.assign(policy_.params.weights.size(), 0.0);
  save_policy(wrap, os);
}

void Trainer::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCkptMagic, 8) != 0) throw std::runtime_error("bad checkpoint magic");
  batch_index_ = static_cast<int>(get_u64(is));
  estep_state_.delta = get_f64_bits(is);
  summary_.zero_gradient_batches = static_cast<long>(get_u64(is));
  summary_.skipped_no_feedback = static_cast<long>(get_u64(is));
  summary_.skipped_estep = static_cast<long>(get_u64(is));
  double fe = get_f64_bits(is);
  double be = get_f64_bits(is);
  summary_.final_eval_acc = std::isnan(fe) ? std::nullopt : std::optional<double>(fe);
  summary_.best_eval_acc = std::isnan(be) ? std::nullopt : std::optional<double>(be);
  summary_.batches = batch_index_;
  policy_ = load_policy(is);
  ref_params_ = load_policy(is).params;
  sdpo_teacher_ = load_policy(is).params;
  Policy vel = load_policy(is);
  velocity_.kind = vel.params.kind;
  velocity_.table = std::move(vel.params.table);
  velocity_.weights = std::move(vel.params.weights);
}

// ---------------------------------------------------------------------------

std::vector<double> em_monotonicity_run(const EnvSpec& env, const std::vector<int>& x, double beta,
                                        const MonotonicityOptions& opts) {
  env.validate();
  const int V = env.vocab.ordinary;
  const int T = env.response_len;
  if (DistTable::space_size(V, T) > kDefaultEnumCap)
    throw std::runtime_error("enumeration space exceeds the cap");

  Policy policy = Policy::tabular(env.vocab, GenMask::Ordinary, T);
  Context s_ctx = Context::student(x);
  Context t_ctx = Context::teacher({env.vocab.id(TokenRole::Err)}, x);  // fixed feedback per prompt

  std::vector<double> rewards = opts.reward_override ? *opts.reward_override : reward_table(env, x);
  DistTable ref_dist = enumerate_dist(policy, s_ctx, V, T);

  // Exact on-policy distillation objective: prefix-weighted token KL against
  // the teacher context, with the weights treated as constants.
  auto eval_distill = [&](bool want_grad, GradientRecord* grad) {
    double loss = 0.0;
    if (want_grad) {
      grad->table.clear();
      grad->weights.clear();
      grad->kind = ParamKind::Tabular;
    }
    std::vector<int> prefix;
    std::function<void(double)> rec = [&](double w) {
      if (static_cast<int>(prefix.size()) == T) return;
      Context sc = s_ctx.with_prefix(prefix);
      Context tc = t_ctx.with_prefix(prefix);
      auto s = next_token_dist(policy, sc);
      auto q = next_token_dist(policy, tc);
      double kl = token_divergence(s, q, Divergence::ReverseKl);
      loss += w * kl;
      if (want_grad) {
        auto key = sc.serialize(policy.vocab);
        auto& gl = grad->table[key];
        if (gl.empty()) gl.assign(policy.vocab.total(), 0.0);
        for (int k = 0; k < policy.vocab.total(); ++k)
          if (s[k] > 0.0) gl[k] += w * s[k] * (std::log(s[k] / q[k]) - kl);
      }
      for (int t = 0; t < V; ++t) {
        prefix.push_back(t);
        rec(w * s[t]);
        prefix.pop_back();
      }
    };
    rec(1.0);
    return loss;
  };

  std::vector<double> j_values;
  for (int cycle = 0; cycle < opts.cycles; ++cycle) {
    DistTable student = enumerate_dist(policy, s_ctx, V, T);
    DistTable q = analytic_estep(student, rewards, beta);
    write_dist_to_tabular(policy, t_ctx, q);

    // M-step: plain gradient descent with backtracking, stopped on a
    // loss-change threshold.
    GradientRecord grad;
    double prev = eval_distill(false, nullptr);
    for (int it = 0; it < opts.max_iters; ++it) {
      eval_distill(true, &grad);
      double step = opts.mstep_lr;
      double next = prev;
      for (int tries = 0; tries < 40; ++tries) {
        apply_gradient(policy.params, grad, -step);
        next = eval_distill(false, nullptr);
        if (next <= prev) break;
        apply_gradient(policy.params, grad, step);  // revert and halve
        step *= 0.5;
        next = prev;
      }
      if (prev - next < opts.loss_change_tol) {
        prev = next;
        break;
      }
      prev = next;
    }

    DistTable after = enumerate_dist(policy, s_ctx, V, T);
    j_values.push_back(exact_objective(after, ref_dist, rewards, beta));
  }
  return j_values;
}

}  // namespace vpd
