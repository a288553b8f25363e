#include "vpd/estep.hpp"

#include <cmath>
#include <stdexcept>

namespace vpd {

DeltaRule delta_rule_from_string(const std::string& s) {
  if (s == "batch-mean") return DeltaRule::BatchMean;
  if (s == "ema") return DeltaRule::Ema;
  throw std::invalid_argument("unknown delta rule: " + s);
}

std::string to_string(DeltaRule r) { return r == DeltaRule::BatchMean ? "batch-mean" : "ema"; }

PriorMode prior_mode_from_string(const std::string& s) {
  if (s == "dynamic-student") return PriorMode::DynamicStudent;
  if (s == "fixed-reference") return PriorMode::FixedReference;
  throw std::invalid_argument("unknown prior mode: " + s);
}

std::string to_string(PriorMode m) {
  return m == PriorMode::DynamicStudent ? "dynamic-student" : "fixed-reference";
}

double neg_log_sigmoid(double x) {
  // -log sigmoid(x) = softplus(-x)
  double t = -x;
  return std::max(t, 0.0) + std::log1p(std::exp(-std::fabs(t)));
}

double dpo_pair_loss(double r_pos, double r_neg) { return neg_log_sigmoid(r_pos - r_neg); }

double implicit_reward(const Policy& policy, const Trajectory& traj, const FeedbackRecord& fb,
                       double frozen_logprob, double beta) {
  if (fb.mode == FeedbackMode::None) throw std::invalid_argument("implicit reward needs feedback");
  if (!std::isfinite(frozen_logprob)) throw std::invalid_argument("frozen log-likelihood must be finite");
  Context teacher = Context::teacher(fb.tokens, traj.prompt);
  double teacher_lp = sequence_logprob(policy, teacher, traj.response);
  return beta * (teacher_lp - frozen_logprob);
}

std::vector<double> implicit_rewards(const Policy& policy, const std::vector<EStepItem>& items, double beta) {
  std::vector<double> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(implicit_reward(policy, *it.traj, it.fb, it.frozen_logprob, beta));
  return out;
}

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double reward_shift(const EStepBatch& batch, const Policy& policy, const EStepState& state) {
  if (batch.degenerate()) throw std::runtime_error("degenerate E-step batch: a reward class is empty");
  double mid = 0.5 * (mean(implicit_rewards(policy, batch.positives, state.beta)) +
                      mean(implicit_rewards(policy, batch.negatives, state.beta)));
  if (state.delta_rule == DeltaRule::BatchMean) return mid;
  return (1.0 - state.ema_rate) * state.delta + state.ema_rate * mid;
}

LossResult bco_loss(const EStepBatch& batch, const Policy& policy, const EStepState& state) {
  if (batch.degenerate()) throw std::runtime_error("degenerate E-step batch: a reward class is empty");
  LossResult out;
  out.grad.kind = policy.params.kind;
  const double beta = state.beta;
  const double delta = state.delta;

  auto accumulate = [&](const std::vector<EStepItem>& items, bool positive) {
    const double inv_n = 1.0 / static_cast<double>(items.size());
    for (const auto& it : items) {
      Context teacher = Context::teacher(it.fb.tokens, it.traj->prompt);
      double teacher_lp = sequence_logprob(policy, teacher, it.traj->response);
      double z = beta * (teacher_lp - it.frozen_logprob) - delta;
      double sig = 1.0 / (1.0 + std::exp(-z));
      double coef;  // d loss / d teacher_lp, per item
      if (positive) {
        out.loss += inv_n * neg_log_sigmoid(z);
        coef = -(1.0 - sig) * beta * inv_n;
      } else {
        out.loss += inv_n * neg_log_sigmoid(-z);
        coef = sig * beta * inv_n;
      }
      GradientRecord g = logprob_grad(policy, teacher, it.traj->response);
      out.grad.add_scaled(g, coef);
    }
  };
  accumulate(batch.positives, true);
  accumulate(batch.negatives, false);
  return out;
}

DistTable analytic_estep(const DistTable& student_dist, const std::vector<double>& rewards, double beta) {
  return optimal_policy(student_dist, rewards, beta);
}

void write_dist_to_tabular(Policy& policy, const Context& ctx, const DistTable& dist) {
  if (policy.params.kind != ParamKind::Tabular)
    throw std::invalid_argument("analytic write-back needs a tabular policy");
  const int base = dist.base;
  const int total = policy.vocab.total();
  // Depth-first over prefixes: logits[v] = log p(v | prefix), exactly the
  // conditional of the table (non-generable entries stay at a floor).
  std::function<void(std::vector<int>&, std::size_t, std::size_t)> rec = [&](std::vector<int>& prefix,
                                                                             std::size_t lo, std::size_t hi) {
    if (static_cast<int>(prefix.size()) == dist.length) return;
    std::size_t stride = (hi - lo) / static_cast<std::size_t>(base);
    double total_mass = 0.0;
    std::vector<double> mass(base, 0.0);
    for (int t = 0; t < base; ++t) {
      double m = 0.0;
      for (std::size_t i = lo + t * stride; i < lo + (t + 1) * stride; ++i) m += dist.p[i];
      mass[t] = m;
      total_mass += m;
    }
    Context c = ctx.with_prefix(prefix);
    auto key = c.serialize(policy.vocab);
    std::vector<double> logits(total, -60.0);
    for (int t = 0; t < base; ++t) {
      double cond = mass[t] / total_mass;
      logits[t] = std::log(std::max(cond, 1e-300));
    }
    policy.params.table[key] = std::move(logits);
    for (int t = 0; t < base; ++t) {
      prefix.push_back(t);
      rec(prefix, lo + t * stride, lo + (t + 1) * stride);
      prefix.pop_back();
    }
  };
  std::vector<int> prefix;
  rec(prefix, 0, dist.size());
}

double reward_margin(const EStepBatch& batch, const Policy& policy, double beta) {
  if (batch.degenerate()) throw std::runtime_error("reward margin needs both classes");
  return mean(implicit_rewards(policy, batch.positives, beta)) -
         mean(implicit_rewards(policy, batch.negatives, beta));
}

}  // namespace vpd
