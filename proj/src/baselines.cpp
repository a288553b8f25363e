#include "vpd/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vpd {

AlphaSchedule alpha_schedule_from_string(const std::string& s) {
  if (s == "constant") return AlphaSchedule::Constant;
  if (s == "linear-decay-to-zero") return AlphaSchedule::LinearDecayToZero;
  throw std::invalid_argument("unknown alpha schedule: " + s);
}

std::string to_string(AlphaSchedule s) {
  return s == AlphaSchedule::Constant ? "constant" : "linear-decay-to-zero";
}

void HybridConfig::validate() const {
  if (ppo_clip <= 0.0 || ppo_clip >= 1.0) throw std::invalid_argument("hybrid.ppo_clip must lie in (0,1)");
  if (reweight_clip <= 0.0 || reweight_clip >= 1.0)
    throw std::invalid_argument("hybrid.reweight_clip must lie in (0,1)");
  if (alpha_start < 0.0 || alpha_start > 1.0) throw std::invalid_argument("hybrid.alpha_start must lie in [0,1]");
  if (total_steps_for_decay < 1) throw std::invalid_argument("hybrid.total_steps_for_decay must be >= 1");
}

double HybridConfig::alpha_at(int step) const {
  if (alpha_schedule == AlphaSchedule::Constant) return alpha_start;
  if (step >= total_steps_for_decay) return 0.0;
  return alpha_start * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps_for_decay));
}

std::vector<double> grpo_advantages(const std::vector<int>& rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("GRPO group needs at least 2 rollouts");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (int r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (int r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  double std = std::sqrt(var);
  std::vector<double> a(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) a[i] = (rewards[i] - mean) / (std + 1e-6);
  return a;
}

LossResult clipped_surrogate_loss(const Policy& policy, const std::vector<const Trajectory*>& batch,
                                  const std::vector<std::vector<double>>& advantages, double clip_eps) {
  if (batch.size() != advantages.size()) throw std::invalid_argument("batch/advantage size mismatch");
  LossResult out;
  out.grad.kind = policy.params.kind;
  if (batch.empty()) return out;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Trajectory& traj = *batch[i];
    const auto& adv = advantages[i];
    if (adv.size() != traj.response.size()) throw std::invalid_argument("per-token advantage length mismatch");
    Context ctx = Context::student(traj.prompt);
    auto now = step_logprobs(policy, ctx, traj.response);
    const double inv_t = 1.0 / static_cast<double>(traj.response.size());

    std::vector<std::vector<double>> glogits(traj.response.size());
    Context c = ctx;
    double surrogate = 0.0;
    for (std::size_t t = 0; t < traj.response.size(); ++t) {
      double rho = std::exp(now[t] - traj.token_logprobs[t]);
      double a = adv[t];
      double unclipped = rho * a;
      double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps) * a;
      double m = std::min(unclipped, clipped);
      surrogate += m;

      std::vector<double> gl;
      if (unclipped <= clipped && a != 0.0) {
        // active branch: d(rho*a)/d logits = a * rho * d log pi / d logits
        auto probs = next_token_dist(policy, c);
        gl.assign(probs.size(), 0.0);
        double coef = -inv_b * inv_t * a * rho;  // minus: loss = -surrogate
        for (std::size_t v = 0; v < probs.size(); ++v)
          if (probs[v] > 0.0) gl[v] = coef * (-probs[v]);
        gl[traj.response[t]] += coef;
      } else {
        gl.assign(policy.vocab.total(), 0.0);  // clip saturated: constant branch
      }
      glogits[t] = std::move(gl);
      c.prefix.push_back(traj.response[t]);
    }
    out.loss -= inv_b * inv_t * surrogate;
    GradientRecord g = logits_grad_to_params(policy, ctx, traj.response, glogits);
    out.grad.add_scaled(g, 1.0);
  }
  return out;
}

LossResult grpo_loss(const Policy& policy, const std::vector<const Trajectory*>& batch,
                     const std::vector<double>& advantages, double clip_eps) {
  std::vector<std::vector<double>> per_token(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    per_token[i].assign(batch[i]->response.size(), advantages[i]);
  return clipped_surrogate_loss(policy, batch, per_token, clip_eps);
}

LossResult sdpo_loss(const Policy& student, const Policy& teacher_snapshot, const Trajectory& traj,
                     const FeedbackRecord& fb, const DistillConfig& cfg) {
  return distill_loss(student, teacher_snapshot, traj, fb, cfg);
}

std::vector<double> sdpo_token_advantage(const Policy& student, const Policy& teacher, const Trajectory& traj,
                                         const FeedbackRecord& fb) {
  if (fb.mode == FeedbackMode::None) throw std::invalid_argument("token advantage needs feedback");
  Context s_ctx = Context::student(traj.prompt);
  Context t_ctx = Context::teacher(fb.tokens, traj.prompt);
  auto s = step_logprobs(student, s_ctx, traj.response);
  auto q = step_logprobs(teacher, t_ctx, traj.response);
  std::vector<double> out(s.size());
  for (std::size_t t = 0; t < s.size(); ++t) out[t] = q[t] - s[t];
  return out;
}

double reshape_advantage(double a_grpo, double a_sdpo_t, const HybridConfig& cfg) {
  return cfg.omega_rl * a_grpo + cfg.omega_opd * a_sdpo_t;
}

double reweight_advantage(double a_grpo, double delta_t, double alpha, double eps_w) {
  if (eps_w <= 0.0 || eps_w >= 1.0) throw std::invalid_argument("eps_w must lie in (0,1)");
  double sign = a_grpo > 0.0 ? 1.0 : a_grpo < 0.0 ? -1.0 : 0.0;
  double w = std::exp(sign * delta_t);
  double mixed = (1.0 - alpha) + alpha * std::clamp(w, 1.0 - eps_w, 1.0 + eps_w);
  return a_grpo * mixed;
}

}  // namespace vpd
