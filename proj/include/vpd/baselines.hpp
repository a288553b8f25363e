#ifndef VPD_BASELINES_HPP
#define VPD_BASELINES_HPP

#include <string>
#include <vector>

#include "vpd/mstep.hpp"
#include "vpd/policy.hpp"

namespace vpd {

enum class AlphaSchedule { Constant, LinearDecayToZero };

AlphaSchedule alpha_schedule_from_string(const std::string& s);
std::string to_string(AlphaSchedule s);

struct HybridConfig {
  double omega_rl = 0.5;
  double omega_opd = 0.5;
  double ppo_clip = 0.2;       // epsilon
  double reweight_clip = 0.2;  // epsilon_w
  double alpha_start = 1.0;
  AlphaSchedule alpha_schedule = AlphaSchedule::LinearDecayToZero;
  int total_steps_for_decay = 100;
  bool standardize_token_adv = false;

  void validate() const;
  double alpha_at(int step) const;
};

// Group-normalized advantages: A_i = (r_i - mean) / (std + 1e-6), population
// std. All-equal groups collapse to exact zeros.
std::vector<double> grpo_advantages(const std::vector<int>& rewards);

// Clipped surrogate over one batch. `advantages[i]` holds per-token
// advantages for trajectory i (GRPO broadcasts the sequence advantage).
// loss = -mean_i mean_t min(rho_t A_t, clip(rho_t, 1-eps, 1+eps) A_t);
// rho_t is exp(current logprob - generation-time logprob).
LossResult clipped_surrogate_loss(const Policy& policy, const std::vector<const Trajectory*>& batch,
                                  const std::vector<std::vector<double>>& advantages, double clip_eps);

// GRPO: sequence advantage broadcast to every token.
LossResult grpo_loss(const Policy& policy, const std::vector<const Trajectory*>& batch,
                     const std::vector<double>& advantages, double clip_eps);

// SDPO: identical computation to the M-step distillation but with the
// teacher read from an EMA snapshot; no E-step ever runs.
LossResult sdpo_loss(const Policy& student, const Policy& teacher_snapshot, const Trajectory& traj,
                     const FeedbackRecord& fb, const DistillConfig& cfg);

// Per-token stop-gradient log-ratio log q(y_t|x,C,y_<t) - log pi(y_t|x,y_<t).
std::vector<double> sdpo_token_advantage(const Policy& student, const Policy& teacher, const Trajectory& traj,
                                         const FeedbackRecord& fb);

// A_t = omega_rl * A_grpo + omega_opd * A_sdpo_t.
double reshape_advantage(double a_grpo, double a_sdpo_t, const HybridConfig& cfg);

// w = exp(sign(A) * delta_t); A * ((1-alpha) + alpha * clip(w, 1-eps_w, 1+eps_w)).
// sign(0) := 0, so a zero group advantage stays exactly zero.
double reweight_advantage(double a_grpo, double delta_t, double alpha, double eps_w);

}  // namespace vpd

#endif
