#ifndef VPD_ESTEP_HPP
#define VPD_ESTEP_HPP

#include <string>
#include <vector>

#include "vpd/env.hpp"
#include "vpd/oracle.hpp"
#include "vpd/policy.hpp"

namespace vpd {

enum class DeltaRule { BatchMean, Ema };
enum class PriorMode { DynamicStudent, FixedReference };

DeltaRule delta_rule_from_string(const std::string& s);
std::string to_string(DeltaRule r);
PriorMode prior_mode_from_string(const std::string& s);
std::string to_string(PriorMode m);

// One trajectory entering the E-step: its feedback and the log-likelihood of
// its response frozen before the step (current student under the dynamic
// prior, initial reference under the fixed one).
struct EStepItem {
  const Trajectory* traj = nullptr;
  FeedbackRecord fb;
  double frozen_logprob = 0.0;
};

// Success/failure partition of a rollout batch. Trajectories whose feedback
// mode is none never enter.
struct EStepBatch {
  std::vector<EStepItem> positives;
  std::vector<EStepItem> negatives;

  bool degenerate() const { return positives.empty() || negatives.empty(); }
};

struct EStepState {
  double delta = 0.0;
  DeltaRule delta_rule = DeltaRule::BatchMean;
  double ema_rate = 0.1;
  double beta = 0.1;
  PriorMode prior_mode = PriorMode::DynamicStudent;
};

// r~ = beta * (log q(y|x,C) - frozen log pi(y|x)). The intractable
// beta*log Z never appears; it cancels into the shift delta.
double implicit_reward(const Policy& policy, const Trajectory& traj, const FeedbackRecord& fb,
                       double frozen_logprob, double beta);

std::vector<double> implicit_rewards(const Policy& policy, const std::vector<EStepItem>& items, double beta);

// delta = midpoint of the two class means; the ema rule blends the previous
// delta toward the midpoint. Throws on a degenerate batch.
double reward_shift(const EStepBatch& batch, const Policy& policy, const EStepState& state);

struct LossResult {
  double loss = 0.0;
  GradientRecord grad;
};

// L = mean+ [-log sigmoid(r~ - delta)] + mean- [-log sigmoid(-(r~ - delta))].
// Gradient flows only through the teacher-context log-likelihoods; frozen
// terms and delta are constants.
LossResult bco_loss(const EStepBatch& batch, const Policy& policy, const EStepState& state);

// -log sigmoid(r_pos - r_neg): the paired DPO loss the BCO objective bounds.
double dpo_pair_loss(double r_pos, double r_neg);

// Numerically stable -log sigmoid(x).
double neg_log_sigmoid(double x);

// Exact dynamic-prior teacher: q*(y) = student(y) exp(r(y)/beta) / Z_dyn.
DistTable analytic_estep(const DistTable& student_dist, const std::vector<double>& rewards, double beta);

// Writes a distribution's autoregressive factorization into the tabular
// store under the given (teacher) context, so next_token_dist reproduces the
// table conditionals exactly.
void write_dist_to_tabular(Policy& policy, const Context& ctx, const DistTable& dist);

// Fig. 2 metric: mean positive implicit reward minus mean negative one.
double reward_margin(const EStepBatch& batch, const Policy& policy, double beta);

}  // namespace vpd

#endif
