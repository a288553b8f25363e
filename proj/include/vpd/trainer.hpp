#ifndef VPD_TRAINER_HPP
#define VPD_TRAINER_HPP

#include <optional>
#include <string>
#include <vector>

#include "vpd/config.hpp"
#include "vpd/env.hpp"
#include "vpd/estep.hpp"
#include "vpd/mstep.hpp"
#include "vpd/oracle.hpp"
#include "vpd/policy.hpp"

namespace vpd {

// One line of the metrics stream. Fields a method does not produce are
// null. Timing never enters the stream so replayed runs are byte-identical;
// wall-clock lives in the run summary.
struct MetricsRecord {
  int batch = 0;
  std::string method;
  double train_acc = 0.0;
  std::optional<double> eval_acc;
  std::optional<double> reward_margin;
  std::optional<double> distill_loss;
  std::optional<double> token_kl;  // mean per-token divergence, independent of the reduction
  std::optional<double> estep_loss;
  std::optional<double> estep_pos_mean;  // class means of the implicit rewards
  std::optional<double> estep_neg_mean;
  std::optional<double> delta;
  std::optional<double> exact_j;
  std::optional<double> elbo;
  std::optional<double> importance_drift;  // mean per-token log-ratio, diagnostic only
  bool estep_ran = false;
  bool zero_gradient = false;
  int skipped_no_feedback = 0;
  int skipped_estep = 0;

  std::string to_json_line() const;
};

struct RunSummary {
  std::string method;
  int batches = 0;
  std::optional<double> final_eval_acc;
  std::optional<double> best_eval_acc;
  long zero_gradient_batches = 0;
  long skipped_no_feedback = 0;
  long skipped_estep = 0;
  double wall_ms = 0.0;

  std::string to_json() const;
};

// Drives Algorithm-1 style batches: rollout, critique, E-step on schedule,
// M-step (or the selected baseline's update), one metrics record per batch.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  MetricsRecord run_batch();

  // Fraction of eval prompts whose decode earns reward 1.
  double evaluate();

  int batches_done() const { return batch_index_; }
  const TrainConfig& config() const { return cfg_; }
  const Policy& policy() const { return policy_; }
  Policy& mutable_policy() { return policy_; }
  const PolicyParams& reference_params() const { return ref_params_; }
  const EnvSpec& env() const { return env_; }

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  RunSummary summary() const { return summary_; }
  void add_wall_ms(double ms) { summary_.wall_ms += ms; }

 private:
  struct Group {
    std::vector<int> prompt;
    std::vector<Trajectory> trajectories;
    std::vector<FeedbackRecord> feedback;
  };

  std::vector<Group> rollout_batch(int batch_index);
  void descend(const GradientRecord& grad, double lr);
  Policy teacher_view() const;  // snapshot-backed policy for sdpo/hybrids
  EStepBatch build_estep_batch(const std::vector<Group>& groups) const;
  void oracle_metrics(const std::vector<Group>& groups, MetricsRecord& rec) const;

  TrainConfig cfg_;
  EnvSpec env_;
  Policy policy_;
  PolicyParams ref_params_;     // immutable snapshot at initialization
  PolicyParams sdpo_teacher_;   // EMA snapshot for sdpo / hybrids
  GradientRecord velocity_;
  EStepState estep_state_;
  int batch_index_ = 0;
  RunSummary summary_;
  std::vector<std::vector<int>> eval_prompts_;
};

// Alternates the exact analytic E-step with an M-step run to a loss-change
// threshold, on one prompt with a fixed feedback context; returns the exact
// RLVR objective of the student after each EM cycle.
struct MonotonicityOptions {
  int cycles = 20;
  double mstep_lr = 0.5;
  double loss_change_tol = 1e-8;
  int max_iters = 200000;
  const std::vector<double>* reward_override = nullptr;
};

std::vector<double> em_monotonicity_run(const EnvSpec& env, const std::vector<int>& x, double beta,
                                        const MonotonicityOptions& opts);

}  // namespace vpd

#endif
