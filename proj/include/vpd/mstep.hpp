#ifndef VPD_MSTEP_HPP
#define VPD_MSTEP_HPP

#include <string>
#include <vector>

#include "vpd/env.hpp"
#include "vpd/estep.hpp"
#include "vpd/policy.hpp"

namespace vpd {

enum class Divergence { ReverseKl, ForwardKl, Js };
enum class TokenReduction { Mean, Sum };

Divergence divergence_from_string(const std::string& s);
std::string to_string(Divergence d);

struct DistillConfig {
  Divergence divergence = Divergence::ReverseKl;
  TokenReduction reduction = TokenReduction::Mean;
};

// Per-token divergence between two normalized distributions.
//   reverse-kl: KL(student || teacher)
//   forward-kl: KL(teacher || student)
//   js:         0.5 KL(student || m) + 0.5 KL(teacher || m), m the average
double token_divergence(const std::vector<double>& student, const std::vector<double>& teacher, Divergence kind);

// Token-level distillation of the feedback-conditioned teacher into the
// unconditioned student over the trajectory's own prefixes. The teacher side
// is a constant (stop-gradient); only student-context evaluations carry
// gradient. `teacher` may alias `student` (shared weights) or be a snapshot.
LossResult distill_loss(const Policy& student, const Policy& teacher, const Trajectory& traj,
                        const FeedbackRecord& fb, const DistillConfig& cfg);

// Per-token exp(current logprob - generation-time logprob); drift diagnostic
// only, never applied to gradients.
std::vector<double> importance_ratio(const Policy& current, const Trajectory& traj);

}  // namespace vpd

#endif
