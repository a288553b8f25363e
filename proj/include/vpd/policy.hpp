#ifndef VPD_POLICY_HPP
#define VPD_POLICY_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vpd/context.hpp"
#include "vpd/rng.hpp"
#include "vpd/vocab.hpp"

namespace vpd {

enum class ParamKind { Tabular, LinearSoftmax };

// Which tokens the policy may emit. Fixed-length environment runs use
// Ordinary so the sequence space is exactly V^T; Full is the unmasked
// softmax over every token the vocabulary knows.
enum class GenMask { Full, Ordinary, OrdinaryPlusEos };

// Context featurization for the linear-softmax kind: one-hots of the last
// two serialized tokens plus a one-hot of the generation position capped at
// max_len. Logits are W * f with W of shape [vocab_total x dim].
struct FeatureSpec {
  int vocab_total = 0;
  int max_len = 0;

  int dim() const { return 2 * vocab_total + max_len + 1; }

  // Sparse featurization: indices of the (exactly three) active features.
  void active(const std::vector<int>& serialized, int prefix_len, int out[3]) const;
};

// Shared parameter store realizing both the student and the teacher; the two
// differ only through the context key / feature vector they are read with.
// Unseen tabular contexts read as all-zero logits (uniform distribution).
struct PolicyParams {
  ParamKind kind = ParamKind::Tabular;
  std::map<std::vector<int>, std::vector<double>> table;  // key -> logits[vocab_total]
  std::vector<double> weights;                            // row-major [vocab_total][feat_dim]
  int logit_dim = 0;
  int feat_dim = 0;

  bool same_shape(const PolicyParams& o) const;
  double max_abs_diff(const PolicyParams& o) const;
  bool operator==(const PolicyParams& o) const = default;
};

// Partial derivatives with the same shape as PolicyParams; absent entries
// are zero.
struct GradientRecord {
  ParamKind kind = ParamKind::Tabular;
  std::map<std::vector<int>, std::vector<double>> table;
  std::vector<double> weights;

  void add_scaled(const GradientRecord& o, double a);  // this += a*o
  void scale(double a);
  double max_abs() const;
  bool is_zero() const;
};

struct Trajectory {
  std::vector<int> prompt;
  std::vector<int> response;
  std::vector<double> token_logprobs;  // nats, under the generating parameters
  double total_logprob = 0.0;
  int reward = 0;
  int group_id = 0;
  int rollout_index = 0;
};

// Autoregressive categorical policy over the vocabulary.
struct Policy {
  Vocabulary vocab;
  GenMask mask = GenMask::Ordinary;
  int max_len = 8;  // position cap for the linear featurization
  PolicyParams params;

  static Policy tabular(Vocabulary v, GenMask m = GenMask::Ordinary, int max_len = 8);
  static Policy linear(Vocabulary v, GenMask m = GenMask::Ordinary, int max_len = 8);

  // Token indices the mask allows, ascending.
  std::vector<int> generable() const;
};

// pi(.|ctx): softmax of the context's logits restricted to the generable
// set; entries outside it are exactly zero. Sums to one within 1e-12.
std::vector<double> next_token_dist(const Policy& policy, const Context& ctx);

// log pi(y|ctx) = sum_t log pi(y_t | ctx, y_<t). Empty y -> 0.
double sequence_logprob(const Policy& policy, const Context& ctx, const std::vector<int>& y);

// Per-step log-probabilities of an existing response under `policy`.
std::vector<double> step_logprobs(const Policy& policy, const Context& ctx, const std::vector<int>& y);

// Draw a trajectory token by token. Stops at max_len, or at EOS when the
// mask allows EOS (the EOS token is kept in the response).
Trajectory sample_trajectory(const Policy& policy, const Context& ctx, Rng& rng, int max_len);

// Deterministic decode: argmax token each step (lowest index wins ties).
std::vector<int> greedy_decode(const Policy& policy, const Context& ctx, int len);

// Analytic d log pi(y|ctx) / d params. Tabular: one-hot minus softmax per
// visited key; linear: chain rule through the feature map.
GradientRecord logprob_grad(const Policy& policy, const Context& ctx, const std::vector<int>& y);

// Gradient of the per-step logits -> parameter-space record. `glogits[t]`
// holds d loss / d logit(v) at step t (zeros at non-generable entries).
GradientRecord logits_grad_to_params(const Policy& policy, const Context& ctx, const std::vector<int>& y,
                                     const std::vector<std::vector<double>>& glogits);

// target <- (1-rate)*target + rate*source, elementwise. rate 1 copies,
// rate 0 leaves target untouched. Shapes must match.
void ema_update(PolicyParams& target, const PolicyParams& source, double rate);

// params += scale * grad (materializing absent tabular keys).
void apply_gradient(PolicyParams& params, const GradientRecord& grad, double scale);

// Versioned binary snapshot (8-byte magic, vocabulary descriptor, raw IEEE
// bits); round-trips bit-exactly.
void save_policy(const Policy& policy, std::ostream& os);
Policy load_policy(std::istream& is);
void save_policy_file(const Policy& policy, const std::string& path);
Policy load_policy_file(const std::string& path);

}  // namespace vpd

#endif
