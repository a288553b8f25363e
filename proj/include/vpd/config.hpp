#ifndef VPD_CONFIG_HPP
#define VPD_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

#include "vpd/baselines.hpp"
#include "vpd/env.hpp"
#include "vpd/estep.hpp"
#include "vpd/mstep.hpp"

namespace vpd {

enum class Method { Grpo, Sdpo, Vpd, HybridJoint, HybridReshape, HybridReweight };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

enum class PolicyInit { Uniform, Adversarial };
enum class EvalDecode { Greedy, Sampled };

// Everything a run needs. Defaults follow the experiment tables where the
// source names a value (beta 0.1 is still required explicitly in files).
struct TrainConfig {
  Method method = Method::Vpd;
  std::uint64_t seed = 0;

  EnvFamily env_family = EnvFamily::KeyedCopy;
  int vocab_size = 4;
  int prompt_len = 2;
  int response_len = 0;  // 0 -> family default (prompt_len / 1)
  std::uint64_t transform_key = 0;

  ParamKind policy_kind = ParamKind::Tabular;
  PolicyInit policy_init = PolicyInit::Uniform;
  double adversarial_logit = 50.0;

  double beta = 0.0;  // required
  int rollouts_per_prompt = 8;
  int prompts_per_batch = 4;
  int total_batches = 100;
  int estep_frequency = 5;
  int estep_steps = 1;
  double estep_lr = 0.5;
  double mstep_lr = 0.5;
  double momentum = 0.0;
  FeedbackMode feedback_mode = FeedbackMode::EnvDiagnostic;
  PriorMode prior_mode = PriorMode::DynamicStudent;
  Divergence divergence = Divergence::ReverseKl;
  TokenReduction token_reduction = TokenReduction::Mean;
  DeltaRule delta_rule = DeltaRule::BatchMean;
  double delta_ema_rate = 0.1;
  double teacher_update_rate = 0.05;
  int eval_every = 10;
  int eval_prompts = 16;
  EvalDecode eval_decode = EvalDecode::Greedy;
  int eval_trials = 4;
  int checkpoint_every = 0;  // 0 = disabled
  bool oracle_checks = false;
  int max_len = 0;  // 0 -> response_len

  HybridConfig hybrid;
  std::size_t enum_cap = kDefaultEnumCap;

  EnvSpec env() const;
  void validate() const;
};

// `key = value` lines with dotted nesting; '#' starts a comment. Unknown
// keys are errors. Raised errors name the offending key.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config_file(const std::string& path);

// Applies `key=value` overrides on top of a parsed config.
void apply_override(TrainConfig& cfg, const std::string& assignment);

// Canonical serialization: every key materialized with its resolved value.
// Parsing the output reproduces the config exactly.
std::string serialize_config(const TrainConfig& cfg);

}  // namespace vpd

#endif
