#include "vpd/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace vpd {

Method method_from_string(const std::string& s) {
  if (s == "grpo") return Method::Grpo;
  if (s == "sdpo") return Method::Sdpo;
  if (s == "vpd") return Method::Vpd;
  if (s == "hybrid-joint") return Method::HybridJoint;
  if (s == "hybrid-reshape") return Method::HybridReshape;
  if (s == "hybrid-reweight") return Method::HybridReweight;
  throw ConfigError("unknown method: " + s);
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Grpo: return "grpo";
    case Method::Sdpo: return "sdpo";
    case Method::Vpd: return "vpd";
    case Method::HybridJoint: return "hybrid-joint";
    case Method::HybridReshape: return "hybrid-reshape";
    case Method::HybridReweight: return "hybrid-reweight";
  }
  return "?";
}

EnvSpec TrainConfig::env() const {
  EnvSpec e;
  e.family = env_family;
  e.vocab = standard_vocab(vocab_size);
  e.prompt_len = prompt_len;
  e.response_len = response_len != 0 ? response_len : (env_family == EnvFamily::ModSum ? 1 : prompt_len);
  e.transform_key = transform_key;
  return e;
}

void TrainConfig::validate() const {
  if (beta <= 0.0) throw ConfigError("config error: train.beta must be set to a positive value");
  if (rollouts_per_prompt < 2) throw ConfigError("config error: train.rollouts_per_prompt must be >= 2");
  if (prompts_per_batch < 1) throw ConfigError("config error: train.prompts_per_batch must be >= 1");
  if (total_batches < 1) throw ConfigError("config error: train.total_batches must be >= 1");
  if (estep_frequency < 1) throw ConfigError("config error: train.estep_frequency must be >= 1");
  if (estep_steps < 1) throw ConfigError("config error: train.estep_steps must be >= 1");
  if (estep_lr <= 0.0) throw ConfigError("config error: train.estep_lr must be positive");
  if (mstep_lr <= 0.0) throw ConfigError("config error: train.mstep_lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("config error: train.momentum must lie in [0,1)");
  if (delta_rule == DeltaRule::Ema && (delta_ema_rate <= 0.0 || delta_ema_rate > 1.0))
    throw ConfigError("config error: train.delta_ema_rate must lie in (0,1]");
  if (teacher_update_rate < 0.0 || teacher_update_rate > 1.0)
    throw ConfigError("config error: train.teacher_update_rate must lie in [0,1]");
  if (eval_every < 1) throw ConfigError("config error: train.eval_every must be >= 1");
  if (eval_prompts < 1) throw ConfigError("config error: train.eval_prompts must be >= 1");
  if (eval_trials < 1) throw ConfigError("config error: train.eval_trials must be >= 1");
  if (prompt_len < 1) throw ConfigError("config error: env.prompt_len must be >= 1");
  if (vocab_size < 2) throw ConfigError("config error: env.vocab_size must be >= 2");
  try {
    env().validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config error: ") + e.what());
  }
  if (oracle_checks) {
    std::size_t space = DistTable::space_size(env().vocab.ordinary, env().response_len);
    if (space > enum_cap)
      throw ConfigError("config error: train.oracle_checks needs an enumerable response space (" +
                        std::to_string(space) + " > oracle.enum_cap " + std::to_string(enum_cap) +
                        "); disable oracle checks explicitly for this environment");
  }
  hybrid.validate();
  if (policy_init == PolicyInit::Adversarial) {
    double space = std::pow(static_cast<double>(vocab_size), prompt_len);
    if (space > 4096.0)
      throw ConfigError("config error: policy.init=adversarial needs an enumerable prompt space (<= 4096)");
    if (policy_kind != ParamKind::Tabular)
      throw ConfigError("config error: policy.init=adversarial requires policy.kind=tabular");
  }
}

namespace {

struct KeyBinding {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (...) {
    throw ConfigError("config error: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (...) {
    throw ConfigError("config error: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config error: key '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_real(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

const std::vector<std::pair<std::string, KeyBinding>>& bindings() {
  static const std::vector<std::pair<std::string, KeyBinding>> b = {
      {"method",
       {[](TrainConfig& c, const std::string& v) { c.method = method_from_string(v); },
        [](const TrainConfig& c) { return to_string(c.method); }}},
      {"seed",
       {[](TrainConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(parse_int("seed", v)); },
        [](const TrainConfig& c) { return std::to_string(c.seed); }}},
      {"env.family",
       {[](TrainConfig& c, const std::string& v) { c.env_family = env_family_from_string(v); },
        [](const TrainConfig& c) { return to_string(c.env_family); }}},
      {"env.vocab_size",
       {[](TrainConfig& c, const std::string& v) { c.vocab_size = static_cast<int>(parse_int("env.vocab_size", v)); },
        [](const TrainConfig& c) { return std::to_string(c.vocab_size); }}},
      {"env.prompt_len",
       {[](TrainConfig& c, const std::string& v) { c.prompt_len = static_cast<int>(parse_int("env.prompt_len", v)); },
        [](const TrainConfig& c) { return std::to_string(c.prompt_len); }}},
      {"env.response_len",
       {[](TrainConfig& c, const std::string& v) {
          c.response_len = static_cast<int>(parse_int("env.response_len", v));
        },
        [](const TrainConfig& c) { return std::to_string(c.response_len); }}},
      {"env.transform_key",
       {[](TrainConfig& c, const std::string& v) {
          c.transform_key = static_cast<std::uint64_t>(parse_int("env.transform_key", v));
        },
        [](const TrainConfig& c) { return std::to_string(c.transform_key); }}},
      {"policy.kind",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "tabular")
            c.policy_kind = ParamKind::Tabular;
          else if (v == "linear-softmax")
            c.policy_kind = ParamKind::LinearSoftmax;
          else
            throw ConfigError("config error: policy.kind expects tabular|linear-softmax, got '" + v + "'");
        },
        [](const TrainConfig& c) {
          return c.policy_kind == ParamKind::Tabular ? std::string("tabular") : std::string("linear-softmax");
        }}},
      {"policy.init",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "uniform")
            c.policy_init = PolicyInit::Uniform;
          else if (v == "adversarial")
            c.policy_init = PolicyInit::Adversarial;
          else
            throw ConfigError("config error: policy.init expects uniform|adversarial, got '" + v + "'");
        },
        [](const TrainConfig& c) {
          return c.policy_init == PolicyInit::Uniform ? std::string("uniform") : std::string("adversarial");
        }}},
      {"policy.adversarial_logit",
       {[](TrainConfig& c, const std::string& v) { c.adversarial_logit = parse_real("policy.adversarial_logit", v); },
        [](const TrainConfig& c) { return fmt_real(c.adversarial_logit); }}},
      {"train.beta",
       {[](TrainConfig& c, const std::string& v) { c.beta = parse_real("train.beta", v); },
        [](const TrainConfig& c) { return fmt_real(c.beta); }}},
      {"train.rollouts_per_prompt",
       {[](TrainConfig& c, const std::string& v) {
          c.rollouts_per_prompt = static_cast<int>(parse_int("train.rollouts_per_prompt", v));
        },
        [](const TrainConfig& c) { return std::to_string(c.rollouts_per_prompt); }}},
      {"train.prompts_per_batch",
       {[](TrainConfig& c, const std::string& v) {
          c.prompts_per_batch = static_cast<int>(parse_int("train.prompts_per_batch", v));
        },
        [](const TrainConfig& c) { return std::to_string(c.prompts_per_batch); }}},
      {"train.total_batches",
       {[](TrainConfig& c, const std::string& v) {
          c.total_batches = static_cast<int>(parse_int("train.total_batches", v));
        },
        [](const TrainConfig& c) { return std::to_string(c.total_batches); }}},
      {"train.estep_frequency",
       {[](TrainConfig& c, const std::string& v) {
          c.estep_frequency = static_cast<int>(parse_int("train.estep_frequency", v));
        },
        [](const TrainConfig& c) { return std::to_string(c.estep_frequency); }}},
      {"train.estep_steps",
       {[](TrainConfig& c, const std::string& v) { c.estep_steps = static_cast<int>(parse_int("train.estep_steps", v)); },
        [](const TrainConfig& c) { return std::to_string(c.estep_steps); }}},
      {"train.estep_lr",
       {[](TrainConfig& c, const std::string& v) { c.estep_lr = parse_real("train.estep_lr", v); },
        [](const TrainConfig& c) { return fmt_real(c.estep_lr); }}},
      {"train.mstep_lr",
       {[](TrainConfig& c, const std::string& v) { c.mstep_lr = parse_real("train.mstep_lr", v); },
        [](const TrainConfig& c) { return fmt_real(c.mstep_lr); }}},
      {"train.momentum",
       {[](TrainConfig& c, const std::string& v) { c.momentum = parse_real("train.momentum", v); },
        [](const TrainConfig& c) { return fmt_real(c.momentum); }}},
      {"train.feedback_mode",
       {[](TrainConfig& c, const std::string& v) { c.feedback_mode = feedback_mode_from_string(v); },
        [](const TrainConfig& c) { return to_string(c.feedback_mode); }}},
      {"train.prior_mode",
       {[](TrainConfig& c, const std::string& v) { c.prior_mode = prior_mode_from_string(v); },
        [](const TrainConfig& c) { return to_string(c.prior_mode); }}},
      {"train.divergence",
       {[](TrainConfig& c, const std::string& v) { c.divergence = divergence_from_string(v); },
        [](const TrainConfig& c) { return to_string(c.divergence); }}},
      {"train.token_reduction",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "mean")
            c.token_reduction = TokenReduction::Mean;
          else if (v == "sum")
            c.token_reduction = TokenReduction::Sum;
          else
            throw ConfigError("config error: train.token_reduction expects mean|sum, got '" + v + "'");
        },
        [](const TrainConfig& c) {
          return c.token_reduction == TokenReduction::Mean ? std::string("mean") : std::string("sum");
        }}},
      {"train.delta_rule",
       {[](TrainConfig& c, const std::string& v) { c.delta_rule = delta_rule_from_string(v); },
        [](const TrainConfig& c) { return to_string(c.delta_rule); }}},
      {"train.delta_ema_rate",
       {[](TrainConfig& c, const std::string& v) { c.delta_ema_rate = parse_real("train.delta_ema_rate", v); },
        [](const TrainConfig& c) { return fmt_real(c.delta_ema_rate); }}},
      {"train.teacher_update_rate",
       {[](TrainConfig& c, const std::string& v) {
          c.teacher_update_rate = parse_real("train.teacher_update_rate", v);
        },
        [](const TrainConfig& c) { return fmt_real(c.teacher_update_rate); }}},
      {"train.eval_every",
       {[](TrainConfig& c, const std::string& v) { c.eval_every = static_cast<int>(parse_int("train.eval_every", v)); },
        [](const TrainConfig& c) { return std::to_string(c.eval_every); }}},
      {"train.eval_prompts",
       {[](TrainConfig& c, const std::string& v) {
          c.eval_prompts = static_cast<int>(parse_int("train.eval_prompts", v));
        },
        [](const TrainConfig& c) { return std::to_string(c.eval_prompts); }}},
      {"train.eval_decode",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "greedy")
            c.eval_decode = EvalDecode::Greedy;
          else if (v == "sampled")
            c.eval_decode = EvalDecode::Sampled;
          else
            throw ConfigError("config error: train.eval_decode expects greedy|sampled, got '" + v + "'");
        },
        [](const TrainConfig& c) {
          return c.eval_decode == EvalDecode::Greedy ? std::string("greedy") : std::string("sampled");
        }}},
      {"train.eval_trials",
       {[](TrainConfig& c, const std::string& v) { c.eval_trials = static_cast<int>(parse_int("train.eval_trials", v)); },
        [](const TrainConfig& c) { return std::to_string(c.eval_trials); }}},
      {"train.checkpoint_every",
       {[](TrainConfig& c, const std::string& v) {
          c.checkpoint_every = static_cast<int>(parse_int("train.checkpoint_every", v));
        },
        [](const TrainConfig& c) { return std::to_string(c.checkpoint_every); }}},
      {"train.oracle_checks",
       {[](TrainConfig& c, const std::string& v) { c.oracle_checks = parse_bool("train.oracle_checks", v); },
        [](const TrainConfig& c) { return c.oracle_checks ? std::string("true") : std::string("false"); }}},
      {"train.max_len",
       {[](TrainConfig& c, const std::string& v) { c.max_len = static_cast<int>(parse_int("train.max_len", v)); },
        [](const TrainConfig& c) { return std::to_string(c.max_len); }}},
      {"hybrid.omega_rl",
       {[](TrainConfig& c, const std::string& v) { c.hybrid.omega_rl = parse_real("hybrid.omega_rl", v); },
        [](const TrainConfig& c) { return fmt_real(c.hybrid.omega_rl); }}},
      {"hybrid.omega_opd",
       {[](TrainConfig& c, const std::string& v) { c.hybrid.omega_opd = parse_real("hybrid.omega_opd", v); },
        [](const TrainConfig& c) { return fmt_real(c.hybrid.omega_opd); }}},
      {"hybrid.ppo_clip",
       {[](TrainConfig& c, const std::string& v) { c.hybrid.ppo_clip = parse_real("hybrid.ppo_clip", v); },
        [](const TrainConfig& c) { return fmt_real(c.hybrid.ppo_clip); }}},
      {"hybrid.reweight_clip",
       {[](TrainConfig& c, const std::string& v) { c.hybrid.reweight_clip = parse_real("hybrid.reweight_clip", v); },
        [](const TrainConfig& c) { return fmt_real(c.hybrid.reweight_clip); }}},
      {"hybrid.alpha_start",
       {[](TrainConfig& c, const std::string& v) { c.hybrid.alpha_start = parse_real("hybrid.alpha_start", v); },
        [](const TrainConfig& c) { return fmt_real(c.hybrid.alpha_start); }}},
      {"hybrid.alpha_schedule",
       {[](TrainConfig& c, const std::string& v) { c.hybrid.alpha_schedule = alpha_schedule_from_string(v); },
        [](const TrainConfig& c) { return to_string(c.hybrid.alpha_schedule); }}},
      {"hybrid.total_steps_for_decay",
       {[](TrainConfig& c, const std::string& v) {
          c.hybrid.total_steps_for_decay = static_cast<int>(parse_int("hybrid.total_steps_for_decay", v));
        },
        [](const TrainConfig& c) { return std::to_string(c.hybrid.total_steps_for_decay); }}},
      {"hybrid.standardize_token_adv",
       {[](TrainConfig& c, const std::string& v) {
          c.hybrid.standardize_token_adv = parse_bool("hybrid.standardize_token_adv", v);
        },
        [](const TrainConfig& c) { return c.hybrid.standardize_token_adv ? std::string("true") : std::string("false"); }}},
      {"oracle.enum_cap",
       {[](TrainConfig& c, const std::string& v) {
          c.enum_cap = static_cast<std::size_t>(parse_int("oracle.enum_cap", v));
        },
        [](const TrainConfig& c) { return std::to_string(c.enum_cap); }}},
  };
  return b;
}

const KeyBinding* find_binding(const std::string& key) {
  for (const auto& [k, b] : bindings())
    if (k == key) return &b;
  return nullptr;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  bool saw_beta = false;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config error: line " + std::to_string(lineno) + " is not 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    const KeyBinding* b = find_binding(key);
    if (!b) throw ConfigError("config error: unknown key '" + key + "'");
    b->set(cfg, value);
    if (key == "train.beta") saw_beta = true;
  }
  if (!saw_beta) throw ConfigError("config error: missing required key 'train.beta'");
  cfg.validate();
  return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config error: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("config error: override must be key=value: " + assignment);
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  const KeyBinding* b = find_binding(key);
  if (!b) throw ConfigError("config error: unknown key '" + key + "'");
  b->set(cfg, value);
  cfg.validate();
}

std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  for (const auto& [k, b] : bindings()) os << k << " = " << b.get(cfg) << "\n";
  return os.str();
}

}  // namespace vpd
