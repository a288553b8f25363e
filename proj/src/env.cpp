#include "vpd/env.hpp"

#include <algorithm>
#include <stdexcept>

namespace vpd {

void EnvSpec::validate() const {
  vocab.validate();
  if (prompt_len < 1) throw std::invalid_argument("env.prompt_len must be >= 1");
  if (response_len < 1) throw std::invalid_argument("env.response_len must be >= 1");
  if (family == EnvFamily::KeyedCopy && response_len != prompt_len)
    throw std::invalid_argument("keyed-copy requires response_len == prompt_len");
  if (family == EnvFamily::ModSum && response_len != 1)
    throw std::invalid_argument("mod-sum requires response_len == 1");
  // Feedback encodings reference ERR/SIB/CRIT/MASK and the context framing
  // tokens, so environments demand the full role set.
  for (auto r : {TokenRole::Sep, TokenRole::FbOpen, TokenRole::FbClose, TokenRole::Err, TokenRole::Sib,
                 TokenRole::Crit, TokenRole::Mask, TokenRole::Eos})
    if (!vocab.has(r)) throw std::invalid_argument("environment vocabulary is missing reserved roles");
}

EnvFamily env_family_from_string(const std::string& s) {
  if (s == "keyed-copy") return EnvFamily::KeyedCopy;
  if (s == "mod-sum") return EnvFamily::ModSum;
  throw std::invalid_argument("unknown env.family: " + s);
}

std::string to_string(EnvFamily f) { return f == EnvFamily::KeyedCopy ? "keyed-copy" : "mod-sum"; }

FeedbackMode feedback_mode_from_string(const std::string& s) {
  if (s == "none") return FeedbackMode::None;
  if (s == "env-diagnostic") return FeedbackMode::EnvDiagnostic;
  if (s == "contrastive-sibling") return FeedbackMode::ContrastiveSibling;
  if (s == "self-critique") return FeedbackMode::SelfCritique;
  throw std::invalid_argument("unknown feedback mode: " + s);
}

std::string to_string(FeedbackMode m) {
  switch (m) {
    case FeedbackMode::None: return "none";
    case FeedbackMode::EnvDiagnostic: return "env-diagnostic";
    case FeedbackMode::ContrastiveSibling: return "contrastive-sibling";
    case FeedbackMode::SelfCritique: return "self-critique";
  }
  return "?";
}

std::vector<int> sample_prompt(const EnvSpec& env, Rng& rng) {
  std::vector<int> x(env.prompt_len);
  for (auto& t : x) t = rng.uniform_int(env.vocab.ordinary);
  return x;
}

namespace {

// Position-keyed permutation over ordinary tokens. Key 0 is the identity.
std::vector<int> position_perm(const EnvSpec& env, int pos) {
  const int v = env.vocab.ordinary;
  std::vector<int> perm(v);
  for (int i = 0; i < v; ++i) perm[i] = i;
  if (env.transform_key == 0) return perm;
  Rng r = Rng(env.transform_key).derive({0x7065726dULL, static_cast<std::uint64_t>(pos)});
  for (int i = v - 1; i > 0; --i) std::swap(perm[i], perm[r.uniform_int(i + 1)]);
  return perm;
}

}  // namespace

std::vector<int> target(const EnvSpec& env, const std::vector<int>& x) {
  if (static_cast<int>(x.size()) != env.prompt_len) throw std::invalid_argument("prompt length mismatch");
  if (env.family == EnvFamily::ModSum) {
    long s = 0;
    for (int t : x) s += t;
    return {static_cast<int>(s % env.vocab.ordinary)};
  }
  std::vector<int> y(env.response_len);
  for (int i = 0; i < env.response_len; ++i) y[i] = position_perm(env, i)[x[env.prompt_len - 1 - i]];
  return y;
}

OutcomeLabel verify(const EnvSpec& env, const std::vector<int>& x, const std::vector<int>& y) {
  if (static_cast<int>(y.size()) != env.response_len)
    throw std::invalid_argument("verify: response length mismatch");
  auto want = target(env, x);
  OutcomeLabel out;
  for (int i = 0; i < env.response_len; ++i) {
    if (y[i] != want[i]) {
      out.reward = 0;
      out.first_error_pos = i;
      out.expected_token = want[i];
      return out;
    }
  }
  out.reward = 1;
  return out;
}

FeedbackRecord make_feedback(const EnvSpec& env, FeedbackMode mode, const std::vector<int>& x,
                             std::size_t index, std::span<const Trajectory> group) {
  if (index >= group.size()) throw std::invalid_argument("trajectory index outside group");
  const Trajectory& traj = group[index];
  FeedbackRecord fb;
  switch (mode) {
    case FeedbackMode::None:
      return fb;
    case FeedbackMode::EnvDiagnostic: {
      fb.mode = FeedbackMode::EnvDiagnostic;
      fb.tokens.push_back(env.vocab.id(TokenRole::Err));
      auto label = verify(env, x, traj.response);
      if (label.reward == 0) {
        // [ERR pos expected] — the bare header encodes "passed".
        int pos = *label.first_error_pos;
        fb.tokens.push_back(pos % env.vocab.ordinary);
        fb.tokens.push_back(*label.expected_token);
        if (env.family == EnvFamily::ModSum) {
          // Cyclic difference gives the graded too-high/too-low hint.
          int diff = (*label.expected_token - traj.response[pos]) % env.vocab.ordinary;
          if (diff < 0) diff += env.vocab.ordinary;
          fb.tokens.push_back(diff);
        }
      }
      return fb;
    }
    case FeedbackMode::ContrastiveSibling: {
      // Lowest-rollout-index reward-1 sibling distinct from the trajectory.
      for (std::size_t i = 0; i < group.size(); ++i) {
        if (i == index || group[i].reward != 1) continue;
        fb.mode = FeedbackMode::ContrastiveSibling;
        fb.tokens.push_back(env.vocab.id(TokenRole::Sib));
        fb.tokens.insert(fb.tokens.end(), group[i].response.begin(), group[i].response.end());
        fb.source_index = static_cast<int>(i);
        return fb;
      }
      return fb;  // no usable sibling -> mode none
    }
    case FeedbackMode::SelfCritique: {
      // Target tokens with already-correct positions masked out.
      fb.mode = FeedbackMode::SelfCritique;
      fb.tokens.push_back(env.vocab.id(TokenRole::Crit));
      auto want = target(env, x);
      for (int i = 0; i < env.response_len; ++i) {
        bool correct = i < static_cast<int>(traj.response.size()) && traj.response[i] == want[i];
        fb.tokens.push_back(correct ? env.vocab.id(TokenRole::Mask) : want[i]);
      }
      return fb;
    }
  }
  throw std::invalid_argument("unknown feedback mode");
}

}  // namespace vpd
