#ifndef VPD_ENV_HPP
#define VPD_ENV_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vpd/policy.hpp"
#include "vpd/rng.hpp"
#include "vpd/vocab.hpp"

namespace vpd {

enum class EnvFamily { KeyedCopy, ModSum };

// Synthetic verifiable environment with a unique correct response per
// prompt. keyed-copy answers with a per-position keyed permutation of the
// reversed prompt; mod-sum answers with the token sum mod V.
struct EnvSpec {
  EnvFamily family = EnvFamily::KeyedCopy;
  Vocabulary vocab;
  int prompt_len = 0;
  int response_len = 0;
  std::uint64_t transform_key = 0;  // 0 = identity permutations

  void validate() const;
};

EnvFamily env_family_from_string(const std::string& s);
std::string to_string(EnvFamily f);

enum class FeedbackMode { None, EnvDiagnostic, ContrastiveSibling, SelfCritique };

FeedbackMode feedback_mode_from_string(const std::string& s);
std::string to_string(FeedbackMode m);

// Token-encoded diagnostic attached to a trajectory. mode None <=> tokens
// empty; env-diagnostic records start with ERR, siblings with SIB,
// critiques with CRIT.
struct FeedbackRecord {
  FeedbackMode mode = FeedbackMode::None;
  std::vector<int> tokens;
  std::optional<int> source_index;  // rollout index of the sibling used
};

struct OutcomeLabel {
  int reward = 0;
  std::optional<int> first_error_pos;
  std::optional<int> expected_token;
};

// Uniform prompt over ordinary tokens, deterministic under the stream.
std::vector<int> sample_prompt(const EnvSpec& env, Rng& rng);

// The unique correct response for x.
std::vector<int> target(const EnvSpec& env, const std::vector<int>& x);

// reward 1 iff y equals target(x); otherwise the first mismatch position and
// the token expected there. A wrong-length y is a precondition violation,
// signaled distinctly from reward 0.
OutcomeLabel verify(const EnvSpec& env, const std::vector<int>& x, const std::vector<int>& y);

// Builds the diagnostic record for group[index] under the given mode.
// All trajectories in `group` share prompt x.
FeedbackRecord make_feedback(const EnvSpec& env, FeedbackMode mode, const std::vector<int>& x,
                             std::size_t index, std::span<const Trajectory> group);

}  // namespace vpd

#endif
