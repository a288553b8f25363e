#ifndef VPD_CONTEXT_HPP
#define VPD_CONTEXT_HPP

#include <optional>
#include <vector>

#include "vpd/vocab.hpp"

namespace vpd {

// Conditioning context of one next-token evaluation. A context with feedback
// is a teacher evaluation, without it a student one; the parameters behind
// both are the same store.
//
// Serialization order: [FB_OPEN feedback FB_CLOSE] prompt SEP prefix.
struct Context {
  std::optional<std::vector<int>> feedback;
  std::vector<int> prompt;
  std::vector<int> prefix;

  static Context student(std::vector<int> prompt_tokens) {
    Context c;
    c.prompt = std::move(prompt_tokens);
    return c;
  }

  static Context teacher(std::vector<int> feedback_tokens, std::vector<int> prompt_tokens) {
    Context c;
    c.feedback = std::move(feedback_tokens);
    c.prompt = std::move(prompt_tokens);
    return c;
  }

  Context with_prefix(std::vector<int> p) const {
    Context c = *this;
    c.prefix = std::move(p);
    return c;
  }

  std::vector<int> serialize(const Vocabulary& vocab) const;

  void validate(const Vocabulary& vocab) const;
};

}  // namespace vpd

#endif
