#include "vpd/context.hpp"

#include <stdexcept>

namespace vpd {

std::vector<int> Context::serialize(const Vocabulary& vocab) const {
  std::vector<int> out;
  out.reserve((feedback ? feedback->size() + 2 : 0) + prompt.size() + 1 + prefix.size());
  if (feedback) {
    out.push_back(vocab.id(TokenRole::FbOpen));
    out.insert(out.end(), feedback->begin(), feedback->end());
    out.push_back(vocab.id(TokenRole::FbClose));
  }
  out.insert(out.end(), prompt.begin(), prompt.end());
  // Vocabularies without a SEP role (pure policy-level fixtures) key on the
  // bare concatenation; environments always carry the full role set.
  if (vocab.has(TokenRole::Sep)) out.push_back(vocab.id(TokenRole::Sep));
  out.insert(out.end(), prefix.begin(), prefix.end());
  return out;
}

void Context::validate(const Vocabulary& vocab) const {
  if (prompt.empty()) throw std::invalid_argument("context prompt must be nonempty");
  auto check = [&](const std::vector<int>& toks, const char* what) {
    for (int t : toks)
      if (!vocab.valid_token(t)) throw std::invalid_argument(std::string("token out of range in ") + what);
  };
  check(prompt, "prompt");
  check(prefix, "prefix");
  if (feedback) check(*feedback, "feedback");
}

}  // namespace vpd
