#ifndef VPD_VOCAB_HPP
#define VPD_VOCAB_HPP

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vpd {

// Special token roles. Reserved tokens sit above the ordinary range.
enum class TokenRole : int {
  Sep = 0,      // separates prompt from generated response
  FbOpen = 1,   // opens an encoded feedback block
  FbClose = 2,  // closes it
  Err = 3,      // environment-diagnostic header
  Sib = 4,      // contrastive-sibling header
  Crit = 5,     // self-critique header
  Mask = 6,     // masks already-correct positions in a critique
  Eos = 7,      // end of sequence (only generable when enabled)
};

constexpr int kNumTokenRoles = 8;

const char* token_role_name(TokenRole r);

// Finite vocabulary: `ordinary` content tokens [0, ordinary) plus an ordered
// set of reserved roles at indices [ordinary, ordinary + roles.size()).
struct Vocabulary {
  int ordinary = 0;
  std::vector<TokenRole> roles;

  int total() const { return ordinary + static_cast<int>(roles.size()); }

  bool has(TokenRole r) const {
    for (auto x : roles)
      if (x == r) return true;
    return false;
  }

  int id(TokenRole r) const {
    for (std::size_t i = 0; i < roles.size(); ++i)
      if (roles[i] == r) return ordinary + static_cast<int>(i);
    throw std::invalid_argument(std::string("vocabulary has no reserved role ") + token_role_name(r));
  }

  bool valid_token(int t) const { return t >= 0 && t < total(); }

  void validate() const;
};

// The standard alphabet used by environments: all eight roles present.
Vocabulary standard_vocab(int ordinary);

}  // namespace vpd

#endif
