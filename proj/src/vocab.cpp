#include "vpd/vocab.hpp"

namespace vpd {

const char* token_role_name(TokenRole r) {
  switch (r) {
    case TokenRole::Sep: return "SEP";
    case TokenRole::FbOpen: return "FB_OPEN";
    case TokenRole::FbClose: return "FB_CLOSE";
    case TokenRole::Err: return "ERR";
    case TokenRole::Sib: return "SIB";
    case TokenRole::Crit: return "CRIT";
    case TokenRole::Mask: return "MASK";
    case TokenRole::Eos: return "EOS";
  }
  return "?";
}

void Vocabulary::validate() const {
  if (ordinary < 2) throw std::invalid_argument("vocabulary needs at least 2 ordinary tokens");
  for (std::size_t i = 0; i < roles.size(); ++i)
    for (std::size_t j = i + 1; j < roles.size(); ++j)
      if (roles[i] == roles[j]) throw std::invalid_argument("duplicate reserved role in vocabulary");
}

Vocabulary standard_vocab(int ordinary) {
  Vocabulary v;
  v.ordinary = ordinary;
  v.roles = {TokenRole::Sep,  TokenRole::FbOpen, TokenRole::FbClose, TokenRole::Err,
             TokenRole::Sib,  TokenRole::Crit,   TokenRole::Mask,    TokenRole::Eos};
  v.validate();
  return v;
}

}  // namespace vpd
