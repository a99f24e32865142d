#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "transaudio/error.hpp"
#include "transaudio/vocab.hpp"

namespace transaudio {

enum class AttackType { kDelete, kInsert, kSubstitute };

inline std::string_view to_string(AttackType t) {
  switch (t) {
    case AttackType::kDelete: return "delete";
    case AttackType::kInsert: return "insert";
    case AttackType::kSubstitute: return "substitute";
  }
  return "?";
}

inline AttackType parse_attack_type(std::string_view s) {
  if (s == "delete" || s == "del") return AttackType::kDelete;
  if (s == "insert" || s == "ins") return AttackType::kInsert;
  if (s == "substitute" || s == "sub") return AttackType::kSubstitute;
  throw ParameterError("unknown attack type '" + std::string(s) + "'");
}

// Word-level edit requested by the attacker. `k` is 1-based; for insertion
// k = 0 means "prepend" and the new word goes right after y_k otherwise.
struct AttackSpec {
  AttackType type = AttackType::kDelete;
  int k = 1;
  std::optional<TokenId> target_word;

  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;

  void validate(const Transcript& y, const Vocab& vocab) const {
    const int m = static_cast<int>(y.size());
    if (type == AttackType::kInsert) {
      if (k < 0 || k > m) throw ParameterError("insert position out of range");
    } else if (k < 1 || k > m) {
      throw ParameterError("attack position k out of range");
    }
    if (type != AttackType::kDelete) {
      if (!target_word) throw ParameterError("attack requires a target word");
      if (!vocab.is_word(*target_word)) {
        throw ParameterError("target word is not in the vocabulary");
      }
    }
  }
};

}  // namespace transaudio
