#pragma once

#include <algorithm>
#include <cstddef>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "transaudio/error.hpp"

namespace transaudio {

using TokenId = int;

inline constexpr TokenId kBlank = 0;
inline constexpr std::string_view kBlankSymbol = "<blank>";

// Word-level vocabulary. Index 0 is the CTC blank; words occupy 1..num_words().
// The attention decoder uses one extra id, size(), as its start/end sentinel.
class Vocab {
 public:
  Vocab() = default;

  explicit Vocab(const std::vector<std::string>& words) {
    tokens_.emplace_back(kBlankSymbol);
    for (const auto& w : words) {
      if (w.empty() || w == kBlankSymbol) {
        throw ParameterError("invalid vocabulary word '" + w + "'");
      }
      if (index_.count(w) != 0) {
        throw ParameterError("duplicate vocabulary word '" + w + "'");
      }
      index_.emplace(w, static_cast<TokenId>(tokens_.size()));
      tokens_.push_back(w);
    }
    if (tokens_.size() < 2) {
      throw ParameterError("vocabulary needs at least one word");
    }
  }

  // Total number of CTC classes (words plus blank).
  int size() const { return static_cast<int>(tokens_.size()); }
  int num_words() const { return size() - 1; }
  // Sentinel id shared by decoder start and end-of-sentence.
  TokenId sentinel() const { return size(); }
  int decoder_classes() const { return size() + 1; }

  bool is_word(TokenId id) const { return id >= 1 && id < size(); }

  const std::string& symbol(TokenId id) const {
    if (id < 0 || id >= size()) {
      throw ParameterError("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  TokenId id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw ParameterError("unknown word '" + word + "'");
    return it->second;
  }

  std::vector<std::string> words() const {
    return {tokens_.begin() + 1, tokens_.end()};
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Ordered word sequence, never containing blanks.
struct Transcript {
  std::vector<TokenId> words;

  std::size_t size() const { return words.size(); }
  bool empty() const { return words.empty(); }
  TokenId operator[](std::size_t i) const { return words[i]; }

  bool contains(TokenId id) const {
    return std::find(words.begin(), words.end(), id) != words.end();
  }

  void validate(const Vocab& vocab) const {
    for (TokenId id : words) {
      if (!vocab.is_word(id)) {
        throw ParameterError("transcript token " + std::to_string(id) +
                             " is not a vocabulary word");
      }
    }
  }

  std::string to_string(const Vocab& vocab) const {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) out += ' ';
      out += vocab.symbol(words[i]);
    }
    return out;
  }

  static Transcript parse(const std::string& text, const Vocab& vocab) {
    Transcript t;
    std::istringstream in(text);
    std::string w;
    while (in >> w) t.words.push_back(vocab.id(w));
    return t;
  }

  friend bool operator==(const Transcript&, const Transcript&) = default;
};

}  // namespace transaudio
