#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "transaudio/attack_spec.hpp"
#include "transaudio/error.hpp"
#include "transaudio/vocab.hpp"

namespace transaudio {

// Levenshtein distance with unit costs over any two sequences whose elements
// compare with ==.
template <class SeqA, class SeqB>
std::size_t edit_distance(const SeqA& a, const SeqB& b) {
  const std::size_t n = std::size(a), m = std::size(b);
  std::vector<std::size_t> row(m + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  auto ia = std::begin(a);
  for (std::size_t i = 1; i <= n; ++i, ++ia) {
    std::size_t diag = row[0];
    row[0] = i;
    auto ib = std::begin(b);
    for (std::size_t j = 1; j <= m; ++j, ++ib) {
      const std::size_t up = row[j];
      row[j] = std::min({up + 1, row[j - 1] + 1, diag + (*ia == *ib ? 0 : 1)});
      diag = up;
    }
  }
  return row[m];
}

inline std::size_t edit_distance(const Transcript& a, const Transcript& b) {
  return edit_distance(a.words, b.words);
}

// Character error rate of `hyp` against `ref`: character-level edit distance
// divided by the reference length.
inline double cer(const std::string& hyp, const std::string& ref) {
  if (ref.empty()) throw ParameterError("cer: empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

// Transcripts are compared as their space-joined spellings.
inline double cer(const Transcript& hyp, const Transcript& ref, const Vocab& vocab) {
  return cer(hyp.to_string(vocab), ref.to_string(vocab));
}

// Success predicate per attack type: a deleted word must be gone, an inserted
// word must appear, a substitution needs both.
inline bool judge_sroa(const Transcript& decoded, const AttackSpec& spec, const Transcript& y) {
  switch (spec.type) {
    case AttackType::kDelete: {
      if (spec.k < 1 || static_cast<std::size_t>(spec.k) > y.size()) {
        throw ParameterError("judge_sroa: k out of range");
      }
      return !decoded.contains(y[static_cast<std::size_t>(spec.k - 1)]);
    }
    case AttackType::kInsert:
      return spec.target_word && decoded.contains(*spec.target_word);
    case AttackType::kSubstitute: {
      if (spec.k < 1 || static_cast<std::size_t>(spec.k) > y.size()) {
        throw ParameterError("judge_sroa: k out of range");
      }
      return spec.target_word && decoded.contains(*spec.target_word) &&
             !decoded.contains(y[static_cast<std::size_t>(spec.k - 1)]);
    }
  }
  return false;
}

struct MetricsBundle {
  bool sroa = false;
  double cer = 0.0;
  std::size_t med = 0;
  double snr_db = 0.0;
};

struct RecognitionAccuracy {
  double word_accuracy = 0.0;  // 1 - word edit distance / reference words
  double exact_match = 0.0;    // fraction of utterances decoded exactly
};

inline RecognitionAccuracy score_recognition(const std::vector<Transcript>& hyps,
                                             const std::vector<Transcript>& refs) {
  if (hyps.size() != refs.size()) throw ParameterError("score_recognition: size mismatch");
  std::size_t errors = 0, words = 0, exact = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    errors += edit_distance(hyps[i], refs[i]);
    words += refs[i].size();
    exact += hyps[i] == refs[i] ? 1 : 0;
  }
  RecognitionAccuracy acc;
  if (words > 0) {
    acc.word_accuracy =
        std::max(0.0, 1.0 - static_cast<double>(errors) / static_cast<double>(words));
  }
  if (!refs.empty()) acc.exact_match = static_cast<double>(exact) / refs.size();
  return acc;
}

}  // namespace transaudio
