#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "transaudio/dsp.hpp"
#include "transaudio/error.hpp"
#include "transaudio/rng.hpp"
#include "transaudio/vocab.hpp"
#include "transaudio/waveform.hpp"

namespace transaudio {

inline constexpr double kMaxWordPeak = 0.8;
inline constexpr std::uint64_t kTargetSeed = 0x7475ULL;

inline std::vector<std::string> default_words() {
  return {"apple", "bravo", "cedar", "delta", "ember", "fjord", "grove", "harbor"};
}

inline Vocab default_vocab() { return Vocab(default_words()); }

struct CorpusItem {
  std::string id;
  Waveform waveform;
  Transcript transcript;
  std::vector<SampleSpan> true_spans;  // generator ground truth, one per word
};

struct Formants {
  double f1 = 0.0;
  double f2 = 0.0;
  double duration_s = 0.0;
};

namespace detail {

inline constexpr int kF1Slots = 8;
inline constexpr int kF2Slots = 10;

// Formant slots are hashed from the token id with linear probing so that no
// two of the first eight words share either formant.
inline Formants word_formants(TokenId id) {
  if (id < 1) throw ParameterError("formants requested for a non-word token");
  std::array<bool, kF1Slots> used1{};
  std::array<bool, kF2Slots> used2{};
  int s1 = 0, s2 = 0;
  for (TokenId w = 1; w <= id; ++w) {
    const std::uint64_t h = mix_seed(static_cast<std::uint64_t>(w), 0xf0f0ULL);
    s1 = static_cast<int>(h % kF1Slots);
    s2 = static_cast<int>((h >> 20) % kF2Slots);
    if (w <= kF1Slots) {
      while (used1[s1]) s1 = (s1 + 1) % kF1Slots;
      used1[s1] = true;
    }
    if (w <= kF2Slots) {
      while (used2[s2]) s2 = (s2 + 1) % kF2Slots;
      used2[s2] = true;
    }
  }
  const std::uint64_t h = mix_seed(static_cast<std::uint64_t>(id), 0xd0d0ULL);
  Formants f;
  f.f1 = 300.0 + 90.0 * s1;
  f.f2 = 1200.0 + 180.0 * s2;
  f.duration_s = 0.130 + 0.010 * static_cast<double>(h % 6);
  return f;
}

inline void append_silence(std::vector<double>& out, double seconds) {
  out.insert(out.end(), static_cast<std::size_t>(std::lround(seconds * kSampleRate)), 0.0);
}

}  // namespace detail

// Deterministic word clip of 120-200 ms: a two-formant sinusoid pair under a
// Hann envelope plus white noise 30 dB below the tone, with a seeded peak
// level in [0.35, 0.8].
inline Waveform synthesize_word(const Vocab& vocab, TokenId word, std::uint64_t seed) {
  if (!vocab.is_word(word)) throw ParameterError("synthesize_word: unknown word");
  const Formants base = detail::word_formants(word);
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(word)));
  const double duration = std::clamp(base.duration_s + rng.uniform(-0.01, 0.01), 0.12, 0.2);
  const double f1 = base.f1 * (1.0 + rng.uniform(-0.01, 0.01));
  const double f2 = base.f2 * (1.0 + rng.uniform(-0.01, 0.01));
  const double ph1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ph2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double peak = rng.uniform(0.35, kMaxWordPeak);
  const auto n = static_cast<std::size_t>(std::lround(duration * kSampleRate));
  std::vector<double> x(n);
  double energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    const double env = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (n - 1)));
    x[i] = env * (std::sin(2.0 * std::numbers::pi * f1 * t + ph1) +
                  0.6 * std::sin(2.0 * std::numbers::pi * f2 * t + ph2));
    energy += x[i] * x[i];
  }
  const double noise_std = std::sqrt(energy / n) * std::pow(10.0, -30.0 / 20.0);
  double max_abs = 0.0;
  for (auto& v : x) {
    v += noise_std * rng.normal();
    max_abs = std::max(max_abs, std::abs(v));
  }
  for (auto& v : x) v *= peak / max_abs;
  return Waveform(std::move(x));
}

// Target-word clip used to seed insertion and substitution attacks.
inline Waveform synthesize_target(const Vocab& vocab, TokenId word) {
  return highpass_7k(synthesize_word(vocab, word, kTargetSeed));
}

struct CorpusOptions {
  int n_utterances = 100;
  int min_words = 3;
  int max_words = 6;
  std::uint64_t seed = 1;
  std::string id_prefix = "utt";
};

// Utterances of min..max words separated by 40-80 ms of silence, with 60-120
// ms of leading and trailing silence. Words within an utterance are distinct
// whenever the vocabulary is large enough.
inline std::vector<CorpusItem> generate_corpus(const Vocab& vocab, const CorpusOptions& opt) {
  if (vocab.num_words() < 4) throw ParameterError("corpus vocabulary needs at least 4 words");
  if (opt.min_words < 1 || opt.max_words < opt.min_words) {
    throw ParameterError("invalid words-per-utterance range");
  }
  std::vector<CorpusItem> items;
  items.reserve(static_cast<std::size_t>(std::max(0, opt.n_utterances)));
  for (int u = 0; u < opt.n_utterances; ++u) {
    const std::uint64_t useed = mix_seed(opt.seed, static_cast<std::uint64_t>(u));
    Rng rng(useed);
    const int m = rng.integer(opt.min_words, opt.max_words);
    std::vector<TokenId> pool;
    for (TokenId id = 1; id <= vocab.num_words(); ++id) pool.push_back(id);
    CorpusItem item;
    char name[32];
    std::snprintf(name, sizeof name, "%s%04d", opt.id_prefix.c_str(), u);
    item.id = name;
    std::vector<double> audio;
    detail::append_silence(audio, rng.uniform(0.06, 0.12));
    for (int i = 0; i < m; ++i) {
      TokenId word;
      if (m <= vocab.num_words()) {
        const std::size_t pick = rng.index(pool.size());
        word = pool[pick];
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
      } else {
        word = static_cast<TokenId>(1 + rng.index(static_cast<std::size_t>(vocab.num_words())));
      }
      if (i > 0) detail::append_silence(audio, rng.uniform(0.04, 0.08));
      const Waveform clip = synthesize_word(vocab, word, mix_seed(useed, 100 + i));
      item.true_spans.push_back({audio.size(), audio.size() + clip.size()});
      audio.insert(audio.end(), clip.samples.begin(), clip.samples.end());
      item.transcript.words.push_back(word);
    }
    detail::append_silence(audio, rng.uniform(0.06, 0.12));
    item.waveform = Waveform(std::move(audio));
    items.push_back(std::move(item));
  }
  return items;
}

// Writes <dir>/<id>.wav for every item plus <dir>/manifest.jsonl.
inline std::string write_corpus(const std::string& dir, const std::vector<CorpusItem>& items,
                                const Vocab& vocab) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string manifest = (fs::path(dir) / "manifest.jsonl").string();
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest);
  for (const auto& item : items) {
    const std::string wav = item.id + ".wav";
    wav_write(item.waveform, (fs::path(dir) / wav).string());
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : item.true_spans) spans.push_back({s.start, s.end});
    nlohmann::json row = {{"id", item.id},
                          {"audio_path", wav},
                          {"transcript", item.transcript.to_string(vocab)},
                          {"spans", spans}};
    out << row.dump() << '\n';
  }
  return manifest;
}

// Reads a manifest written by write_corpus; audio paths are resolved relative
// to the manifest's directory.
inline std::vector<CorpusItem> read_corpus(const std::string& manifest, const Vocab& vocab) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest);
  const fs::path base = fs::path(manifest).parent_path();
  std::vector<CorpusItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    CorpusItem item;
    try {
      const auto row = nlohmann::json::parse(line);
      const fs::path audio = row.at("audio_path").get<std::string>();
      item.id = row.contains("id") ? row["id"].get<std::string>() : audio.stem().string();
      item.waveform = wav_read((audio.is_absolute() ? audio : base / audio).string());
      item.transcript = Transcript::parse(row.at("transcript").get<std::string>(), vocab);
      for (const auto& s : row.at("spans")) {
        item.true_spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(manifest + ":" + std::to_string(line_no) + ": " + e.what());
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace transaudio
