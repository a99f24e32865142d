#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "transaudio/transaudio.hpp"

namespace fixtures {

inline transaudio::Waveform noise(std::size_t n, std::uint64_t seed, double amp = 0.3) {
  transaudio::Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(-amp, amp);
  return transaudio::Waveform(std::move(x));
}

inline transaudio::Transcript words(std::initializer_list<int> ids) {
  transaudio::Transcript t;
  for (int id : ids) t.words.push_back(id);
  return t;
}

inline std::vector<transaudio::CorpusItem> corpus(int n, std::uint64_t seed,
                                                  const std::string& prefix = "utt") {
  return transaudio::generate_corpus(transaudio::default_vocab(), {n, 3, 6, seed, prefix});
}

// A recognizer trained briefly on a small corpus. Cheap enough for unit
// tests; not accurate.
inline const transaudio::ModelParams& quick_model(transaudio::Arch arch) {
  static const auto train_one = [](transaudio::Arch a) {
    const auto items = corpus(24, 5);
    transaudio::TrainOptions opt;
    opt.epochs = 2;
    opt.seed = 9;
    return transaudio::train(a, transaudio::default_vocab(), items, opt).params;
  };
  static const transaudio::ModelParams conv = train_one(transaudio::Arch::kConvNetA);
  static const transaudio::ModelParams rnn = train_one(transaudio::Arch::kRecurrentB);
  return arch == transaudio::Arch::kConvNetA ? conv : rnn;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "transaudio_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
