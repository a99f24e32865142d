#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "transaudio/error.hpp"

namespace transaudio {

inline constexpr int kSampleRate = 16000;

// Mono audio with amplitudes in [-1, 1]. Samples are kept in double precision
// so gradients with respect to them stay exact.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  Waveform() = default;
  explicit Waveform(std::vector<double> s, int rate = kSampleRate)
      : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  double peak() const {
    double m = 0.0;
    for (double v : samples) m = std::max(m, std::abs(v));
    return m;
  }

  // Throws ParameterError if any invariant is violated.
  void validate() const {
    if (sample_rate != kSampleRate) {
      throw ParameterError("waveform sample rate must be 16000, got " +
                           std::to_string(sample_rate));
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double v = samples[i];
      if (!std::isfinite(v) || std::abs(v) > 1.0) {
        throw ParameterError("waveform sample " + std::to_string(i) +
                             " is outside [-1, 1]");
      }
    }
  }

  Waveform slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > samples.size()) {
      throw ParameterError("waveform slice out of range");
    }
    return Waveform(std::vector<double>(samples.begin() + begin,
                                        samples.begin() + end),
                    sample_rate);
  }
};

// Half-open sample range [start, end); empty ranges mark a position.
struct SampleSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }

  void validate(std::size_t waveform_length) const {
    if (!(start <= end && end <= waveform_length)) {
      throw ParameterError("invalid sample span [" + std::to_string(start) +
                           ", " + std::to_string(end) + ") for length " +
                           std::to_string(waveform_length));
    }
  }

  friend bool operator==(const SampleSpan&, const SampleSpan&) = default;
};

}  // namespace transaudio
