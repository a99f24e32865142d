#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "transaudio/attack_spec.hpp"
#include "transaudio/error.hpp"
#include "transaudio/waveform.hpp"

namespace transaudio {

inline constexpr double kPcmScale = 32768.0;
inline constexpr double kSnrCapDb = 120.0;
inline constexpr std::size_t kDefaultRampLen = 160;

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

inline std::int16_t quantize_pcm(double s) {
  const double q = std::nearbyint(s * kPcmScale);
  return static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
}

}  // namespace detail

// Decodes an in-memory RIFF/WAVE image (16-bit PCM, mono, 16 kHz).
inline Waveform wav_decode(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = detail::read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw FormatError("truncated WAV chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError("short fmt chunk");
      const unsigned char* f = bytes.data() + body;
      const auto format = detail::read_u16(f);
      const auto channels = detail::read_u16(f + 2);
      const auto rate = detail::read_u32(f + 4);
      const auto bits = detail::read_u16(f + 14);
      if (format != 1) throw FormatError("WAV is not integer PCM");
      if (channels != 1) {
        throw FormatError("expected mono WAV, got " + std::to_string(channels) +
                          " channels");
      }
      if (rate != static_cast<std::uint32_t>(kSampleRate)) {
        throw FormatError("expected 16000 Hz WAV, got " + std::to_string(rate));
      }
      if (bits != 16) throw FormatError("expected 16-bit samples");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk");
      std::vector<double> samples(len / 2);
      const unsigned char* d = bytes.data() + body;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(detail::read_u16(d + 2 * i));
        samples[i] = raw / kPcmScale;
      }
      return Waveform(std::move(samples));
    }
    pos = body + len + (len & 1U);
  }
  throw FormatError("WAV has no data chunk");
}

inline std::vector<unsigned char> wav_encode(const Waveform& w) {
  w.validate();
  const auto data_bytes = static_cast<std::uint32_t>(w.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, kSampleRate);
  detail::put_u32(out, kSampleRate * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(out, data_bytes);
  for (double s : w.samples) {
    detail::put_u16(out, static_cast<std::uint16_t>(detail::quantize_pcm(s)));
  }
  return out;
}

inline Waveform wav_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return wav_decode(bytes);
}

inline void wav_write(const Waveform& w, const std::string& path) {
  const auto bytes = wav_encode(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

inline constexpr std::size_t kHighpassTaps = 101;
inline constexpr double kHighpassCutoffHz = 7000.0;

// Kaiser-windowed sinc high-pass. beta = 6.8 balances stopband depth against
// transition width; it keeps the most target-clip energy out of 0-6.8 kHz.
inline const std::array<double, kHighpassTaps>& highpass_7k_taps() {
  static const std::array<double, kHighpassTaps> taps = [] {
    constexpr double beta = 6.8;
    constexpr int mid = static_cast<int>(kHighpassTaps / 2);
    const double fc = kHighpassCutoffHz / kSampleRate;
    std::array<double, kHighpassTaps> lp{};
    const double norm = std::cyl_bessel_i(0.0, beta);
    double sum = 0.0;
    for (int n = 0; n < static_cast<int>(kHighpassTaps); ++n) {
      const int m = n - mid;
      const double sinc =
          m == 0 ? 2.0 * fc
                 : std::sin(2.0 * std::numbers::pi * fc * m) / (std::numbers::pi * m);
      const double r = static_cast<double>(m) / mid;
      const double win = std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / norm;
      lp[n] = sinc * win;
      sum += lp[n];
    }
    std::array<double, kHighpassTaps> hp{};
    for (std::size_t n = 0; n < kHighpassTaps; ++n) hp[n] = -lp[n] / sum;
    hp[mid] += 1.0;
    return hp;
  }();
  return taps;
}

// Zero-phase FIR high-pass at 7 kHz; output has the input's length.
inline Waveform highpass_7k(const Waveform& w) {
  const auto& h = highpass_7k_taps();
  constexpr auto mid = static_cast<std::ptrdiff_t>(kHighpassTaps / 2);
  const auto n = static_cast<std::ptrdiff_t>(w.size());
  std::vector<double> out(w.size(), 0.0);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i + mid - n + 1);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(kHighpassTaps - 1, i + mid);
    for (std::ptrdiff_t k = lo; k <= hi; ++k) acc += h[k] * w.samples[i + mid - k];
    out[i] = std::clamp(acc, -1.0, 1.0);
  }
  return Waveform(std::move(out), w.sample_rate);
}

// Rising half of a Hamming window: 0.08 at n = 0 up to 1.0 at n = ramp_len-1.
inline double hamming_ramp(std::size_t n, std::size_t ramp_len) {
  const double denom = ramp_len > 1 ? static_cast<double>(ramp_len - 1) : 1.0;
  return 0.54 - 0.46 * std::cos(std::numbers::pi * static_cast<double>(n) / denom);
}

inline Waveform edge_taper(const Waveform& w, std::size_t ramp_len) {
  if (2 * ramp_len > w.size()) {
    throw ParameterError("taper ramp of " + std::to_string(ramp_len) +
                         " samples is too long for a fragment of " +
                         std::to_string(w.size()));
  }
  Waveform out = w;
  const std::size_t n = w.size();
  for (std::size_t i = 0; i < ramp_len; ++i) {
    const double g = hamming_ramp(i, ramp_len);
    out.samples[i] *= g;
    out.samples[n - 1 - i] *= g;
  }
  return out;
}

// Tapers each fragment at both ends and joins them without overlap. Fragments
// shorter than two ramps get a ramp of half their length; empty ones vanish.
inline Waveform concat_fragments(std::span<const Waveform> fragments,
                                 std::size_t ramp_len) {
  if (fragments.empty()) throw ParameterError("no fragments to concatenate");
  Waveform out;
  out.sample_rate = fragments.front().sample_rate;
  for (const auto& f : fragments) {
    if (f.sample_rate != out.sample_rate) {
      throw ParameterError("fragments have different sample rates");
    }
    if (f.empty()) continue;
    const Waveform t = edge_taper(f, std::min(ramp_len, f.size() / 2));
    out.samples.insert(out.samples.end(), t.samples.begin(), t.samples.end());
  }
  return out;
}

inline Waveform concat_fragments(std::initializer_list<Waveform> fragments,
                                 std::size_t ramp_len) {
  return concat_fragments(std::span<const Waveform>(fragments.begin(), fragments.size()),
                          ramp_len);
}

// Projection onto the l-inf ball of radius delta around `center`, then onto
// the valid amplitude range.
inline Waveform project(const Waveform& w, const Waveform& center, double delta) {
  if (w.size() != center.size()) {
    throw ParameterError("project: length mismatch (" + std::to_string(w.size()) +
                         " vs " + std::to_string(center.size()) + ")");
  }
  Waveform out = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double c = center.samples[i];
    out.samples[i] = std::clamp(std::clamp(w.samples[i], c - delta, c + delta), -1.0, 1.0);
  }
  return out;
}

// SNR of `adv` against `clean`. For insertions the clean signal is padded with
// zeros at span.start so both have the same length before differencing.
inline double snr_db(const Waveform& clean, const Waveform& adv, const AttackSpec& spec,
                     const SampleSpan& span) {
  std::vector<double> aligned;
  if (spec.type == AttackType::kInsert) {
    if (adv.size() < clean.size() || span.start > clean.size()) {
      throw ParameterError("snr_db: inserted audio shorter than clean audio");
    }
    const std::size_t inserted = adv.size() - clean.size();
    aligned.reserve(adv.size());
    aligned.insert(aligned.end(), clean.samples.begin(), clean.samples.begin() + span.start);
    aligned.insert(aligned.end(), inserted, 0.0);
    aligned.insert(aligned.end(), clean.samples.begin() + span.start, clean.samples.end());
  } else {
    if (adv.size() != clean.size()) throw ParameterError("snr_db: length mismatch");
    aligned = clean.samples;
  }
  double signal = 0.0;
  for (double v : clean.samples) signal += v * v;
  if (signal <= 0.0) throw UndefinedSignalError("snr_db: clean signal has zero energy");
  double noise = 0.0;
  for (std::size_t i = 0; i < aligned.size(); ++i) {
    const double d = adv.samples[i] - aligned[i];
    noise += d * d;
  }
  if (noise < 1e-12) return kSnrCapDb;
  return std::min(kSnrCapDb, 10.0 * std::log10(signal / noise));
}

}  // namespace transaudio
