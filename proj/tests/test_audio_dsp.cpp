#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "transaudio/dsp.hpp"
#include "transaudio/rng.hpp"

using namespace transaudio;

namespace {

Waveform random_waveform(std::size_t n, std::uint64_t seed, double amp = 0.9) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(-amp, amp);
  return Waveform(std::move(x));
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "transaudio_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Minimal RIFF header writer for format-rejection tests.
std::vector<unsigned char> wav_header(std::uint16_t format, std::uint16_t channels,
                                      std::uint32_t rate, std::uint16_t bits,
                                      std::uint32_t data_bytes) {
  std::vector<unsigned char> out;
  const auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
  };
  const auto u16 = [&](std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
  };
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  u32(36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  u32(data_bytes);
  out.insert(out.end(), data_bytes, 0);
  return out;
}

}  // namespace

TEST(Wav, ZeroWaveformWritesZeroData) {
  const auto bytes = wav_encode(Waveform(std::vector<double>(100, 0.0)));
  ASSERT_EQ(bytes.size(), 44u + 200u);
  for (std::size_t i = 44; i < bytes.size(); ++i) EXPECT_EQ(bytes[i], 0);
}

TEST(Wav, RoundTripWithinOneLsb) {
  const Waveform w = random_waveform(5000, 3, 1.0);
  const auto path = temp_file("roundtrip.wav");
  wav_write(w, path.string());
  const Waveform r = wav_read(path.string());
  ASSERT_EQ(r.size(), w.size());
  EXPECT_EQ(r.sample_rate, 16000);
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_LE(std::abs(r.samples[i] - w.samples[i]), 1.0 / 32768.0);
  }
}

TEST(Wav, FullScaleSaturates) {
  const auto bytes = wav_encode(Waveform({1.0, -1.0}));
  const auto s0 = static_cast<std::int16_t>(bytes[44] | (bytes[45] << 8));
  const auto s1 = static_cast<std::int16_t>(bytes[46] | (bytes[47] << 8));
  EXPECT_EQ(s0, 32767);
  EXPECT_EQ(s1, -32768);
}

TEST(Wav, RejectsUnsupportedFormats) {
  EXPECT_NO_THROW(wav_decode(wav_header(1, 1, 16000, 16, 4)));
  EXPECT_THROW(wav_decode(wav_header(1, 2, 16000, 16, 4)), FormatError);
  EXPECT_THROW(wav_decode(wav_header(1, 1, 44100, 16, 4)), FormatError);
  EXPECT_THROW(wav_decode(wav_header(1, 1, 16000, 8, 4)), FormatError);
  EXPECT_THROW(wav_decode(wav_header(3, 1, 16000, 16, 4)), FormatError);
  const std::vector<unsigned char> junk(60, 'x');
  EXPECT_THROW(wav_decode(junk), FormatError);
}

TEST(Wav, MissingFileIsIoError) {
  EXPECT_THROW(wav_read("/nonexistent/dir/none.wav"), IoError);
}

TEST(Highpass, LowToneAttenuatedAtLeast40dB) {
  const Waveform in(oracle::sine(1000.0, 0.5, 8000));
  const Waveform out = highpass_7k(in);
  ASSERT_EQ(out.size(), in.size());
  const double r_in = oracle::rms(in.samples, 100, 7900);
  const double r_out = oracle::rms(out.samples, 100, 7900);
  EXPECT_LE(20.0 * std::log10(r_out / r_in), -40.0);
}

TEST(Highpass, HighTonePassesWithin3dB) {
  const Waveform in(oracle::sine(7800.0, 0.5, 8000));
  const Waveform out = highpass_7k(in);
  const double gain = 20.0 * std::log10(oracle::rms(out.samples, 100, 7900) /
                                        oracle::rms(in.samples, 100, 7900));
  EXPECT_LE(std::abs(gain), 3.0);
}

TEST(Highpass, ZeroInZeroOut) {
  const Waveform out = highpass_7k(Waveform(std::vector<double>(500, 0.0)));
  for (double v : out.samples) EXPECT_EQ(v, 0.0);
}

TEST(Highpass, IsLinear) {
  const Waveform x = random_waveform(3000, 11, 0.3);
  const Waveform y = random_waveform(3000, 12, 0.3);
  const double a = 0.7, b = -1.3;
  std::vector<double> mix(x.size());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x.samples[i] + b * y.samples[i];
  const Waveform fx = highpass_7k(x), fy = highpass_7k(y), fm = highpass_7k(Waveform(mix));
  for (std::size_t i = 0; i < mix.size(); ++i) {
    EXPECT_NEAR(fm.samples[i], a * fx.samples[i] + b * fy.samples[i], 1e-9);
  }
}

TEST(Highpass, ZeroPhase) {
  // A symmetric impulse stays centred: group delay is compensated.
  std::vector<double> x(401, 0.0);
  x[200] = 0.5;
  const Waveform out = highpass_7k(Waveform(x));
  for (std::size_t d = 1; d < 60; ++d) EXPECT_NEAR(out.samples[200 - d], out.samples[200 + d], 1e-15);
}

TEST(EdgeTaper, EndpointsFollowHammingFormula) {
  const std::size_t ramp = 50;
  const Waveform ones(std::vector<double>(300, 1.0));
  const Waveform t = edge_taper(ones, ramp);
  EXPECT_NEAR(t.samples[0], 0.08, 1e-12);
  for (std::size_t n = 0; n < ramp; ++n) {
    const double g = 0.54 - 0.46 * std::cos(std::numbers::pi * n / (ramp - 1));
    EXPECT_NEAR(t.samples[n], g, 1e-12);
    EXPECT_NEAR(t.samples[299 - n], g, 1e-12);
  }
  for (std::size_t n = ramp; n < 300 - ramp; ++n) EXPECT_EQ(t.samples[n], 1.0);
}

TEST(EdgeTaper, FirstSampleScaledInteriorUnchanged) {
  const Waveform w = random_waveform(1000, 5);
  const Waveform t = edge_taper(w, 160);
  EXPECT_DOUBLE_EQ(t.samples[0], w.samples[0] * 0.08);
  for (std::size_t i = 160; i < 840; ++i) EXPECT_EQ(t.samples[i], w.samples[i]);
}

TEST(EdgeTaper, RampTooLongThrows) {
  EXPECT_THROW(edge_taper(random_waveform(100, 1), 51), ParameterError);
  EXPECT_NO_THROW(edge_taper(random_waveform(100, 1), 50));
}

TEST(Concat, SingleFragmentRampZeroIsIdentity) {
  const Waveform w = random_waveform(300, 2);
  EXPECT_EQ(concat_fragments({w}, 0).samples, w.samples);
}

TEST(Concat, LengthsAdd) {
  const Waveform out =
      concat_fragments({random_waveform(100, 1), random_waveform(50, 2), random_waveform(30, 3)}, 10);
  EXPECT_EQ(out.size(), 180u);
}

TEST(Concat, SlicesAreTaperedFragments) {
  const std::vector<Waveform> parts{random_waveform(400, 1), random_waveform(500, 2),
                                    random_waveform(350, 3)};
  const Waveform out = concat_fragments(parts, 160);
  std::size_t at = 0;
  for (const auto& p : parts) {
    const Waveform expect = edge_taper(p, 160);
    EXPECT_EQ(out.slice(at, at + p.size()).samples, expect.samples);
    at += p.size();
  }
}

TEST(Concat, LengthPropertyOverRandomPartitions) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Waveform> parts;
    std::size_t total = 0;
    const int n = rng.integer(1, 6);
    for (int i = 0; i < n; ++i) {
      const auto len = static_cast<std::size_t>(rng.integer(0, 700));
      parts.push_back(random_waveform(len, rng.next()));
      total += len;
    }
    EXPECT_EQ(concat_fragments(parts, 160).size(), total);
  }
}

TEST(Concat, EmptyListThrows) {
  EXPECT_THROW(concat_fragments(std::span<const Waveform>(), 10), ParameterError);
}

TEST(Project, Examples) {
  const Waveform c(std::vector<double>{0.0, 0.99, 0.1});
  const Waveform w(std::vector<double>{0.5, 1.2, 0.12});
  const Waveform p = project(w, c, 0.06);
  EXPECT_DOUBLE_EQ(p.samples[0], 0.06);
  EXPECT_DOUBLE_EQ(p.samples[1], 1.0);
  EXPECT_DOUBLE_EQ(p.samples[2], 0.12);
}

TEST(Project, BallIdempotenceAndRange) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const double delta = rng.uniform(0.001, 0.2);
    const Waveform c = random_waveform(200, rng.next(), 1.0);
    const Waveform w = random_waveform(200, rng.next(), 1.0);
    const Waveform p = project(w, c, delta);
    const Waveform pp = project(p, c, delta);
    EXPECT_EQ(p.samples, pp.samples);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_LE(std::abs(p.samples[i] - c.samples[i]), delta + 1e-15);
      EXPECT_LE(std::abs(p.samples[i]), 1.0);
    }
  }
}

TEST(Project, LengthMismatchThrows) {
  EXPECT_THROW(project(random_waveform(10, 1), random_waveform(11, 2), 0.1), ParameterError);
}

TEST(Snr, IdenticalHitsCap) {
  const Waveform w = random_waveform(1000, 6);
  EXPECT_EQ(snr_db(w, w, {AttackType::kDelete, 1, {}}, {0, 10}), kSnrCapDb);
}

TEST(Snr, ScaledCopy) {
  const Waveform w = random_waveform(1000, 7, 0.5);
  std::vector<double> a(w.samples);
  for (auto& v : a) v *= 1.5;
  EXPECT_NEAR(snr_db(w, Waveform(a), {AttackType::kSubstitute, 1, 1}, {0, 10}),
              20.0 * std::log10(2.0), 1e-9);
}

TEST(Snr, InsertionUsesZeroAlignment) {
  const Waveform w = random_waveform(4000, 8);
  std::vector<double> a(w.samples.begin(), w.samples.begin() + 1000);
  a.insert(a.end(), 1600, 0.0);
  a.insert(a.end(), w.samples.begin() + 1000, w.samples.end());
  EXPECT_EQ(snr_db(w, Waveform(a), {AttackType::kInsert, 1, 1}, {1000, 1000}), kSnrCapDb);
  // Perturbing only the inserted region leaves the noise equal to the insert.
  for (std::size_t i = 1000; i < 2600; ++i) a[i] = 0.1;
  double signal = 0.0;
  for (double v : w.samples) signal += v * v;
  EXPECT_NEAR(snr_db(w, Waveform(a), {AttackType::kInsert, 1, 1}, {1000, 1000}),
              10.0 * std::log10(signal / (1600 * 0.01)), 1e-9);
}

TEST(Snr, ZeroCleanSignalThrows) {
  const Waveform z(std::vector<double>(100, 0.0));
  EXPECT_THROW(snr_db(z, random_waveform(100, 1), {AttackType::kDelete, 1, {}}, {0, 1}),
               UndefinedSignalError);
}
