#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "transaudio/detail/fft.hpp"
#include "transaudio/error.hpp"
#include "transaudio/waveform.hpp"

namespace transaudio {

inline constexpr std::size_t kFrameLen = 400;  // 25 ms
inline constexpr std::size_t kFrameHop = 160;  // 10 ms
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kNumBins = kFftSize / 2 + 1;
inline constexpr int kNumMels = 40;
inline constexpr double kLogFloor = 1e-8;

// Log-mel energies, one row per analysis frame.
struct FeatureMatrix {
  Eigen::MatrixXd frames;  // T_frames x kNumMels

  Eigen::Index num_frames() const { return frames.rows(); }
};

inline std::size_t num_frames_for(std::size_t num_samples) {
  if (num_samples < kFrameLen) return 0;
  return 1 + (num_samples - kFrameLen) / kFrameHop;
}

namespace detail {

using Fft512 = RadixTwoFft<kFftSize>;

inline const std::array<double, kFrameLen>& analysis_window() {
  static const std::array<double, kFrameLen> w = [] {
    std::array<double, kFrameLen> out{};
    for (std::size_t n = 0; n < kFrameLen; ++n) {
      out[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (kFrameLen - 1));
    }
    return out;
  }();
  return w;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular HTK-style filters spanning 0 to 8 kHz, kNumMels x kNumBins.
inline const Eigen::MatrixXd& mel_filterbank() {
  static const Eigen::MatrixXd fb = [] {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(kNumMels, kNumBins);
    const double top = hz_to_mel(kSampleRate / 2.0);
    std::array<double, kNumMels + 2> edges{};
    for (int i = 0; i < kNumMels + 2; ++i) {
      edges[i] = mel_to_hz(top * i / (kNumMels + 1));
    }
    for (int m = 0; m < kNumMels; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      for (std::size_t k = 0; k < kNumBins; ++k) {
        const double f = static_cast<double>(k) * kSampleRate / kFftSize;
        double v = 0.0;
        if (f > lo && f <= mid) v = (f - lo) / (mid - lo);
        else if (f > mid && f < hi) v = (hi - f) / (hi - mid);
        out(m, static_cast<Eigen::Index>(k)) = v;
      }
    }
    return out;
  }();
  return fb;
}

// Forward pass state needed by the vector-Jacobian product.
struct LogMelTape {
  std::vector<Fft512::Buffer> spectra;  // one per frame
  Eigen::MatrixXd mel;                  // T x kNumMels, before the log
};

inline LogMelTape log_mel_forward(const Waveform& w, Eigen::MatrixXd& out) {
  const std::size_t t_frames = num_frames_for(w.size());
  if (t_frames == 0) {
    throw ParameterError("input of " + std::to_string(w.size()) +
                         " samples is shorter than one analysis frame");
  }
  const auto& win = analysis_window();
  LogMelTape tape;
  tape.spectra.resize(t_frames);
  Eigen::MatrixXd power(static_cast<Eigen::Index>(t_frames), kNumBins);
  for (std::size_t f = 0; f < t_frames; ++f) {
    auto& buf = tape.spectra[f];
    buf.fill({0.0, 0.0});
    const double* x = w.samples.data() + f * kFrameHop;
    for (std::size_t n = 0; n < kFrameLen; ++n) buf[n] = {x[n] * win[n], 0.0};
    Fft512::forward(buf);
    for (std::size_t k = 0; k < kNumBins; ++k) {
      power(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(k)) = std::norm(buf[k]);
    }
  }
  tape.mel = power * mel_filterbank().transpose();
  out = (tape.mel.array() + kLogFloor).log().matrix();
  return tape;
}

inline std::vector<double> log_mel_backward(const LogMelTape& tape,
                                            const Eigen::MatrixXd& upstream,
                                            std::size_t num_samples) {
  const auto t_frames = static_cast<Eigen::Index>(tape.spectra.size());
  if (upstream.rows() != t_frames || upstream.cols() != kNumMels) {
    throw ParameterError("log_mel_vjp: upstream gradient has the wrong shape");
  }
  const Eigen::MatrixXd d_mel = (upstream.array() / (tape.mel.array() + kLogFloor)).matrix();
  const Eigen::MatrixXd d_power = d_mel * mel_filterbank();
  const auto& win = analysis_window();
  std::vector<double> grad(num_samples, 0.0);
  Fft512::Buffer c;
  for (Eigen::Index f = 0; f < t_frames; ++f) {
    const auto& spec = tape.spectra[static_cast<std::size_t>(f)];
    c.fill({0.0, 0.0});
    for (std::size_t k = 0; k < kNumBins; ++k) {
      c[k] = d_power(f, static_cast<Eigen::Index>(k)) * std::conj(spec[k]);
    }
    Fft512::forward(c);
    double* g = grad.data() + static_cast<std::size_t>(f) * kFrameHop;
    for (std::size_t n = 0; n < kFrameLen; ++n) g[n] += 2.0 * c[n].real() * win[n];
  }
  return grad;
}

}  // namespace detail

// 25 ms Hamming frames at a 10 ms hop, 512-point power spectrum, 40 mel
// filters over 0-8 kHz, natural log with a 1e-8 floor.
inline FeatureMatrix log_mel(const Waveform& w) {
  FeatureMatrix out;
  detail::log_mel_forward(w, out.frames);
  return out;
}

// Exact reverse-mode derivative of log_mel at `w`, applied to `upstream`.
inline std::vector<double> log_mel_vjp(const Waveform& w, const Eigen::MatrixXd& upstream) {
  Eigen::MatrixXd unused;
  const auto tape = detail::log_mel_forward(w, unused);
  return detail::log_mel_backward(tape, upstream, w.size());
}

}  // namespace transaudio
