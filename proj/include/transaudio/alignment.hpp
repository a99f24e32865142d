#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "transaudio/ctc.hpp"
#include "transaudio/detail/math.hpp"
#include "transaudio/error.hpp"
#include "transaudio/frontend.hpp"
#include "transaudio/model.hpp"
#include "transaudio/waveform.hpp"

namespace transaudio {

// Frames [start_frame, end_frame) in which token k (1-based) is emitted.
struct TokenSpan {
  int k = 0;
  Eigen::Index start_frame = 0;
  Eigen::Index end_frame = 0;

  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct Alignment {
  std::vector<TokenSpan> spans;
  std::vector<TokenId> frame_labels;  // best path, one label per frame
  double log_score = 0.0;             // log probability of the best path
};

// Viterbi best path through the blank-interleaved target. When two
// predecessors score the same, the one further along the label sequence
// wins, which emits every token at the earliest possible frame.
inline Alignment viterbi_align(const Eigen::MatrixXd& logits, const Transcript& transcript,
                               double blank_penalty = 0.0) {
  using detail::kNegInf;
  const Eigen::Index t_len = logits.rows();
  detail::check_feasible(t_len, transcript);
  Eigen::MatrixXd lp = detail::log_softmax_rows(logits);
  lp.col(kBlank).array() -= blank_penalty;
  const auto ext = detail::extend_with_blanks(transcript);
  const auto s_len = static_cast<Eigen::Index>(ext.size());

  Eigen::MatrixXd score = Eigen::MatrixXd::Constant(t_len, s_len, kNegInf);
  Eigen::MatrixXi from = Eigen::MatrixXi::Constant(t_len, s_len, -1);
  score(0, 0) = lp(0, ext[0]);
  if (s_len > 1) score(0, 1) = lp(0, ext[1]);
  for (Eigen::Index t = 1; t < t_len; ++t) {
    for (Eigen::Index s = 0; s < s_len; ++s) {
      double best = score(t - 1, s);
      Eigen::Index arg = s;
      if (s >= 1 && score(t - 1, s - 1) > best) {
        best = score(t - 1, s - 1);
        arg = s - 1;
      }
      if (detail::can_skip(ext, static_cast<std::size_t>(s)) && score(t - 1, s - 2) > best) {
        best = score(t - 1, s - 2);
        arg = s - 2;
      }
      if (best == kNegInf) continue;
      score(t, s) = best + lp(t, ext[s]);
      from(t, s) = static_cast<int>(arg);
    }
  }
  Eigen::Index s = s_len - 1;
  if (s_len > 1 && score(t_len - 1, s_len - 2) > score(t_len - 1, s_len - 1)) s = s_len - 2;
  if (score(t_len - 1, s) == kNegInf) {
    throw InfeasibleAlignmentError("viterbi_align: no feasible path");
  }
  Alignment out;
  out.log_score = score(t_len - 1, s);
  std::vector<Eigen::Index> states(static_cast<std::size_t>(t_len));
  for (Eigen::Index t = t_len - 1; t >= 0; --t) {
    states[static_cast<std::size_t>(t)] = s;
    if (t > 0) s = from(t, s);
  }
  out.frame_labels.reserve(states.size());
  out.spans.resize(transcript.size());
  for (std::size_t k = 0; k < transcript.size(); ++k) {
    out.spans[k] = {static_cast<int>(k + 1), -1, -1};
  }
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const Eigen::Index st = states[static_cast<std::size_t>(t)];
    out.frame_labels.push_back(ext[st]);
    if (st % 2 == 1) {
      auto& span = out.spans[static_cast<std::size_t>(st / 2)];
      if (span.start_frame < 0) span.start_frame = t;
      span.end_frame = t + 1;
    }
  }
  return out;
}

inline std::vector<TokenSpan> forced_align(const Eigen::MatrixXd& logits,
                                           const Transcript& transcript) {
  return viterbi_align(logits, transcript).spans;
}

inline constexpr double kActivityFloorDb = -50.0;

// One flag per analysis frame: whether the hop-length stretch centred on the
// frame carries energy within `floor_db` of the loudest such stretch.
inline std::vector<bool> active_frames(const Waveform& w, Eigen::Index t_len,
                                       double floor_db = kActivityFloorDb) {
  std::vector<double> energy(static_cast<std::size_t>(t_len), 0.0);
  const std::size_t n = w.size();
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const std::size_t centre = static_cast<std::size_t>(t) * kFrameHop + kFrameLen / 2;
    const std::size_t lo = centre >= kFrameHop / 2 ? centre - kFrameHop / 2 : 0;
    const std::size_t hi = std::min(centre + kFrameHop / 2, n);
    double e = 0.0;
    for (std::size_t i = lo; i < hi; ++i) e += w.samples[i] * w.samples[i];
    energy[static_cast<std::size_t>(t)] = e;
  }
  const double peak = energy.empty() ? 0.0 : *std::max_element(energy.begin(), energy.end());
  const double floor = peak * std::pow(10.0, floor_db / 10.0);
  std::vector<bool> active(energy.size());
  for (std::size_t t = 0; t < energy.size(); ++t) active[t] = peak > 0.0 && energy[t] > floor;
  return active;
}

// CTC emissions mark a short stretch somewhere inside each word. Each span is
// widened to the run of active frames around it, never reaching into the
// frames emitted for the neighbouring words. Spans with no activity nearby
// are left as emitted.
inline std::vector<TokenSpan> refine_spans(const std::vector<TokenSpan>& spans,
                                           const std::vector<bool>& active) {
  const auto t_len = static_cast<Eigen::Index>(active.size());
  const auto on = [&](Eigen::Index t) { return active[static_cast<std::size_t>(t)]; };
  std::vector<TokenSpan> out = spans;
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const Eigen::Index lo = k == 0 ? 0 : spans[k - 1].end_frame;
    const Eigen::Index hi = k + 1 == spans.size() ? t_len : spans[k + 1].start_frame;
    const Eigen::Index a = spans[k].start_frame, b = spans[k].end_frame;
    Eigen::Index seed = -1;
    for (Eigen::Index d = 0; seed < 0 && (a - d >= lo || b - 1 + d < hi); ++d) {
      if (d < b - a && on(a + d)) seed = a + d;
      else if (a - d >= lo && on(a - d)) seed = a - d;
      else if (b - 1 + d < hi && on(b - 1 + d)) seed = b - 1 + d;
    }
    if (seed < 0) continue;
    Eigen::Index s = seed, e = seed + 1;
    while (s > lo && on(s - 1)) --s;
    while (e < hi && on(e)) ++e;
    out[k].start_frame = std::min(s, a);
    out[k].end_frame = std::max(e, b);
  }
  return out;
}

// Per-word frame spans of `transcript` in `w`: forced alignment on the CTC
// head, refined against signal activity.
inline std::vector<TokenSpan> align_words(const ModelParams& p, const Waveform& w,
                                          const Transcript& transcript) {
  const Eigen::MatrixXd logits = ctc_frame_logits(p, w);
  return refine_spans(forced_align(logits, transcript), active_frames(w, logits.rows()));
}

// Sample range covered by frames [start_frame, end_frame), including the
// tail of the last analysis window.
inline SampleSpan frames_to_samples(Eigen::Index start_frame, Eigen::Index end_frame,
                                    std::size_t num_samples) {
  SampleSpan span;
  span.start = static_cast<std::size_t>(start_frame) * kFrameHop;
  span.end = std::min(static_cast<std::size_t>(end_frame) * kFrameHop + kFrameLen, num_samples);
  return span;
}

// Sample span of word k (1-based) of the full transcript.
inline SampleSpan locate_word(const ModelParams& p, const Waveform& w,
                              const Transcript& transcript, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > transcript.size()) {
    throw ParameterError("locate_word: k = " + std::to_string(k) + " out of range");
  }
  const auto spans = align_words(p, w, transcript);
  const auto& s = spans[static_cast<std::size_t>(k - 1)];
  SampleSpan out = frames_to_samples(s.start_frame, s.end_frame, w.size());
  out.validate(w.size());
  return out;
}

// Sample index at which a word inserted after word k (k = 0: before the first
// word) should go: midway between the last frame centre of word k and the
// first frame centre of word k+1, clamped to the waveform.
inline std::size_t locate_insertion_point(const ModelParams& p, const Waveform& w,
                                          const Transcript& transcript, int k) {
  if (k < 0 || static_cast<std::size_t>(k) > transcript.size()) {
    throw ParameterError("locate_insertion_point: k out of range");
  }
  const std::size_t n = w.size();
  if (transcript.empty()) return n / 2;
  const auto spans = align_words(p, w, transcript);
  const auto centre = [](Eigen::Index frame) {
    return static_cast<double>(frame) * kFrameHop + kFrameLen / 2.0;
  };
  const double left = k == 0 ? 0.0 : centre(spans[static_cast<std::size_t>(k - 1)].end_frame - 1);
  const double right = static_cast<std::size_t>(k) == transcript.size()
                           ? static_cast<double>(n)
                           : centre(spans[static_cast<std::size_t>(k)].start_frame);
  const auto point = static_cast<std::size_t>(std::lround(0.5 * (left + right)));
  return std::min(point, n);
}

}  // namespace transaudio
