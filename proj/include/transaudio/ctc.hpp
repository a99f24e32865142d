#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "transaudio/detail/math.hpp"
#include "transaudio/error.hpp"
#include "transaudio/vocab.hpp"

namespace transaudio {

struct CtcResult {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // d loss / d logits, same shape as the logits
};

// Frames needed to emit `target`: one per label plus a blank between repeats.
inline int ctc_min_frames(const Transcript& target) {
  int need = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++need;
  }
  return need;
}

namespace detail {

// Target with blanks interleaved: blank, y1, blank, y2, ..., yM, blank.
inline std::vector<TokenId> extend_with_blanks(const Transcript& target) {
  std::vector<TokenId> ext(2 * target.size() + 1, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

inline bool can_skip(const std::vector<TokenId>& ext, std::size_t s) {
  return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
}

inline void check_feasible(Eigen::Index frames, const Transcript& target) {
  if (frames < 1 || frames < ctc_min_frames(target)) {
    throw InfeasibleAlignmentError(
        "target of " + std::to_string(target.size()) + " labels needs at least " +
        std::to_string(ctc_min_frames(target)) + " frames, got " +
        std::to_string(frames));
  }
}

}  // namespace detail

// Negative log-likelihood of `target` under per-frame logits (T x classes,
// class 0 = blank), by log-space forward-backward. The gradient is analytic.
inline CtcResult ctc_loss(const Eigen::MatrixXd& logits, const Transcript& target) {
  using detail::kNegInf;
  const Eigen::Index t_len = logits.rows();
  detail::check_feasible(t_len, target);
  for (TokenId id : target.words) {
    if (id <= 0 || id >= logits.cols()) {
      throw ParameterError("ctc_loss: target label outside logit classes");
    }
  }
  const Eigen::MatrixXd lp = detail::log_softmax_rows(logits);
  const auto ext = detail::extend_with_blanks(target);
  const auto s_len = static_cast<Eigen::Index>(ext.size());

  Eigen::MatrixXd alpha = Eigen::MatrixXd::Constant(t_len, s_len, kNegInf);
  Eigen::MatrixXd beta = Eigen::MatrixXd::Constant(t_len, s_len, kNegInf);

  alpha(0, 0) = lp(0, ext[0]);
  if (s_len > 1) alpha(0, 1) = lp(0, ext[1]);
  for (Eigen::Index t = 1; t < t_len; ++t) {
    for (Eigen::Index s = 0; s < s_len; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = detail::log_add(a, alpha(t - 1, s - 1));
      if (detail::can_skip(ext, static_cast<std::size_t>(s))) {
        a = detail::log_add(a, alpha(t - 1, s - 2));
      }
      alpha(t, s) = a == kNegInf ? kNegInf : a + lp(t, ext[s]);
    }
  }
  double log_z = alpha(t_len - 1, s_len - 1);
  if (s_len > 1) log_z = detail::log_add(log_z, alpha(t_len - 1, s_len - 2));
  if (!std::isfinite(log_z)) {
    throw InfeasibleAlignmentError("ctc_loss: no alignment has nonzero probability");
  }

  beta(t_len - 1, s_len - 1) = lp(t_len - 1, ext[s_len - 1]);
  if (s_len > 1) beta(t_len - 1, s_len - 2) = lp(t_len - 1, ext[s_len - 2]);
  for (Eigen::Index t = t_len - 2; t >= 0; --t) {
    for (Eigen::Index s = 0; s < s_len; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < s_len) b = detail::log_add(b, beta(t + 1, s + 1));
      if (s + 2 < s_len && detail::can_skip(ext, static_cast<std::size_t>(s + 2))) {
        b = detail::log_add(b, beta(t + 1, s + 2));
      }
      beta(t, s) = b == kNegInf ? kNegInf : b + lp(t, ext[s]);
    }
  }

  // alpha and beta both include the emission at t, so subtract it once.
  CtcResult out;
  out.loss = -log_z;
  out.grad = lp.array().exp().matrix();
  for (Eigen::Index t = 0; t < t_len; ++t) {
    for (Eigen::Index s = 0; s < s_len; ++s) {
      const double g = alpha(t, s) + beta(t, s);
      if (g == kNegInf) continue;
      out.grad(t, ext[s]) -= std::exp(g - lp(t, ext[s]) - log_z);
    }
  }
  return out;
}

// Greedy CTC rule: collapse runs of the same class, then drop blanks.
inline Transcript ctc_collapse(const std::vector<TokenId>& frame_labels) {
  Transcript out;
  TokenId prev = -1;
  for (TokenId id : frame_labels) {
    if (id != prev && id != kBlank) out.words.push_back(id);
    prev = id;
  }
  return out;
}

}  // namespace transaudio
