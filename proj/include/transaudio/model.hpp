#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "transaudio/ctc.hpp"
#include "transaudio/detail/math.hpp"
#include "transaudio/error.hpp"
#include "transaudio/frontend.hpp"
#include "transaudio/rng.hpp"
#include "transaudio/vocab.hpp"
#include "transaudio/waveform.hpp"

namespace transaudio {

enum class Arch { kConvNetA, kRecurrentB };

inline std::string_view to_string(Arch a) {
  return a == Arch::kConvNetA ? "convnet-A" : "recurrent-B";
}

inline Arch parse_arch(std::string_view s) {
  if (s == "convnet-A") return Arch::kConvNetA;
  if (s == "recurrent-B") return Arch::kRecurrentB;
  throw ParameterError("unknown architecture '" + std::string(s) + "'");
}

inline constexpr int kHidden = 64;
inline constexpr int kConvKernel = 5;
inline constexpr int kRecurrentHalf = kHidden / 2;
inline constexpr int kMaxDecoderSteps = 16;
inline constexpr double kDefaultLambda = 0.3;

// Every trainable tensor. Tensors unused by an architecture stay 0 x 0.
struct Weights {
  Eigen::MatrixXd conv1_w, conv1_b, conv2_w, conv2_b;
  Eigen::MatrixXd rnn_fw_wx, rnn_fw_wh, rnn_fw_b;
  Eigen::MatrixXd rnn_bw_wx, rnn_bw_wh, rnn_bw_b;
  Eigen::MatrixXd ctc_w, ctc_b;
  Eigen::MatrixXd dec_embed, dec_pos, dec_loc, dec_out_w, dec_out_b;

  using Field = Eigen::MatrixXd Weights::*;
  static constexpr std::array<std::pair<std::string_view, Field>, 17> kFields{{
      {"conv1_w", &Weights::conv1_w},     {"conv1_b", &Weights::conv1_b},
      {"conv2_w", &Weights::conv2_w},     {"conv2_b", &Weights::conv2_b},
      {"rnn_fw_wx", &Weights::rnn_fw_wx}, {"rnn_fw_wh", &Weights::rnn_fw_wh},
      {"rnn_fw_b", &Weights::rnn_fw_b},   {"rnn_bw_wx", &Weights::rnn_bw_wx},
      {"rnn_bw_wh", &Weights::rnn_bw_wh}, {"rnn_bw_b", &Weights::rnn_bw_b},
      {"ctc_w", &Weights::ctc_w},         {"ctc_b", &Weights::ctc_b},
      {"dec_embed", &Weights::dec_embed}, {"dec_pos", &Weights::dec_pos},
      {"dec_loc", &Weights::dec_loc},     {"dec_out_w", &Weights::dec_out_w},
      {"dec_out_b", &Weights::dec_out_b},
  }};

  Weights zeros_like() const {
    Weights z;
    for (const auto& [name, f] : kFields) {
      z.*f = Eigen::MatrixXd::Zero((this->*f).rows(), (this->*f).cols());
    }
    return z;
  }

  void set_zero() {
    for (const auto& [name, f] : kFields) (this->*f).setZero();
  }

  Weights& operator+=(const Weights& o) {
    for (const auto& [name, f] : kFields) this->*f += o.*f;
    return *this;
  }

  Weights& add_scaled(const Weights& o, double s) {
    for (const auto& [name, f] : kFields) this->*f += s * (o.*f);
    return *this;
  }

  Weights& operator*=(double s) {
    for (const auto& [name, f] : kFields) this->*f *= s;
    return *this;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& [name, f] : kFields) s += (this->*f).squaredNorm();
    return s;
  }

  bool all_finite() const {
    for (const auto& [name, f] : kFields) {
      if (!(this->*f).allFinite()) return false;
    }
    return true;
  }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& [name, f] : kFields) n += static_cast<std::size_t>((this->*f).size());
    return n;
  }

  friend bool operator==(const Weights& a, const Weights& b) {
    for (const auto& [name, f] : kFields) {
      const auto& x = a.*f;
      const auto& y = b.*f;
      if (x.rows() != y.rows() || x.cols() != y.cols() || x != y) return false;
    }
    return true;
  }
};

// One toy CTC-attention recognizer: fixed feature normalization, trainable
// weights, and the CTC/attention mixing weight lambda of the joint loss.
struct ModelParams {
  Arch arch = Arch::kConvNetA;
  Vocab vocab;
  double lambda = kDefaultLambda;
  Eigen::RowVectorXd norm_mean = Eigen::RowVectorXd::Zero(kNumMels);
  Eigen::RowVectorXd norm_inv_std = Eigen::RowVectorXd::Ones(kNumMels);
  Weights weights;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      throw ParameterError("model lambda must lie in [0, 1]");
    }
    if (!weights.all_finite() || !norm_mean.allFinite() || !norm_inv_std.allFinite()) {
      throw NumericalError("model weights contain non-finite values");
    }
  }
};

namespace detail {

inline Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                      double limit) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-limit, limit);
  }
  return m;
}

inline double glorot(Eigen::Index fan_in, Eigen::Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace detail

inline ModelParams init_params(Arch arch, const Vocab& vocab, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  ModelParams p;
  p.arch = arch;
  p.vocab = vocab;
  auto& w = p.weights;
  const Eigen::Index d = kNumMels, h = kHidden;
  if (arch == Arch::kConvNetA) {
    w.conv1_w = detail::uniform_matrix(rng, kConvKernel * d, h, detail::glorot(kConvKernel * d, h));
    w.conv1_b = Eigen::MatrixXd::Zero(1, h);
    w.conv2_w = detail::uniform_matrix(rng, kConvKernel * h, h, detail::glorot(kConvKernel * h, h));
    w.conv2_b = Eigen::MatrixXd::Zero(1, h);
  } else {
    const Eigen::Index hh = kRecurrentHalf;
    for (auto* pair : {&w.rnn_fw_wx, &w.rnn_bw_wx}) {
      *pair = detail::uniform_matrix(rng, d, hh, detail::glorot(d, hh));
    }
    for (auto* pair : {&w.rnn_fw_wh, &w.rnn_bw_wh}) {
      *pair = detail::uniform_matrix(rng, hh, hh, 0.5 / std::sqrt(static_cast<double>(hh)));
    }
    w.rnn_fw_b = Eigen::MatrixXd::Zero(1, hh);
    w.rnn_bw_b = Eigen::MatrixXd::Zero(1, hh);
  }
  const Eigen::Index v = vocab.size();
  const Eigen::Index c = vocab.decoder_classes();
  w.ctc_w = detail::uniform_matrix(rng, h, v, detail::glorot(h, v));
  w.ctc_b = Eigen::MatrixXd::Zero(1, v);
  w.dec_embed = detail::uniform_matrix(rng, c, h, 0.5);
  w.dec_pos = detail::uniform_matrix(rng, kMaxDecoderSteps, h, 0.5);
  w.dec_loc = Eigen::MatrixXd(1, 2);
  w.dec_loc << 1.0, 2.0;
  w.dec_out_w = detail::uniform_matrix(rng, 2 * h, c, detail::glorot(2 * h, c));
  w.dec_out_b = Eigen::MatrixXd::Zero(1, c);
  return p;
}

namespace detail {

struct EncoderTape {
  Eigen::MatrixXd input;  // normalized features
  Eigen::MatrixXd patches1, act1, patches2;
  Eigen::MatrixXd fw, bw;
  Eigen::MatrixXd out;  // T x kHidden
};

// Rows of `x` stacked over a centered window of `kConvKernel` frames, with
// zero padding at both ends so the frame count is preserved.
inline Eigen::MatrixXd im2col(const Eigen::MatrixXd& x) {
  const Eigen::Index t_len = x.rows(), d = x.cols();
  constexpr int half = kConvKernel / 2;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(t_len, kConvKernel * d);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    for (int j = 0; j < kConvKernel; ++j) {
      const Eigen::Index src = t + j - half;
      if (src >= 0 && src < t_len) p.block(t, j * d, 1, d) = x.row(src);
    }
  }
  return p;
}

inline Eigen::MatrixXd col2im(const Eigen::MatrixXd& dp, Eigen::Index d) {
  const Eigen::Index t_len = dp.rows();
  constexpr int half = kConvKernel / 2;
  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(t_len, d);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    for (int j = 0; j < kConvKernel; ++j) {
      const Eigen::Index src = t + j - half;
      if (src >= 0 && src < t_len) dx.row(src) += dp.block(t, j * d, 1, d);
    }
  }
  return dx;
}

inline Eigen::MatrixXd tanh_affine(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w,
                                   const Eigen::MatrixXd& b) {
  Eigen::MatrixXd y = x * w;
  y.rowwise() += b.row(0);
  return y.array().tanh().matrix();
}

inline Eigen::MatrixXd run_rnn(const Eigen::MatrixXd& x, const Eigen::MatrixXd& wx,
                               const Eigen::MatrixXd& wh, const Eigen::MatrixXd& b,
                               bool reverse) {
  const Eigen::Index t_len = x.rows();
  Eigen::MatrixXd pre = x * wx;
  pre.rowwise() += b.row(0);
  Eigen::MatrixXd h(t_len, wh.rows());
  Eigen::RowVectorXd prev = Eigen::RowVectorXd::Zero(wh.rows());
  for (Eigen::Index i = 0; i < t_len; ++i) {
    const Eigen::Index t = reverse ? t_len - 1 - i : i;
    h.row(t) = (pre.row(t) + prev * wh).array().tanh();
    prev = h.row(t);
  }
  return h;
}

// Backpropagation through time for one direction; returns d input.
inline Eigen::MatrixXd rnn_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& h,
                                    const Eigen::MatrixXd& dh_out, const Eigen::MatrixXd& wx,
                                    const Eigen::MatrixXd& wh, bool reverse, Eigen::MatrixXd* dwx,
                                    Eigen::MatrixXd* dwh, Eigen::MatrixXd* db) {
  const Eigen::Index t_len = x.rows();
  Eigen::MatrixXd dpre(t_len, wh.rows());
  Eigen::RowVectorXd carry = Eigen::RowVectorXd::Zero(wh.rows());
  for (Eigen::Index i = t_len - 1; i >= 0; --i) {
    const Eigen::Index t = reverse ? t_len - 1 - i : i;
    const Eigen::RowVectorXd dh = dh_out.row(t) + carry;
    dpre.row(t) = dh.array() * (1.0 - h.row(t).array().square());
    carry = dpre.row(t) * wh.transpose();
    if (dwh != nullptr && i > 0) {
      const Eigen::Index prev = reverse ? t + 1 : t - 1;
      dwh->noalias() += h.row(prev).transpose() * dpre.row(t);
    }
  }
  if (dwx != nullptr) dwx->noalias() += x.transpose() * dpre;
  if (db != nullptr) *db += dpre.colwise().sum();
  return dpre * wx.transpose();
}

inline EncoderTape encode_forward(const ModelParams& p, const Eigen::MatrixXd& feats) {
  if (feats.cols() != kNumMels) throw ParameterError("encode: expected 40 feature columns");
  const auto& w = p.weights;
  EncoderTape tape;
  tape.input = ((feats.rowwise() - p.norm_mean).array().rowwise() * p.norm_inv_std.array())
                   .matrix();
  if (p.arch == Arch::kConvNetA) {
    if (w.conv1_w.size() == 0) throw ParameterError("encode: convnet-A weights missing");
    tape.patches1 = im2col(tape.input);
    tape.act1 = tanh_affine(tape.patches1, w.conv1_w, w.conv1_b);
    tape.patches2 = im2col(tape.act1);
    tape.out = tanh_affine(tape.patches2, w.conv2_w, w.conv2_b);
  } else {
    if (w.rnn_fw_wx.size() == 0) throw ParameterError("encode: recurrent-B weights missing");
    tape.fw = run_rnn(tape.input, w.rnn_fw_wx, w.rnn_fw_wh, w.rnn_fw_b, false);
    tape.bw = run_rnn(tape.input, w.rnn_bw_wx, w.rnn_bw_wh, w.rnn_bw_b, true);
    tape.out.resize(tape.input.rows(), kHidden);
    tape.out << tape.fw, tape.bw;
  }
  return tape;
}

// Returns d loss / d raw features. Weight gradients accumulate into `g`.
inline Eigen::MatrixXd encode_backward(const ModelParams& p, const EncoderTape& tape,
                                       const Eigen::MatrixXd& d_out, Weights* g) {
  const auto& w = p.weights;
  Eigen::MatrixXd d_input;
  if (p.arch == Arch::kConvNetA) {
    const Eigen::MatrixXd d_pre2 = (d_out.array() * (1.0 - tape.out.array().square())).matrix();
    if (g) {
      g->conv2_w.noalias() += tape.patches2.transpose() * d_pre2;
      g->conv2_b += d_pre2.colwise().sum();
    }
    const Eigen::MatrixXd d_act1 = col2im(d_pre2 * w.conv2_w.transpose(), kHidden);
    const Eigen::MatrixXd d_pre1 = (d_act1.array() * (1.0 - tape.act1.array().square())).matrix();
    if (g) {
      g->conv1_w.noalias() += tape.patches1.transpose() * d_pre1;
      g->conv1_b += d_pre1.colwise().sum();
    }
    d_input = col2im(d_pre1 * w.conv1_w.transpose(), kNumMels);
  } else {
    const Eigen::MatrixXd d_fw = d_out.leftCols(kRecurrentHalf);
    const Eigen::MatrixXd d_bw = d_out.rightCols(kRecurrentHalf);
    d_input = rnn_backward(tape.input, tape.fw, d_fw, w.rnn_fw_wx, w.rnn_fw_wh, false,
                           g ? &g->rnn_fw_wx : nullptr, g ? &g->rnn_fw_wh : nullptr,
                           g ? &g->rnn_fw_b : nullptr);
    d_input += rnn_backward(tape.input, tape.bw, d_bw, w.rnn_bw_wx, w.rnn_bw_wh, true,
                            g ? &g->rnn_bw_wx : nullptr, g ? &g->rnn_bw_wh : nullptr,
                            g ? &g->rnn_bw_b : nullptr);
  }
  return (d_input.array().rowwise() * p.norm_inv_std.array()).matrix();
}

struct DecoderTape {
  std::vector<TokenId> inputs;   // sentinel, y1..yM
  std::vector<TokenId> targets;  // y1..yM, sentinel
  std::vector<int> positions;
  Eigen::MatrixXd query;   // S x H
  Eigen::MatrixXd offset;  // S x T, frame position minus previous focus
  Eigen::MatrixXd attn;    // S x T
  Eigen::MatrixXd joined;  // S x 2H, [context | query]
  Eigen::MatrixXd logits;  // S x classes
};

// Frame positions enter the attention in units of this many frames.
inline constexpr double kLocationScale = 10.0;

inline double location_term(const Eigen::MatrixXd& loc, double offset) {
  return offset > 0.0 ? -loc(0, 0) * offset : loc(0, 1) * offset;
}

// Teacher-forced decoder step i: query_i = tanh(embed[y_{i-1}] + pos[i]),
// single-head scaled dot-product attention over encoder frames, then a linear
// readout from [context | query]. Scores carry a penalty growing with the
// distance from the previous step's mean attended position (from frame 0 at
// the first step), slope loc[0] forward and loc[1] backward.
inline DecoderTape decode_forward(const ModelParams& p, const Eigen::MatrixXd& enc,
                                  const Transcript& teacher) {
  const auto& w = p.weights;
  const TokenId sentinel = p.vocab.sentinel();
  DecoderTape tape;
  tape.inputs.push_back(sentinel);
  for (TokenId id : teacher.words) {
    tape.inputs.push_back(id);
    tape.targets.push_back(id);
  }
  tape.targets.push_back(sentinel);
  const auto steps = static_cast<Eigen::Index>(tape.inputs.size());
  const Eigen::Index t_len = enc.rows();
  tape.query.resize(steps, kHidden);
  for (Eigen::Index i = 0; i < steps; ++i) {
    const int pos = std::min<int>(static_cast<int>(i), kMaxDecoderSteps - 1);
    tape.positions.push_back(pos);
    tape.query.row(i) =
        (w.dec_embed.row(tape.inputs[static_cast<std::size_t>(i)]) + w.dec_pos.row(pos))
            .array()
            .tanh();
  }
  const Eigen::RowVectorXd frame_pos =
      Eigen::RowVectorXd::LinSpaced(t_len, 0.0, static_cast<double>(t_len - 1)) / kLocationScale;
  const double scale = 1.0 / std::sqrt(static_cast<double>(kHidden));
  const Eigen::MatrixXd content = scale * tape.query * enc.transpose();
  tape.offset.resize(steps, t_len);
  tape.attn.resize(steps, t_len);
  double focus = 0.0;
  for (Eigen::Index i = 0; i < steps; ++i) {
    Eigen::MatrixXd row = content.row(i);
    for (Eigen::Index t = 0; t < t_len; ++t) {
      tape.offset(i, t) = frame_pos(t) - focus;
      row(0, t) += location_term(w.dec_loc, tape.offset(i, t));
    }
    tape.attn.row(i) = softmax_rows(row);
    focus = tape.attn.row(i).dot(frame_pos);
  }
  tape.joined.resize(steps, 2 * kHidden);
  tape.joined << tape.attn * enc, tape.query;
  tape.logits = tape.joined * w.dec_out_w;
  tape.logits.rowwise() += w.dec_out_b.row(0);
  return tape;
}

inline void decode_backward(const ModelParams& p, const Eigen::MatrixXd& enc,
                            const DecoderTape& tape, const Eigen::MatrixXd& d_logits,
                            Weights* g, Eigen::MatrixXd& d_enc) {
  const auto& w = p.weights;
  if (g) {
    g->dec_out_w.noalias() += tape.joined.transpose() * d_logits;
    g->dec_out_b += d_logits.colwise().sum();
  }
  const Eigen::MatrixXd d_joined = d_logits * w.dec_out_w.transpose();
  const Eigen::MatrixXd d_ctx = d_joined.leftCols(kHidden);
  Eigen::MatrixXd d_query = d_joined.rightCols(kHidden);
  d_enc.noalias() += tape.attn.transpose() * d_ctx;
  Eigen::MatrixXd d_attn = d_ctx * enc.transpose();
  const Eigen::Index steps = tape.attn.rows(), t_len = tape.attn.cols();
  Eigen::MatrixXd d_scores(steps, t_len);
  // Step i's scores depend on step i-1's attention through the focus, so
  // rows are finished in reverse order.
  for (Eigen::Index i = steps - 1; i >= 0; --i) {
    const double inner = d_attn.row(i).dot(tape.attn.row(i));
    d_scores.row(i) = (tape.attn.row(i).array() * (d_attn.row(i).array() - inner)).matrix();
    double d_focus = 0.0;
    for (Eigen::Index t = 0; t < t_len; ++t) {
      const double u = tape.offset(i, t), ds = d_scores(i, t);
      if (u > 0.0) {
        d_focus += ds * w.dec_loc(0, 0);
        if (g) g->dec_loc(0, 0) -= ds * u;
      } else {
        d_focus -= ds * w.dec_loc(0, 1);
        if (g) g->dec_loc(0, 1) += ds * u;
      }
    }
    if (i > 0) {
      for (Eigen::Index t = 0; t < t_len; ++t) {
        d_attn(i - 1, t) += d_focus * static_cast<double>(t) / kLocationScale;
      }
    }
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(kHidden));
  d_query.noalias() += scale * d_scores * enc;
  d_enc.noalias() += scale * d_scores.transpose() * tape.query;
  if (g) {
    const Eigen::MatrixXd d_pre =
        (d_query.array() * (1.0 - tape.query.array().square())).matrix();
    for (Eigen::Index i = 0; i < d_pre.rows(); ++i) {
      g->dec_embed.row(tape.inputs[static_cast<std::size_t>(i)]) += d_pre.row(i);
      g->dec_pos.row(tape.positions[static_cast<std::size_t>(i)]) += d_pre.row(i);
    }
  }
}

}  // namespace detail

// Everything a backward pass needs from one forward evaluation.
struct ForwardPass {
  detail::EncoderTape enc;
  Eigen::MatrixXd ctc_logits;
  std::optional<detail::DecoderTape> dec;
};

inline ForwardPass forward(const ModelParams& p, const Eigen::MatrixXd& feats,
                           const Transcript* teacher) {
  ForwardPass pass;
  pass.enc = detail::encode_forward(p, feats);
  pass.ctc_logits = pass.enc.out * p.weights.ctc_w;
  pass.ctc_logits.rowwise() += p.weights.ctc_b.row(0);
  if (teacher != nullptr) pass.dec = detail::decode_forward(p, pass.enc.out, *teacher);
  return pass;
}

// Propagates upstream gradients of the CTC logits and/or decoder logits (null
// means zero) back to the features. Weight gradients accumulate into `g`.
inline Eigen::MatrixXd backward(const ModelParams& p, const ForwardPass& pass,
                                const Eigen::MatrixXd* d_ctc, const Eigen::MatrixXd* d_att,
                                Weights* g) {
  Eigen::MatrixXd d_enc = Eigen::MatrixXd::Zero(pass.enc.out.rows(), kHidden);
  if (d_ctc != nullptr) {
    if (g) {
      g->ctc_w.noalias() += pass.enc.out.transpose() * (*d_ctc);
      g->ctc_b += d_ctc->colwise().sum();
    }
    d_enc.noalias() += (*d_ctc) * p.weights.ctc_w.transpose();
  }
  if (d_att != nullptr) {
    if (!pass.dec) throw ParameterError("backward: decoder gradient without decoder pass");
    detail::decode_backward(p, pass.enc.out, *pass.dec, *d_att, g, d_enc);
  }
  return detail::encode_backward(p, pass.enc, d_enc, g);
}

// Frame encodings, T_frames x kHidden.
inline Eigen::MatrixXd encode(const ModelParams& p, const FeatureMatrix& feats) {
  return detail::encode_forward(p, feats.frames).out;
}

inline Eigen::MatrixXd ctc_frame_logits(const ModelParams& p, const FeatureMatrix& feats) {
  return forward(p, feats.frames, nullptr).ctc_logits;
}

inline Eigen::MatrixXd ctc_frame_logits(const ModelParams& p, const Waveform& w) {
  return ctc_frame_logits(p, log_mel(w));
}

namespace detail {

struct CrossEntropy {
  double loss = 0.0;
  Eigen::MatrixXd grad;
};

inline CrossEntropy cross_entropy(const Eigen::MatrixXd& logits,
                                  const std::vector<TokenId>& targets) {
  const Eigen::MatrixXd lp = log_softmax_rows(logits);
  CrossEntropy out;
  out.grad = lp.array().exp().matrix();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.loss -= lp(r, targets[i]);
    out.grad(r, targets[i]) -= 1.0;
  }
  return out;
}

}  // namespace detail

struct AttentionLoss {
  double loss = 0.0;
  Weights grads;
};

// Teacher-forced next-token cross-entropy summed over the M words plus the
// end sentinel. An empty target leaves only the sentinel step.
inline AttentionLoss attention_loss(const ModelParams& p, const FeatureMatrix& feats,
                                    const Transcript& target) {
  target.validate(p.vocab);
  const ForwardPass pass = forward(p, feats.frames, &target);
  const auto ce = detail::cross_entropy(pass.dec->logits, pass.dec->targets);
  AttentionLoss out;
  out.loss = ce.loss;
  out.grads = p.weights.zeros_like();
  backward(p, pass, nullptr, &ce.grad, &out.grads);
  return out;
}

struct ObjectiveTerms {
  double total = 0.0;
  double ctc = 0.0;
  double att = 0.0;
};

// lambda * CTC + (1 - lambda) * attention on precomputed features. Terms with
// zero weight are skipped entirely. Returns d objective / d features and
// accumulates weight gradients into `g` when given.
inline Eigen::MatrixXd joint_objective(const ModelParams& p, const Eigen::MatrixXd& feats,
                                       const Transcript& target, double lambda,
                                       ObjectiveTerms& terms, Weights* g,
                                       double weight = 1.0) {
  const ForwardPass pass = forward(p, feats, lambda < 1.0 ? &target : nullptr);
  std::optional<Eigen::MatrixXd> d_ctc, d_att;
  terms = {};
  if (lambda > 0.0) {
    auto ctc = ctc_loss(pass.ctc_logits, target);
    terms.ctc = ctc.loss;
    d_ctc = (weight * lambda) * ctc.grad;
  }
  if (lambda < 1.0) {
    auto ce = detail::cross_entropy(pass.dec->logits, pass.dec->targets);
    terms.att = ce.loss;
    d_att = (weight * (1.0 - lambda)) * ce.grad;
  }
  terms.total = lambda * terms.ctc + (1.0 - lambda) * terms.att;
  return backward(p, pass, d_ctc ? &*d_ctc : nullptr, d_att ? &*d_att : nullptr, g);
}

struct JointLoss {
  double loss = 0.0;
  double ctc = 0.0;
  double att = 0.0;
  std::vector<double> input_grad;  // one entry per waveform sample
};

// Joint CTC-attention loss of `target` given audio, with its gradient with
// respect to the waveform samples.
inline JointLoss joint_loss(const ModelParams& p, const Waveform& w, const Transcript& target,
                            double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1]");
  target.validate(p.vocab);
  Eigen::MatrixXd feats;
  const auto tape = detail::log_mel_forward(w, feats);
  ObjectiveTerms terms;
  const Eigen::MatrixXd d_feats = joint_objective(p, feats, target, lambda, terms, nullptr);
  JointLoss out{terms.total, terms.ctc, terms.att, {}};
  out.input_grad = detail::log_mel_backward(tape, d_feats, w.size());
  return out;
}

inline JointLoss joint_loss(const ModelParams& p, const Waveform& w, const Transcript& target) {
  return joint_loss(p, w, target, p.lambda);
}

inline std::vector<TokenId> frame_argmax(const Eigen::MatrixXd& logits) {
  std::vector<TokenId> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    Eigen::Index best = 0;
    logits.row(t).maxCoeff(&best);
    out[static_cast<std::size_t>(t)] = static_cast<TokenId>(best);
  }
  return out;
}

// Per-frame argmax of the CTC head, repeats collapsed, blanks dropped.
inline Transcript decode_greedy(const ModelParams& p, const Waveform& w) {
  return ctc_collapse(frame_argmax(ctc_frame_logits(p, w)));
}

}  // namespace transaudio
