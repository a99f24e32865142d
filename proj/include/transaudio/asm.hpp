#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "transaudio/error.hpp"
#include "transaudio/frontend.hpp"
#include "transaudio/model.hpp"
#include "transaudio/parallel.hpp"
#include "transaudio/rng.hpp"
#include "transaudio/synth.hpp"
#include "transaudio/train.hpp"

namespace transaudio {

struct AsmConfig {
  double lambda_asm = 0.01;
  int n_probes = 4;
  double fd_epsilon = 1e-3;
  int epochs = 2;
  double learning_rate = 3e-5;  // larger steps chase the unbounded trace term and wreck recognition
  int batch_size = 8;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lambda_asm >= 0.0)) throw ParameterError("lambda_asm must be non-negative");
    if (n_probes < 1) throw ParameterError("n_probes must be at least 1");
    if (!(fd_epsilon > 0.0)) throw ParameterError("fd_epsilon must be positive");
    if (epochs < 1 || batch_size < 1) throw ParameterError("bad fine-tuning schedule");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ParameterError("learning rate must be positive");
  }
};

namespace detail {

inline void check_token(const Transcript& transcript, int t) {
  if (t < 1 || static_cast<std::size_t>(t) > transcript.size()) {
    throw ParameterError("token index " + std::to_string(t) + " out of range");
  }
}

// Teacher-forced decoder log-probabilities of z_1..z_M at waveform `w`.
// With `weights` and `g`, accumulates the parameter gradient of
// sum_t weights[t-1] * log p(z_t) into `g`.
inline Eigen::VectorXd token_log_probs(const ModelParams& p, const Waveform& w,
                                       const Transcript& transcript,
                                       const Eigen::VectorXd* weights = nullptr,
                                       Weights* g = nullptr) {
  const FeatureMatrix feats = log_mel(w);
  const ForwardPass pass = forward(p, feats.frames, &transcript);
  const Eigen::MatrixXd lp = log_softmax_rows(pass.dec->logits);
  const auto m = static_cast<Eigen::Index>(transcript.size());
  Eigen::VectorXd out(m);
  for (Eigen::Index i = 0; i < m; ++i) out(i) = lp(i, transcript.words[static_cast<std::size_t>(i)]);
  if (weights != nullptr && g != nullptr) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(lp.rows(), lp.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
      const double c = (*weights)(i);
      if (c == 0.0) continue;
      d.row(i) = -c * lp.row(i).array().exp().matrix();
      d(i, transcript.words[static_cast<std::size_t>(i)]) += c;
    }
    backward(p, pass, nullptr, &d, g);
  }
  return out;
}

inline Waveform shifted(const Waveform& w, const std::vector<double>& dir, double step) {
  Waveform out = w;
  for (std::size_t i = 0; i < dir.size(); ++i) out.samples[i] += step * dir[i];
  return out;
}

}  // namespace detail

// log p(z_t | z_<t, X) from the attention decoder, t 1-based.
inline double token_log_prob(const ModelParams& p, const Waveform& w, const Transcript& transcript,
                             int t) {
  detail::check_token(transcript, t);
  return detail::token_log_probs(p, w, transcript)(t - 1);
}

// Gradient of token_log_prob with respect to the waveform samples.
inline std::vector<double> token_score(const ModelParams& p, const Waveform& w,
                                       const Transcript& transcript, int t) {
  detail::check_token(transcript, t);
  Eigen::MatrixXd feats;
  const auto tape = detail::log_mel_forward(w, feats);
  const ForwardPass pass = forward(p, feats, &transcript);
  const Eigen::MatrixXd lp = detail::log_softmax_rows(pass.dec->logits);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(lp.rows(), lp.cols());
  const Eigen::Index row = t - 1;
  d.row(row) = -lp.row(row).array().exp().matrix();
  d(row, transcript.words[static_cast<std::size_t>(row)]) += 1.0;
  const Eigen::MatrixXd d_feats = backward(p, pass, nullptr, &d, nullptr);
  auto grad = detail::log_mel_backward(tape, d_feats, w.size());
  for (double v : grad) {
    if (!std::isfinite(v)) throw NumericalError("token_score: non-finite gradient");
  }
  return grad;
}

// Hutchinson estimate of the trace of the Jacobian of `score` at `x`:
// the mean of v'Hv over Rademacher probes v, with Hv taken as the central
// difference of `score` along v.
template <class ScoreFn>
double hutchinson_trace(ScoreFn&& score, const std::vector<double>& x, int n_probes,
                        double fd_epsilon, std::uint64_t seed) {
  if (n_probes < 1) throw ParameterError("hutchinson_trace: n_probes must be at least 1");
  if (!(fd_epsilon > 0.0)) throw ParameterError("hutchinson_trace: fd_epsilon must be positive");
  Rng rng(seed);
  std::vector<double> v(x.size()), plus(x.size()), minus(x.size());
  double total = 0.0;
  for (int k = 0; k < n_probes; ++k) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      v[i] = rng.rademacher();
      plus[i] = x[i] + fd_epsilon * v[i];
      minus[i] = x[i] - fd_epsilon * v[i];
    }
    const std::vector<double> sp = score(plus);
    const std::vector<double> sm = score(minus);
    double quad = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) quad += v[i] * (sp[i] - sm[i]);
    total += quad / (2.0 * fd_epsilon);
  }
  return total / n_probes;
}

inline double hutchinson_trace(const ModelParams& p, const Waveform& w,
                               const Transcript& transcript, int t, int n_probes,
                               double fd_epsilon, std::uint64_t seed) {
  detail::check_token(transcript, t);
  const auto score = [&](const std::vector<double>& x) {
    return token_score(p, Waveform(x, w.sample_rate), transcript, t);
  };
  return hutchinson_trace(score, w.samples, n_probes, fd_epsilon, seed);
}

// ||s_t||^2 + 2 tr(ds_t/dX) for token t. All tokens share the probe seed.
inline double asm_token_term(const ModelParams& p, const Waveform& w,
                             const Transcript& transcript, int t, const AsmConfig& cfg) {
  const auto s = token_score(p, w, transcript, t);
  double norm2 = 0.0;
  for (double v : s) norm2 += v * v;
  return norm2 + 2.0 * hutchinson_trace(p, w, transcript, t, cfg.n_probes, cfg.fd_epsilon,
                                        mix_seed(cfg.seed, 0x68757463ULL));
}

// Mean of asm_token_term over the transcript, summed in token order.
inline double asm_loss(const ModelParams& p, const Waveform& w, const Transcript& transcript,
                       const AsmConfig& cfg) {
  cfg.validate();
  if (transcript.empty()) throw ParameterError("asm_loss: empty transcript");
  double sum = 0.0;
  for (int t = 1; t <= static_cast<int>(transcript.size()); ++t) {
    sum += asm_token_term(p, w, transcript, t, cfg);
  }
  return sum / static_cast<double>(transcript.size());
}

namespace detail {

struct AsmExample {
  double j_asr = 0.0;
  double j_asm = 0.0;
  Weights grad;
};

// Objective and parameter gradient of J_ASR + lambda * J_ASM for one
// utterance. Parameter derivatives of the input-derivative terms use function
// values only:
//   d/dθ ||s||^2  ~ 2||s|| d/dθ [f(X + h u) - f(X - h u)] / (2h),  u = s/||s||
//   d/dθ v'Hv     ~ d/dθ [f(X + 2εv) - 2 f(X) + f(X - 2εv)] / (4ε^2)
// and J_ASM is reported with the same estimates.
inline AsmExample asm_example(const ModelParams& p, const Eigen::MatrixXd& feats,
                              const CorpusItem& item, const AsmConfig& cfg,
                              std::uint64_t probe_seed) {
  AsmExample out;
  out.grad = p.weights.zeros_like();
  ObjectiveTerms terms;
  joint_objective(p, feats, item.transcript, p.lambda, terms, &out.grad);
  out.j_asr = terms.total;
  const auto m = static_cast<Eigen::Index>(item.transcript.size());
  if (cfg.lambda_asm == 0.0 || m == 0) return out;

  const double h = cfg.fd_epsilon;
  const double scale = cfg.lambda_asm / static_cast<double>(m);
  const Waveform& x = item.waveform;
  double norm_sum = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto s = token_score(p, x, item.transcript, static_cast<int>(i + 1));
    double norm2 = 0.0;
    for (double v : s) norm2 += v * v;
    norm_sum += norm2;
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) continue;
    std::vector<double> u(s.size());
    for (std::size_t j = 0; j < s.size(); ++j) u[j] = s[j] / norm;
    Eigen::VectorXd weight = Eigen::VectorXd::Zero(m);
    weight(i) = scale * 2.0 * norm / (2.0 * h);
    token_log_probs(p, shifted(x, u, h), item.transcript, &weight, &out.grad);
    weight(i) = -weight(i);
    token_log_probs(p, shifted(x, u, -h), item.transcript, &weight, &out.grad);
  }

  const double e2 = 2.0 * h;
  const double curv = 1.0 / (4.0 * h * h);
  const double per_probe = scale * 2.0 * curv / cfg.n_probes;
  Eigen::VectorXd w_side = Eigen::VectorXd::Constant(m, per_probe);
  Eigen::VectorXd w_centre = Eigen::VectorXd::Constant(m, -2.0 * per_probe * cfg.n_probes);
  const Eigen::VectorXd f0 = token_log_probs(p, x, item.transcript, &w_centre, &out.grad);
  Rng rng(probe_seed);
  std::vector<double> v(x.size());
  double trace_sum = 0.0;
  for (int k = 0; k < cfg.n_probes; ++k) {
    for (auto& e : v) e = rng.rademacher();
    const Eigen::VectorXd fp = token_log_probs(p, shifted(x, v, e2), item.transcript, &w_side, &out.grad);
    const Eigen::VectorXd fm = token_log_probs(p, shifted(x, v, -e2), item.transcript, &w_side, &out.grad);
    trace_sum += ((fp - 2.0 * f0 + fm) * curv).sum();
  }
  out.j_asm = (norm_sum + 2.0 * trace_sum / cfg.n_probes) / static_cast<double>(m);
  if (!std::isfinite(out.j_asm)) throw TrainingError("ASM objective is not finite");
  return out;
}

}  // namespace detail

struct AsmEpochLog {
  int epoch = 0;
  double j_asr = 0.0;
  double j_asm = 0.0;
  double wall_time = 0.0;  // seconds since fine-tuning started
};

struct AsmResult {
  ModelParams params;
  std::vector<AsmEpochLog> log;
};

inline nlohmann::json to_json(const AsmEpochLog& e) {
  return {{"epoch", e.epoch}, {"j_asr", e.j_asr}, {"j_asm", e.j_asm}, {"wall_time", e.wall_time}};
}

// Minibatch Adam on J_ASR + lambda_asm * J_ASM starting from `start`. One JSON
// line per epoch goes to `log_out` when given. With lambda_asm = 0 no ASM
// quantity is computed and the run is plain J_ASR fine-tuning.
inline AsmResult finetune_asm(const ModelParams& start, std::span<const CorpusItem> corpus,
                              const AsmConfig& cfg, std::ostream* log_out = nullptr) {
  cfg.validate();
  if (corpus.empty()) throw ParameterError("finetune_asm: empty corpus");
  AsmResult result{start, {}};
  ModelParams& params = result.params;
  const auto feats = corpus_features(corpus);
  const std::size_t n = corpus.size();
  std::vector<detail::AsmExample> ex(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Adam adam(params.weights);
  Rng rng(mix_seed(cfg.seed, 0x61736dULL));
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double asr_sum = 0.0, asm_sum = 0.0;
    for (std::size_t b = 0; b < n; b += batch) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(batch, n - b));
      try {
        parallel_for(idx.size(), [&](std::size_t j) {
          const std::size_t i = idx[j];
          const std::uint64_t probe_seed =
              mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)), i);
          ex[i] = detail::asm_example(params, feats[i], corpus[i], cfg, probe_seed);
        });
      } catch (const NumericalError& e) {
        throw TrainingError("fine-tuning diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      Weights g = params.weights.zeros_like();
      for (std::size_t i : idx) {
        g += ex[i].grad;
        asr_sum += ex[i].j_asr;
        asm_sum += ex[i].j_asm;
      }
      g *= 1.0 / static_cast<double>(idx.size());
      clip_gradient(g, cfg.clip_norm);
      adam.step(params.weights, g, cfg.learning_rate);
    }
    if (!params.weights.all_finite() || !std::isfinite(asr_sum) || !std::isfinite(asm_sum)) {
      throw TrainingError("fine-tuning diverged at epoch " + std::to_string(epoch));
    }
    AsmEpochLog e;
    e.epoch = epoch;
    e.j_asr = asr_sum / n;
    e.j_asm = asm_sum / n;
    e.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(e);
    if (log_out != nullptr) *log_out << to_json(e).dump() << '\n' << std::flush;
  }
  return result;
}

}  // namespace transaudio
