#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "transaudio/error.hpp"
#include "transaudio/frontend.hpp"
#include "transaudio/metrics.hpp"
#include "transaudio/model.hpp"
#include "transaudio/parallel.hpp"
#include "transaudio/rng.hpp"
#include "transaudio/synth.hpp"

namespace transaudio {

struct TrainOptions {
  int epochs = 25;
  double learning_rate = 3e-3;
  std::uint64_t seed = 1;
  double lambda = kDefaultLambda;
  int batch_size = 8;
  double clip_norm = 5.0;
};

struct TrainResult {
  ModelParams params;
  double initial_loss = 0.0;        // mean joint loss before the first update
  std::vector<double> epoch_loss;   // mean joint loss seen during each epoch
};

class Adam {
 public:
  explicit Adam(const Weights& like, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(like.zeros_like()), v_(like.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Weights& w, const Weights& g, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (const auto& [name, f] : Weights::kFields) {
      auto& m = m_.*f;
      auto& v = v_.*f;
      const auto& grad = g.*f;
      m = beta1_ * m + (1.0 - beta1_) * grad;
      v = beta2_ * v + (1.0 - beta2_) * grad.cwiseProduct(grad);
      (w.*f).array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
  }

 private:
  Weights m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

// Rescales `g` in place so its global norm is at most `max_norm`.
inline void clip_gradient(Weights& g, double max_norm) {
  const double norm = std::sqrt(g.squared_norm());
  if (!std::isfinite(norm)) throw TrainingError("gradient norm is not finite");
  if (max_norm > 0.0 && norm > max_norm) g *= max_norm / norm;
}

inline void fit_normalization(ModelParams& p, const std::vector<Eigen::MatrixXd>& feats) {
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(kNumMels);
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(kNumMels);
  double rows = 0.0;
  for (const auto& f : feats) {
    sum += f.colwise().sum();
    sq += f.array().square().matrix().colwise().sum();
    rows += static_cast<double>(f.rows());
  }
  p.norm_mean = sum / rows;
  const Eigen::RowVectorXd var = (sq / rows).array() - p.norm_mean.array().square();
  p.norm_inv_std = var.array().max(1e-6).sqrt().inverse();
}

namespace detail {

// Linear decay from lr to lr/10 over the run.
inline double decayed_lr(double lr, int step, int total) {
  const double frac = total > 1 ? static_cast<double>(step) / (total - 1) : 0.0;
  return lr * (1.0 - 0.9 * frac);
}

}  // namespace detail

inline std::vector<Eigen::MatrixXd> corpus_features(std::span<const CorpusItem> corpus) {
  std::vector<Eigen::MatrixXd> feats(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) { feats[i] = log_mel(corpus[i].waveform).frames; });
  return feats;
}

// Minibatch Adam on the joint loss over a clean corpus. The result is a pure
// function of the inputs and options.seed.
inline TrainResult train(Arch arch, const Vocab& vocab, std::span<const CorpusItem> corpus,
                         const TrainOptions& opt) {
  if (corpus.empty()) throw ParameterError("train: empty corpus");
  if (opt.epochs < 1 || opt.batch_size < 1) throw ParameterError("train: bad options");
  TrainResult result;
  result.params = init_params(arch, vocab, opt.seed);
  ModelParams& params = result.params;
  params.lambda = opt.lambda;
  const auto feats = corpus_features(corpus);
  fit_normalization(params, feats);

  const std::size_t n = corpus.size();
  std::vector<double> losses(n);
  std::vector<Weights> grads(n);
  auto eval_all = [&](std::span<const std::size_t> idx, bool want_grad) {
    parallel_for(idx.size(), [&](std::size_t j) {
      const std::size_t i = idx[j];
      ObjectiveTerms terms;
      if (want_grad) grads[i] = params.weights.zeros_like();
      joint_objective(params, feats[i], corpus[i].transcript, params.lambda, terms,
                      want_grad ? &grads[i] : nullptr);
      losses[i] = terms.total;
    });
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  eval_all(order, false);
  result.initial_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / n;

  Adam adam(params.weights);
  Rng rng(mix_seed(opt.seed, 0x747261696eULL));
  const auto batch = static_cast<std::size_t>(opt.batch_size);
  const int steps_per_epoch = static_cast<int>((n + batch - 1) / batch);
  const int total_steps = steps_per_epoch * opt.epochs;
  int step = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < n; b += batch) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(batch, n - b));
      eval_all(idx, true);
      Weights g = params.weights.zeros_like();
      for (std::size_t i : idx) {
        g += grads[i];
        epoch_sum += losses[i];
        if (!std::isfinite(losses[i])) throw TrainingError("training loss diverged (NaN)");
      }
      g *= 1.0 / static_cast<double>(idx.size());
      clip_gradient(g, opt.clip_norm);
      adam.step(params.weights, g, detail::decayed_lr(opt.learning_rate, step++, total_steps));
    }
    result.epoch_loss.push_back(epoch_sum / n);
  }
  if (!params.weights.all_finite()) throw TrainingError("training produced non-finite weights");
  return result;
}

inline RecognitionAccuracy evaluate_recognition(const ModelParams& p,
                                                std::span<const CorpusItem> items) {
  std::vector<Transcript> hyps(items.size()), refs(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    hyps[i] = decode_greedy(p, items[i].waveform);
    refs[i] = items[i].transcript;
  });
  return score_recognition(hyps, refs);
}

}  // namespace transaudio
