#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace transaudio;
using fixtures::words;

namespace {

Eigen::MatrixXd random_logits(Eigen::Index t, Eigen::Index c, Rng& rng, double scale = 2.0) {
  Eigen::MatrixXd m(t, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

std::vector<int> as_ints(const Transcript& t) { return {t.words.begin(), t.words.end()}; }

// Every transcript over words 1..v of length up to max_len.
std::vector<Transcript> all_transcripts(int v, int max_len) {
  std::vector<Transcript> out{Transcript{}};
  std::size_t begin = 0;
  for (int len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = begin; i < end; ++i) {
      for (int w = 1; w <= v; ++w) {
        Transcript t = out[i];
        t.words.push_back(w);
        out.push_back(t);
      }
    }
    begin = end;
  }
  return out;
}

Vocab vocab_of(int n) {
  std::vector<std::string> w;
  for (int i = 0; i < n; ++i) w.push_back("w" + std::to_string(i));
  return Vocab(w);
}

// |analytic - numeric| / (|numeric| + 1e-8), the finite-difference criterion.
double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(numeric) + 1e-8);
}

}  // namespace

TEST(CtcLoss, SingleFrameSingleWord) {
  Rng rng(1);
  const auto logits = random_logits(1, 4, rng);
  const double lse = std::log(logits.array().exp().sum());
  EXPECT_NEAR(ctc_loss(logits, words({2})).loss, -(logits(0, 2) - lse), 1e-12);
}

TEST(CtcLoss, EmptyTargetIsAllBlank) {
  Rng rng(2);
  const auto logits = random_logits(2, 4, rng);
  double expect = 0.0;
  for (int t = 0; t < 2; ++t) expect -= logits(t, 0) - std::log(logits.row(t).array().exp().sum());
  EXPECT_NEAR(ctc_loss(logits, Transcript{}).loss, expect, 1e-12);
}

TEST(CtcLoss, MatchesBruteForceEnumeration) {
  Rng rng(3);
  int checked = 0;
  for (int v = 1; v <= 3; ++v) {
    for (int t_len = 1; t_len <= 5; ++t_len) {
      for (const auto& target : all_transcripts(v, 3)) {
        if (ctc_min_frames(target) > t_len) continue;
        const auto logits = random_logits(t_len, v + 1, rng);
        const double expect = oracle::ctc_nll_brute_force(logits, as_ints(target));
        const double got = ctc_loss(logits, target).loss;
        EXPECT_LT(std::abs(got - expect) / std::abs(expect), 1e-6);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(CtcLoss, InfeasibleTargetThrows) {
  Rng rng(4);
  EXPECT_THROW(ctc_loss(random_logits(2, 4, rng), words({1, 2, 3})), InfeasibleAlignmentError);
  EXPECT_THROW(ctc_loss(random_logits(2, 4, rng), words({1, 1})), InfeasibleAlignmentError);
  EXPECT_NO_THROW(ctc_loss(random_logits(3, 4, rng), words({1, 1})));
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd logits = random_logits(12, 5, rng);
    const Transcript target = words({1, 3, 3, 2});
    const auto res = ctc_loss(logits, target);
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      const double x0 = logits.data()[i];
      logits.data()[i] = x0 + 1e-6;
      const double fp = ctc_loss(logits, target).loss;
      logits.data()[i] = x0 - 1e-6;
      const double fm = ctc_loss(logits, target).loss;
      logits.data()[i] = x0;
      const double numeric = (fp - fm) / 2e-6;
      EXPECT_NEAR(res.grad.data()[i], numeric, 1e-6 + 1e-4 * std::abs(numeric));
    }
  }
}

TEST(CtcCollapse, GreedyRule) {
  EXPECT_EQ(ctc_collapse({1, 1, 0, 1}).words, (std::vector<TokenId>{1, 1}));
  EXPECT_TRUE(ctc_collapse({0, 0, 0}).empty());
  EXPECT_EQ(ctc_collapse({2, 2, 3, 0, 3, 3}).words, (std::vector<TokenId>{2, 3, 3}));
}

TEST(AttentionLoss, UniformOutputGivesLogClasses) {
  const Vocab vocab = vocab_of(5);
  ModelParams p = init_params(Arch::kConvNetA, vocab, 1);
  p.weights.dec_out_w.setZero();
  p.weights.dec_out_b.setZero();
  const auto feats = log_mel(fixtures::noise(3000, 2));
  for (const auto& t : {Transcript{}, words({1}), words({2, 4, 1})}) {
    const double expect = static_cast<double>(t.size() + 1) * std::log(vocab.size() + 1.0);
    EXPECT_NEAR(attention_loss(p, feats, t).loss, expect, 1e-9);
  }
}

TEST(AttentionLoss, NonNegative) {
  const ModelParams p = init_params(Arch::kRecurrentB, default_vocab(), 2);
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const auto feats = log_mel(fixtures::noise(2000 + 100 * i, rng.next()));
    EXPECT_GE(attention_loss(p, feats, words({1 + i % 8, 1 + (i * 3) % 8})).loss, 0.0);
  }
}

class WeightGradient : public ::testing::TestWithParam<Arch> {};

TEST_P(WeightGradient, AttentionWeightsMatchFiniteDifferences) {
  ModelParams p = init_params(GetParam(), default_vocab(), 4);
  const auto feats = log_mel(fixtures::noise(2400, 5));
  const Transcript target = words({3, 1, 7});
  const auto res = attention_loss(p, feats, target);
  Rng rng(6);
  for (const auto& [name, f] : Weights::kFields) {
    Eigen::MatrixXd& m = p.weights.*f;
    if (m.size() == 0) continue;
    for (int k = 0; k < 4; ++k) {
      const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(m.size())));
      const double x0 = m.data()[i];
      m.data()[i] = x0 + 1e-6;
      const double fp = attention_loss(p, feats, target).loss;
      m.data()[i] = x0 - 1e-6;
      const double fm = attention_loss(p, feats, target).loss;
      m.data()[i] = x0;
      const double numeric = (fp - fm) / 2e-6;
      const double analytic = (res.grads.*f).data()[i];
      EXPECT_LT(std::abs(analytic - numeric), 1e-3 * std::abs(numeric) + 1e-7)
          << name << "[" << i << "]";
    }
  }
}

TEST_P(WeightGradient, JointObjectiveWeightsMatchFiniteDifferences) {
  ModelParams p = init_params(GetParam(), default_vocab(), 7);
  const auto feats = log_mel(fixtures::noise(2400, 8)).frames;
  const Transcript target = words({2, 5});
  ObjectiveTerms terms;
  Weights g = p.weights.zeros_like();
  joint_objective(p, feats, target, 0.3, terms, &g);
  const auto value = [&] {
    ObjectiveTerms t;
    joint_objective(p, feats, target, 0.3, t, nullptr);
    return t.total;
  };
  Rng rng(9);
  for (const auto& [name, f] : Weights::kFields) {
    Eigen::MatrixXd& m = p.weights.*f;
    if (m.size() == 0) continue;
    for (int k = 0; k < 3; ++k) {
      const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(m.size())));
      const double x0 = m.data()[i];
      m.data()[i] = x0 + 1e-6;
      const double fp = value();
      m.data()[i] = x0 - 1e-6;
      const double fm = value();
      m.data()[i] = x0;
      const double numeric = (fp - fm) / 2e-6;
      EXPECT_LT(std::abs((g.*f).data()[i] - numeric), 1e-3 * std::abs(numeric) + 1e-7)
          << name << "[" << i << "]";
    }
  }
}

INSTANTIATE_TEST_SUITE_P(BothArchitectures, WeightGradient,
                         ::testing::Values(Arch::kConvNetA, Arch::kRecurrentB),
                         [](const auto& info) {
                           return info.param == Arch::kConvNetA ? "ConvNetA" : "RecurrentB";
                         });

TEST(JointLoss, LambdaEndpointsAndAffinity) {
  const ModelParams p = init_params(Arch::kConvNetA, default_vocab(), 10);
  const Waveform w = fixtures::noise(3000, 11);
  const Transcript target = words({4, 2, 6});
  const double j1 = joint_loss(p, w, target, 1.0).loss;
  const double j0 = joint_loss(p, w, target, 0.0).loss;
  EXPECT_NEAR(j1, ctc_loss(ctc_frame_logits(p, w), target).loss, 1e-12);
  EXPECT_NEAR(j0, attention_loss(p, log_mel(w), target).loss, 1e-12);
  for (double lambda : {0.1, 0.3, 0.5, 0.9}) {
    EXPECT_NEAR(joint_loss(p, w, target, lambda).loss, lambda * j1 + (1 - lambda) * j0, 1e-9);
  }
  EXPECT_THROW(joint_loss(p, w, target, 1.5), ParameterError);
}

TEST(JointLoss, InputGradientMatchesFiniteDifferences) {
  for (Arch arch : {Arch::kConvNetA, Arch::kRecurrentB}) {
    const ModelParams& p = fixtures::quick_model(arch);
    const Waveform w = fixtures::noise(3200, 12);
    const Transcript target = words({1, 5, 3});
    const auto g = joint_loss(p, w, target).input_grad;
    ASSERT_EQ(g.size(), w.size());
    const auto f = [&](const std::vector<double>& x) {
      return joint_loss(p, Waveform(x), target).loss;
    };
    Rng rng(13);
    for (int k = 0; k < 50; ++k) {
      const std::size_t i = rng.index(w.size());
      const double numeric = oracle::central_difference(f, w.samples, i, 1e-5);
      EXPECT_LT(rel_err(g[i], numeric), 1e-3) << to_string(arch) << " coordinate " << i;
    }
  }
}

TEST(Encode, ShapeDeterminismAndZeroInput) {
  for (Arch arch : {Arch::kConvNetA, Arch::kRecurrentB}) {
    ModelParams p = init_params(arch, default_vocab(), 14);
    const auto feats = log_mel(fixtures::noise(2000, 15));
    const auto a = encode(p, feats);
    EXPECT_EQ(a.rows(), feats.num_frames());
    EXPECT_EQ(a.cols(), kHidden);
    EXPECT_EQ(a, encode(p, feats));
    p.norm_mean.setZero();
    for (auto* b : {&p.weights.conv1_b, &p.weights.conv2_b, &p.weights.rnn_fw_b,
                    &p.weights.rnn_bw_b}) {
      b->setZero();
    }
    FeatureMatrix zero{Eigen::MatrixXd::Zero(feats.num_frames(), kNumMels)};
    EXPECT_EQ(encode(p, zero).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(DecodeGreedy, Deterministic) {
  const ModelParams& p = fixtures::quick_model(Arch::kRecurrentB);
  const auto items = fixtures::corpus(3, 77);
  for (const auto& it : items) {
    EXPECT_EQ(decode_greedy(p, it.waveform).words, decode_greedy(p, it.waveform).words);
  }
}

TEST(Train, SameSeedBitIdenticalAndLossDecreases) {
  const auto items = fixtures::corpus(16, 21);
  TrainOptions opt;
  opt.epochs = 2;
  opt.seed = 3;
  const auto a = train(Arch::kConvNetA, default_vocab(), items, opt);
  const auto b = train(Arch::kConvNetA, default_vocab(), items, opt);
  EXPECT_TRUE(a.params.weights == b.params.weights);
  EXPECT_EQ(a.params.norm_mean, b.params.norm_mean);
  EXPECT_LT(a.epoch_loss.back(), a.initial_loss);
  opt.seed = 4;
  const auto c = train(Arch::kConvNetA, default_vocab(), items, opt);
  EXPECT_FALSE(a.params.weights == c.params.weights);
}

TEST(Train, DivergenceIsTrainingError) {
  const auto items = fixtures::corpus(8, 22);
  TrainOptions opt;
  opt.epochs = 3;
  opt.learning_rate = 1e200;
  opt.clip_norm = 1e300;
  EXPECT_THROW(train(Arch::kRecurrentB, default_vocab(), items, opt), TrainingError);
}

TEST(Train, RejectsEmptyCorpus) {
  EXPECT_THROW(train(Arch::kConvNetA, default_vocab(), {}, {}), ParameterError);
}

TEST(Serialize, RoundTripIsExact) {
  const ModelParams& p = fixtures::quick_model(Arch::kRecurrentB);
  const auto dir = fixtures::temp_dir("serialize");
  const auto path = (dir / "m.json").string();
  save_model(p, path);
  const ModelParams q = load_model(path);
  EXPECT_EQ(q.arch, p.arch);
  EXPECT_EQ(q.vocab.words(), p.vocab.words());
  EXPECT_EQ(q.lambda, p.lambda);
  EXPECT_EQ(q.norm_mean, p.norm_mean);
  EXPECT_EQ(q.norm_inv_std, p.norm_inv_std);
  EXPECT_TRUE(q.weights == p.weights);
}

TEST(Serialize, RejectsBadFiles) {
  auto j = model_to_json(fixtures::quick_model(Arch::kConvNetA));
  auto wrong_format = j;
  wrong_format["format"] = "something-else";
  EXPECT_THROW(model_from_json(wrong_format), FormatError);
  auto wrong_version = j;
  wrong_version["version"] = 99;
  EXPECT_THROW(model_from_json(wrong_version), FormatError);
  auto wrong_shape = j;
  wrong_shape["weights"]["ctc_w"]["rows"] = 3;
  EXPECT_THROW(model_from_json(wrong_shape), FormatError);
  auto missing = j;
  missing["weights"].erase("dec_loc");
  EXPECT_THROW(model_from_json(missing), FormatError);
  EXPECT_THROW(load_model("/nonexistent/model.json"), IoError);
}
