#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace transaudio;
using fixtures::words;

namespace {

using Field = std::function<std::vector<double>(const std::vector<double>&)>;

// Score of the quadratic field f(x) = -1/2 x'Ax, so the Jacobian is -A and
// the estimator should return -tr(A). Only the symmetric part of A matters.
Field linear_score(const Eigen::MatrixXd& a) {
  return [a](const std::vector<double>& x) {
    const Eigen::VectorXd v = -a * Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return std::vector<double>(v.data(), v.data() + v.size());
  };
}

Eigen::MatrixXd diagonally_dominant(int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < i; ++j) a(i, j) = a(j, i) = rng.uniform(-0.02, 0.02);
  }
  for (int i = 0; i < d; ++i) a(i, i) = rng.uniform(1.0, 3.0);
  return a;
}

std::vector<double> random_point(int d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(static_cast<std::size_t>(d));
  for (auto& v : x) v = rng.uniform(-1, 1);
  return x;
}

Waveform noise_input() { return fixtures::noise(1600, 31, 0.5); }

}  // namespace

TEST(TokenScore, OneComponentPerSample) {
  const ModelParams& p = fixtures::quick_model(Arch::kConvNetA);
  const auto item = fixtures::corpus(1, 30).front();
  EXPECT_EQ(token_score(p, item.waveform, item.transcript, 1).size(), item.waveform.size());
  EXPECT_THROW(token_score(p, item.waveform, item.transcript, 0), ParameterError);
  EXPECT_THROW(token_score(p, item.waveform, item.transcript,
                           static_cast<int>(item.transcript.size()) + 1),
               ParameterError);
}

TEST(TokenScore, MatchesCentralDifferences) {
  const ModelParams& p = fixtures::quick_model(Arch::kConvNetA);
  const Waveform x = noise_input();
  const Transcript y = words({3, 5});
  Rng rng(32);
  for (int t = 1; t <= 2; ++t) {
    const auto s = token_score(p, x, y, t);
    for (int c = 0; c < 10; ++c) {
      const auto i = static_cast<std::size_t>(rng.integer(0, static_cast<int>(x.size()) - 1));
      const double fd = oracle::central_difference(
          [&](const std::vector<double>& v) { return token_log_prob(p, Waveform(v), y, t); },
          x.samples, i, 1e-5);
      EXPECT_LT(std::abs(s[i] - fd), 1e-3 * std::abs(fd) + 1e-9) << "t=" << t << " i=" << i;
    }
  }
}

TEST(TokenScore, JacobianIsSymmetric) {
  const ModelParams& p = fixtures::quick_model(Arch::kRecurrentB);
  const Waveform x = noise_input();
  const Transcript y = words({2, 6});
  const double h = 1e-4;
  const auto column = [&](std::size_t j) {
    Waveform up = x, dn = x;
    up.samples[j] += h;
    dn.samples[j] -= h;
    const auto a = token_score(p, up, y, 1);
    const auto b = token_score(p, dn, y, 1);
    std::vector<double> c(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) c[k] = (a[k] - b[k]) / (2 * h);
    return c;
  };
  // Pairs inside one analysis frame so the cross terms are not negligible.
  const std::pair<std::size_t, std::size_t> pairs[] = {{500, 520}, {700, 777}, {1000, 1100}};
  for (auto [i, j] : pairs) {
    const double hij = column(j)[i];
    const double hji = column(i)[j];
    EXPECT_LT(std::abs(hij - hji), 1e-2 * std::max(std::abs(hij), std::abs(hji)))
        << i << "," << j << ": " << hij << " vs " << hji;
  }
}

TEST(Hutchinson, PaddedDiagonalQuadratic) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(10, 10);
  a(0, 0) = 1.0;
  a(1, 1) = 3.0;
  const double est = hutchinson_trace(linear_score(a), random_point(10, 1), 200, 1e-3, 7);
  EXPECT_NEAR(est, -4.0, 0.05 * 4.0);
}

TEST(Hutchinson, SingleProbeOnIdentityIsExact) {
  for (int d : {1, 7, 50}) {
    const Eigen::MatrixXd a = -Eigen::MatrixXd::Identity(d, d);
    EXPECT_NEAR(hutchinson_trace(linear_score(a), random_point(d, 2), 1, 1e-3, 3), d, 1e-8 * d);
  }
}

TEST(Hutchinson, SeedMeanAgreesWithLongRun) {
  const Eigen::MatrixXd a = diagonally_dominant(30, 4);
  const auto x = random_point(30, 5);
  const double long_run = hutchinson_trace(linear_score(a), x, 200, 1e-3, 100);
  double mean = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) mean += hutchinson_trace(linear_score(a), x, 20, 1e-3, s);
  mean /= 10;
  EXPECT_LT(std::abs(mean - long_run), 0.02 * std::abs(long_run));
}

TEST(Hutchinson, DiagonallyDominantMatrices) {
  for (std::uint64_t m = 0; m < 5; ++m) {
    const int d = 10 + 10 * static_cast<int>(m);
    const Eigen::MatrixXd a = diagonally_dominant(d, 40 + m);
    const double est = hutchinson_trace(linear_score(a), random_point(d, m), 200, 1e-3, 50 + m);
    EXPECT_LT(std::abs(est + a.trace()), 0.05 * a.trace()) << "d=" << d;
  }
}

TEST(Hutchinson, RejectsBadArguments) {
  const auto f = linear_score(Eigen::MatrixXd::Identity(3, 3));
  EXPECT_THROW(hutchinson_trace(f, random_point(3, 1), 0, 1e-3, 1), ParameterError);
  EXPECT_THROW(hutchinson_trace(f, random_point(3, 1), 1, 0.0, 1), ParameterError);
}

TEST(Rademacher, OuterProductMeanIsIdentity) {
  const int d = 20, n = 10000;
  Rng rng(60);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd v(d);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < d; ++i) v(i) = rng.rademacher();
    acc += v * v.transpose();
  }
  acc /= n;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (i == j) EXPECT_DOUBLE_EQ(acc(i, j), 1.0);
      else EXPECT_LT(std::abs(acc(i, j)), 0.05);
    }
  }
}

TEST(AsmLoss, SingleTokenIsTheTokenTerm) {
  const ModelParams& p = fixtures::quick_model(Arch::kConvNetA);
  const Waveform x = noise_input();
  AsmConfig cfg;
  const auto s = token_score(p, x, words({4}), 1);
  double norm2 = 0.0;
  for (double v : s) norm2 += v * v;
  const double tr = hutchinson_trace(p, x, words({4}), 1, cfg.n_probes, cfg.fd_epsilon,
                                     mix_seed(cfg.seed, 0x68757463ULL));
  EXPECT_DOUBLE_EQ(asm_loss(p, x, words({4}), cfg), norm2 + 2.0 * tr);
}

TEST(AsmLoss, ReversedTokenLoopGivesSameValue) {
  const ModelParams& p = fixtures::quick_model(Arch::kConvNetA);
  const auto item = fixtures::corpus(1, 33).front();
  AsmConfig cfg;
  double reversed = 0.0;
  for (int t = static_cast<int>(item.transcript.size()); t >= 1; --t) {
    reversed += asm_token_term(p, item.waveform, item.transcript, t, cfg);
  }
  reversed /= static_cast<double>(item.transcript.size());
  const double forward = asm_loss(p, item.waveform, item.transcript, cfg);
  EXPECT_NEAR(forward, reversed, 1e-12 * std::abs(forward));
}

TEST(AsmLoss, FiniteAcrossCorpus) {
  const ModelParams& p = fixtures::quick_model(Arch::kConvNetA);
  AsmConfig cfg;
  cfg.n_probes = 1;
  const auto items = fixtures::corpus(100, 34);
  std::vector<double> values(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    values[i] = asm_loss(p, items[i].waveform, items[i].transcript, cfg);
  });
  for (std::size_t i = 0; i < values.size(); ++i) EXPECT_TRUE(std::isfinite(values[i])) << items[i].id;
}

TEST(AsmLoss, DoublingProbesStaysWithinProbeNoise) {
  const ModelParams& p = fixtures::quick_model(Arch::kConvNetA);
  const auto item = fixtures::corpus(1, 35).front();
  const Transcript y = words({item.transcript.words.front()});
  // Single-probe spread of the trace estimate.
  std::vector<double> samples;
  for (std::uint64_t s = 0; s < 16; ++s) {
    samples.push_back(hutchinson_trace(p, item.waveform, y, 1, 1, 1e-3, 1000 + s));
  }
  double mean = 0.0, var = 0.0;
  for (double v : samples) mean += v;
  mean /= static_cast<double>(samples.size());
  for (double v : samples) var += (v - mean) * (v - mean);
  var /= static_cast<double>(samples.size() - 1);
  AsmConfig four, eight;
  four.n_probes = 4;
  eight.n_probes = 8;
  const double diff = asm_loss(p, item.waveform, y, eight) - asm_loss(p, item.waveform, y, four);
  // The loss carries 2x the trace; the two estimates differ by a mean of 4
  // fresh probes minus 4 shared ones, i.e. standard deviation sigma/2.
  EXPECT_LE(std::abs(diff), 4.0 * 2.0 * std::sqrt(var) / 2.0) << "sigma=" << std::sqrt(var);
}

TEST(AsmConfig, Validation) {
  AsmConfig c;
  EXPECT_DOUBLE_EQ(c.lambda_asm, 0.01);
  EXPECT_NO_THROW(c.validate());
  c.lambda_asm = -1;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.n_probes = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.fd_epsilon = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.learning_rate = std::numeric_limits<double>::infinity();
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(AsmConfig, DefaultLambdaInEmittedConfig) {
  const auto j = to_json(default_experiment_config());
  EXPECT_DOUBLE_EQ(j.at("asm").at("lambda_asm").get<double>(), 0.01);
  EXPECT_DOUBLE_EQ(config_from_json(j).asm_cfg.lambda_asm, 0.01);
}

TEST(AsmGradient, MatchesFiniteDifferenceOfEstimate) {
  const ModelParams& p = fixtures::quick_model(Arch::kConvNetA);
  const auto item = fixtures::corpus(1, 36).front();
  const Eigen::MatrixXd feats = log_mel(item.waveform).frames;
  AsmConfig cfg;
  cfg.lambda_asm = 1.0;
  cfg.n_probes = 2;
  const auto with = detail::asm_example(p, feats, item, cfg, 77);
  AsmConfig off = cfg;
  off.lambda_asm = 0.0;
  const auto without = detail::asm_example(p, feats, item, off, 77);
  Weights g = with.grad;
  g.add_scaled(without.grad, -1.0);  // gradient of J_ASM alone

  Weights dir = p.weights.zeros_like();
  Rng rng(78);
  for (const auto& [name, f] : Weights::kFields) {
    for (Eigen::Index i = 0; i < (dir.*f).size(); ++i) (dir.*f).data()[i] = rng.uniform(-1, 1);
  }
  double analytic = 0.0;
  for (const auto& [name, f] : Weights::kFields) analytic += (g.*f).cwiseProduct(dir.*f).sum();
  const double tau = 1e-5;
  const auto j_at = [&](double s) {
    ModelParams q = p;
    q.weights.add_scaled(dir, s);
    return detail::asm_example(q, feats, item, cfg, 77).j_asm;
  };
  const double fd = (j_at(tau) - j_at(-tau)) / (2 * tau);
  EXPECT_LT(std::abs(analytic - fd), 0.05 * std::abs(fd)) << analytic << " vs " << fd;
}

TEST(Finetune, ZeroLambdaIsPlainAsrFinetuning) {
  const ModelParams& p = fixtures::quick_model(Arch::kConvNetA);
  const auto items = fixtures::corpus(6, 37);
  AsmConfig cfg;
  cfg.lambda_asm = 0.0;
  cfg.epochs = 1;
  cfg.batch_size = static_cast<int>(items.size());
  cfg.learning_rate = 1e-3;
  const auto res = finetune_asm(p, items, cfg);

  // One full-batch Adam step moves each weight by lr * g / (|g| + eps).
  Weights g = p.weights.zeros_like();
  for (const auto& item : items) {
    ObjectiveTerms terms;
    joint_objective(p, log_mel(item.waveform).frames, item.transcript, p.lambda, terms, &g);
  }
  g *= 1.0 / static_cast<double>(items.size());
  const double norm = std::sqrt(g.squared_norm());
  if (norm > cfg.clip_norm) g *= cfg.clip_norm / norm;
  for (const auto& [name, f] : Weights::kFields) {
    if ((g.*f).size() == 0) continue;  // fields unused by this architecture
    const Eigen::MatrixXd expect =
        (p.weights.*f).array() - cfg.learning_rate * (g.*f).array() / ((g.*f).array().abs() + 1e-8);
    EXPECT_LT(((res.params.weights.*f) - expect).cwiseAbs().maxCoeff(), 1e-12) << name;
  }
  EXPECT_DOUBLE_EQ(res.log.front().j_asm, 0.0);

  // No ASM quantity enters, so probe settings leave the trajectory unchanged.
  AsmConfig other = cfg;
  other.n_probes = 9;
  other.fd_epsilon = 0.5;
  other.epochs = 2;
  cfg.epochs = 2;
  EXPECT_EQ(finetune_asm(p, items, cfg).params.weights, finetune_asm(p, items, other).params.weights);
}

TEST(Finetune, DeterministicWithLogFormat) {
  const ModelParams& p = fixtures::quick_model(Arch::kConvNetA);
  const auto items = fixtures::corpus(4, 38);
  AsmConfig cfg;
  cfg.epochs = 2;
  cfg.n_probes = 1;
  std::ostringstream log_a, log_b;
  const auto a = finetune_asm(p, items, cfg, &log_a);
  const auto b = finetune_asm(p, items, cfg, &log_b);
  EXPECT_EQ(a.params.weights, b.params.weights);
  std::istringstream lines(log_a.str());
  std::string line;
  int epoch = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch").get<int>(), ++epoch);
    EXPECT_TRUE(std::isfinite(j.at("j_asr").get<double>()));
    EXPECT_TRUE(std::isfinite(j.at("j_asm").get<double>()));
    EXPECT_GE(j.at("wall_time").get<double>(), 0.0);
    EXPECT_EQ(j.size(), 4u);
  }
  EXPECT_EQ(epoch, 2);
  EXPECT_THROW(finetune_asm(p, std::span<const CorpusItem>{}, cfg), ParameterError);
}

TEST(Finetune, NonFiniteObjectiveIsTrainingError) {
  ModelParams p = fixtures::quick_model(Arch::kConvNetA);
  p.weights.dec_out_b(0, 0) = std::numeric_limits<double>::infinity();
  const auto items = fixtures::corpus(2, 39);
  AsmConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(finetune_asm(p, items, cfg), TrainingError);
  cfg.lambda_asm = 0.0;
  EXPECT_THROW(finetune_asm(p, items, cfg), TrainingError);
}
