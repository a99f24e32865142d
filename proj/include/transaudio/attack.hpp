#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "transaudio/alignment.hpp"
#include "transaudio/attack_spec.hpp"
#include "transaudio/dsp.hpp"
#include "transaudio/error.hpp"
#include "transaudio/model.hpp"
#include "transaudio/rng.hpp"
#include "transaudio/synth.hpp"
#include "transaudio/waveform.hpp"

namespace transaudio {

// kTwoStage: local stage on a synthesized fragment, then a global stage.
// kNoiseInit: as kTwoStage, but the synthesized target clip is replaced by
// seeded uniform noise of the same length.
// kSingleStage: the assembled initialization is optimized globally for all
// iterations.
enum class AttackVariant { kTwoStage, kNoiseInit, kSingleStage };

inline std::string_view to_string(AttackVariant v) {
  switch (v) {
    case AttackVariant::kTwoStage: return "two-stage";
    case AttackVariant::kNoiseInit: return "noise-init";
    case AttackVariant::kSingleStage: return "single-stage";
  }
  return "?";
}

inline AttackVariant parse_attack_variant(std::string_view s) {
  if (s == "two-stage") return AttackVariant::kTwoStage;
  if (s == "noise-init") return AttackVariant::kNoiseInit;
  if (s == "single-stage") return AttackVariant::kSingleStage;
  throw ParameterError("unknown attack variant: " + std::string(s));
}

struct AttackConfig {
  double delta = 0.06;
  int iterations = 50;  // split evenly between the two stages
  double mu = 0.5;
  double alpha = 0.0048;
  double lambda = kDefaultLambda;
  std::size_t ramp_len = kDefaultRampLen;
  AttackVariant variant = AttackVariant::kTwoStage;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(delta > 0.0)) throw ParameterError("attack delta must be positive");
    if (iterations < 2 || iterations % 2 != 0) {
      throw ParameterError("attack iterations must be even and at least 2");
    }
    if (!(mu >= 0.0 && mu < 1.0)) throw ParameterError("momentum decay must lie in [0, 1)");
    if (!(alpha > 0.0)) throw ParameterError("attack step size must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1]");
  }
};

struct AttackResult {
  Waveform adversarial;
  Waveform local_fragment;  // stage-1 output (the initialization for single-stage)
  Waveform global_init;     // assembled waveform the stage-2 budget is measured from
  SampleSpan span_used;     // replaced span; empty at the insertion point for inserts
  Transcript target_transcript;
  std::vector<double> stage1_loss;
  std::vector<double> stage2_loss;

  int iterations() const { return static_cast<int>(stage1_loss.size() + stage2_loss.size()); }
};

inline Transcript build_target_transcript(const Transcript& y, const AttackSpec& spec,
                                          const Vocab& vocab) {
  spec.validate(y, vocab);
  Transcript out = y;
  auto pos = out.words.begin() + spec.k;
  switch (spec.type) {
    case AttackType::kDelete: out.words.erase(pos - 1); break;
    case AttackType::kInsert: out.words.insert(pos, *spec.target_word); break;
    case AttackType::kSubstitute: *(pos - 1) = *spec.target_word; break;
  }
  return out;
}

// Local initialization of the fragment to be optimized. `clip` is the target
// word audio and is ignored for deletions.
inline Waveform init_local(const Waveform& x, const SampleSpan& span, const AttackSpec& spec,
                           const Waveform& clip) {
  span.validate(x.size());
  switch (spec.type) {
    case AttackType::kDelete:
      if (span.length() == 0) throw ParameterError("init_local: empty span");
      return x.slice(span.start, span.end);
    case AttackType::kInsert: {
      if (clip.empty()) throw ParameterError("init_local: empty target clip");
      const double m = x.peak();
      Waveform out = clip;
      for (auto& v : out.samples) v = std::clamp(v, -m, m);
      return out;
    }
    case AttackType::kSubstitute: {
      if (span.length() == 0) throw ParameterError("init_local: empty span");
      Waveform out = x.slice(span.start, span.end);
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double c = i < clip.size() ? clip.samples[i] : 0.0;
        out.samples[i] = 0.5 * (out.samples[i] + c);
      }
      return out;
    }
  }
  throw ParameterError("init_local: bad attack type");
}

inline Waveform assemble_global(const Waveform& x, const Waveform& local, const SampleSpan& span,
                                const AttackSpec& spec, std::size_t ramp_len) {
  span.validate(x.size());
  const Waveform head = x.slice(0, span.start);
  const std::size_t resume = spec.type == AttackType::kInsert ? span.start : span.end;
  const Waveform tail = x.slice(resume, x.size());
  return concat_fragments({head, local, tail}, ramp_len);
}

struct MifgsmResult {
  Waveform waveform;
  std::vector<double> loss;  // joint loss at each iterate before its update
};

// Momentum iterative sign-gradient descent on the joint loss of `target`,
// kept inside the l-inf ball of radius delta around `init`.
inline MifgsmResult mifgsm(const ModelParams& p, const Waveform& init, const Transcript& target,
                           int iters, const AttackConfig& cfg) {
  if (iters < 1) throw ParameterError("mifgsm: iters must be at least 1");
  if (init.size() < kFrameLen) throw ParameterError("mifgsm: input shorter than one frame");
  for (double v : init.samples) {
    if (!std::isfinite(v)) throw NumericalError("mifgsm: non-finite input sample");
  }
  MifgsmResult out{init, {}};
  out.loss.reserve(static_cast<std::size_t>(iters));
  std::vector<double> g(init.size(), 0.0);
  for (int n = 0; n < iters; ++n) {
    const JointLoss j = joint_loss(p, out.waveform, target, cfg.lambda);
    double l1 = 0.0;
    for (double v : j.input_grad) l1 += std::abs(v);
    if (!std::isfinite(j.loss) || !std::isfinite(l1)) {
      throw NumericalError("mifgsm: non-finite loss or gradient");
    }
    out.loss.push_back(j.loss);
    const double scale = l1 > 0.0 ? 1.0 / l1 : 0.0;
    Waveform next = out.waveform;
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = cfg.mu * g[i] + j.input_grad[i] * scale;
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      next.samples[i] -= cfg.alpha * s;
    }
    out.waveform = project(next, init, cfg.delta);
  }
  return out;
}

// Target word audio for insertions and substitutions.
inline Waveform attack_clip(const ModelParams& p, const AttackSpec& spec,
                            const AttackConfig& cfg) {
  if (spec.type == AttackType::kDelete) return {};
  const Waveform tts = synthesize_target(p.vocab, *spec.target_word);
  if (cfg.variant != AttackVariant::kNoiseInit) return tts;
  Rng rng(mix_seed(cfg.seed, 0x6e6f697365ULL));
  Waveform noise = tts;
  for (auto& v : noise.samples) v = rng.uniform(-cfg.delta, cfg.delta);
  return noise;
}

inline AttackResult attack(const ModelParams& p, const Waveform& x, const Transcript& y,
                           const AttackSpec& spec, const AttackConfig& cfg) {
  cfg.validate();
  AttackResult r;
  r.target_transcript = build_target_transcript(y, spec, p.vocab);
  if (spec.type == AttackType::kInsert) {
    const std::size_t at = locate_insertion_point(p, x, y, spec.k);
    r.span_used = {at, at};
  } else {
    r.span_used = locate_word(p, x, y, spec.k);
  }
  const Waveform init = init_local(x, r.span_used, spec, attack_clip(p, spec, cfg));
  const int half = cfg.iterations / 2;
  int global_iters = cfg.iterations;
  if (cfg.variant == AttackVariant::kSingleStage) {
    r.local_fragment = init;
  } else {
    Transcript local_target;
    if (spec.type != AttackType::kDelete) local_target.words.push_back(*spec.target_word);
    auto stage1 = mifgsm(p, init, local_target, half, cfg);
    r.local_fragment = std::move(stage1.waveform);
    r.stage1_loss = std::move(stage1.loss);
    global_iters = cfg.iterations - half;
  }
  r.global_init = assemble_global(x, r.local_fragment, r.span_used, spec, cfg.ramp_len);
  auto stage2 = mifgsm(p, r.global_init, r.target_transcript, global_iters, cfg);
  r.adversarial = std::move(stage2.waveform);
  r.stage2_loss = std::move(stage2.loss);
  return r;
}

}  // namespace transaudio
