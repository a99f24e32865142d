#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "transaudio/asm.hpp"
#include "transaudio/attack.hpp"
#include "transaudio/dsp.hpp"
#include "transaudio/error.hpp"
#include "transaudio/metrics.hpp"
#include "transaudio/parallel.hpp"
#include "transaudio/serialize.hpp"
#include "transaudio/synth.hpp"
#include "transaudio/train.hpp"
#include "transaudio/transcriber.hpp"

namespace transaudio {

struct ModelConfig {
  std::string name;
  Arch arch = Arch::kConvNetA;
  TrainOptions train;
};

// One compared method: which trained surrogate to attack with, and how.
struct VariantConfig {
  std::string name;
  std::string surrogate;
  AttackVariant mode = AttackVariant::kTwoStage;
};

// Every sub-seed derives from `seed`, so one number pins down the run.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::vector<std::string> vocab = default_words();
  int train_utterances = 300;
  int test_utterances = 100;
  int min_words = 3;
  int max_words = 6;
  std::vector<ModelConfig> models;
  AttackConfig attack;
  AsmConfig asm_cfg;
  std::string asm_base = "surrogate";   // model fine-tuned by finetune-asm
  std::string asm_output = "surrogate-asm";
  int asm_utterances = 100;
  int utterances_per_type = 50;
  std::vector<AttackType> attack_types{AttackType::kDelete, AttackType::kInsert,
                                       AttackType::kSubstitute};
  std::vector<VariantConfig> variants;
  std::vector<EndpointConfig> endpoints;

  Vocab make_vocab() const { return Vocab(vocab); }

  CorpusOptions train_corpus() const {
    return {train_utterances, min_words, max_words, mix_seed(seed, 1), "train"};
  }
  CorpusOptions test_corpus() const {
    return {test_utterances, min_words, max_words, mix_seed(seed, 2), "test"};
  }
  std::uint64_t batch_seed() const { return mix_seed(seed, 6); }

  // Training options for the i-th configured model: its own seed, 3 + i.
  TrainOptions train_options(std::size_t i) const {
    TrainOptions o = models.at(i).train;
    o.seed = mix_seed(seed, 3 + i);
    return o;
  }
  AsmConfig asm_options() const {
    AsmConfig a = asm_cfg;
    a.seed = mix_seed(seed, 5);
    return a;
  }

  const ModelConfig& model(const std::string& name) const {
    for (const auto& m : models) {
      if (m.name == name) return m;
    }
    throw ConfigError("no model named '" + name + "' in config");
  }
};

inline ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  ModelConfig sur{"surrogate", Arch::kConvNetA, {}};
  sur.train.epochs = 25;
  ModelConfig tgt{"target", Arch::kRecurrentB, {}};
  tgt.train.epochs = 30;
  c.models = {sur, tgt};
  c.variants = {{"two-stage", "surrogate", AttackVariant::kTwoStage},
                {"two-stage-asm", "surrogate-asm", AttackVariant::kTwoStage},
                {"noise-init", "surrogate", AttackVariant::kNoiseInit},
                {"single-stage", "surrogate", AttackVariant::kSingleStage}};
  EndpointConfig target;
  target.name = "target";
  target.kind = EndpointKind::kLocal;
  target.model = "target";
  c.endpoints = {target};
  return c;
}

// ---------------------------------------------------------------- config I/O

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : c.models) {
    models.push_back({{"name", m.name},
                      {"arch", to_string(m.arch)},
                      {"epochs", m.train.epochs},
                      {"learning_rate", m.train.learning_rate},
                      {"lambda", m.train.lambda},
                      {"batch_size", m.train.batch_size},
                      {"clip_norm", m.train.clip_norm}});
  }
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : c.variants) {
    variants.push_back({{"name", v.name}, {"surrogate", v.surrogate}, {"mode", to_string(v.mode)}});
  }
  nlohmann::json endpoints = nlohmann::json::array();
  for (const auto& e : c.endpoints) {
    nlohmann::json j = {{"name", e.name}, {"kind", to_string(e.kind)}};
    if (e.kind == EndpointKind::kLocal) j["model"] = e.model;
    if (e.kind == EndpointKind::kRemote) {
      j["url"] = e.url;
      j["credential_env"] = e.credential_env;
      j["rate_limit"] = e.rate_limit;
      j["timeout_s"] = e.timeout_s;
      j["retry"] = {{"max_attempts", e.retry.max_attempts},
                    {"initial_backoff_s", e.retry.initial_backoff_s},
                    {"backoff_factor", e.retry.backoff_factor}};
    }
    if (e.kind == EndpointKind::kStub) j["responses"] = e.responses;
    endpoints.push_back(j);
  }
  nlohmann::json types = nlohmann::json::array();
  for (auto t : c.attack_types) types.push_back(to_string(t));
  return {{"seed", c.seed},
          {"corpus",
           {{"vocab", c.vocab},
            {"train_utterances", c.train_utterances},
            {"test_utterances", c.test_utterances},
            {"min_words", c.min_words},
            {"max_words", c.max_words}}},
          {"models", models},
          {"attack",
           {{"delta", c.attack.delta},
            {"iterations", c.attack.iterations},
            {"mu", c.attack.mu},
            {"alpha", c.attack.alpha},
            {"lambda", c.attack.lambda},
            {"ramp_len", c.attack.ramp_len}}},
          {"asm",
           {{"lambda_asm", c.asm_cfg.lambda_asm},
            {"n_probes", c.asm_cfg.n_probes},
            {"fd_epsilon", c.asm_cfg.fd_epsilon},
            {"epochs", c.asm_cfg.epochs},
            {"learning_rate", c.asm_cfg.learning_rate},
            {"batch_size", c.asm_cfg.batch_size},
            {"utterances", c.asm_utterances},
            {"base", c.asm_base},
            {"output", c.asm_output}}},
          {"experiment",
           {{"utterances_per_type", c.utterances_per_type},
            {"attack_types", types},
            {"variants", variants}}},
          {"endpoints", endpoints}};
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c = default_experiment_config();
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("corpus")) {
      const auto& k = j["corpus"];
      c.vocab = k.value("vocab", c.vocab);
      c.train_utterances = k.value("train_utterances", c.train_utterances);
      c.test_utterances = k.value("test_utterances", c.test_utterances);
      c.min_words = k.value("min_words", c.min_words);
      c.max_words = k.value("max_words", c.max_words);
    }
    if (j.contains("models")) {
      c.models.clear();
      for (const auto& m : j["models"]) {
        ModelConfig mc;
        mc.name = m.at("name").get<std::string>();
        mc.arch = parse_arch(m.at("arch").get<std::string>());
        mc.train.epochs = m.value("epochs", mc.train.epochs);
        mc.train.learning_rate = m.value("learning_rate", mc.train.learning_rate);
        mc.train.lambda = m.value("lambda", mc.train.lambda);
        mc.train.batch_size = m.value("batch_size", mc.train.batch_size);
        mc.train.clip_norm = m.value("clip_norm", mc.train.clip_norm);
        c.models.push_back(mc);
      }
    }
    if (j.contains("attack")) {
      const auto& a = j["attack"];
      c.attack.delta = a.value("delta", c.attack.delta);
      c.attack.iterations = a.value("iterations", c.attack.iterations);
      c.attack.mu = a.value("mu", c.attack.mu);
      c.attack.alpha = a.value("alpha", c.attack.alpha);
      c.attack.lambda = a.value("lambda", c.attack.lambda);
      c.attack.ramp_len = a.value("ramp_len", c.attack.ramp_len);
    }
    if (j.contains("asm")) {
      const auto& a = j["asm"];
      c.asm_cfg.lambda_asm = a.value("lambda_asm", c.asm_cfg.lambda_asm);
      c.asm_cfg.n_probes = a.value("n_probes", c.asm_cfg.n_probes);
      c.asm_cfg.fd_epsilon = a.value("fd_epsilon", c.asm_cfg.fd_epsilon);
      c.asm_cfg.epochs = a.value("epochs", c.asm_cfg.epochs);
      c.asm_cfg.learning_rate = a.value("learning_rate", c.asm_cfg.learning_rate);
      c.asm_cfg.batch_size = a.value("batch_size", c.asm_cfg.batch_size);
      c.asm_utterances = a.value("utterances", c.asm_utterances);
      c.asm_base = a.value("base", c.asm_base);
      c.asm_output = a.value("output", c.asm_output);
    }
    if (j.contains("experiment")) {
      const auto& e = j["experiment"];
      c.utterances_per_type = e.value("utterances_per_type", c.utterances_per_type);
      if (e.contains("attack_types")) {
        c.attack_types.clear();
        for (const auto& t : e["attack_types"]) {
          c.attack_types.push_back(parse_attack_type(t.get<std::string>()));
        }
      }
      if (e.contains("variants")) {
        c.variants.clear();
        for (const auto& v : e["variants"]) {
          c.variants.push_back({v.at("name").get<std::string>(),
                                v.at("surrogate").get<std::string>(),
                                parse_attack_variant(v.value("mode", "two-stage"))});
        }
      }
    }
    if (j.contains("endpoints")) {
      c.endpoints.clear();
      for (const auto& e : j["endpoints"]) {
        if (e.contains("token") || e.contains("api_key") || e.contains("credential")) {
          throw ConfigError("credentials must come from an environment variable "
                            "(credential_env), not the config file");
        }
        EndpointConfig ec;
        ec.name = e.at("name").get<std::string>();
        ec.kind = parse_endpoint_kind(e.at("kind").get<std::string>());
        ec.model = e.value("model", ec.model);
        ec.url = e.value("url", ec.url);
        ec.credential_env = e.value("credential_env", ec.credential_env);
        ec.rate_limit = e.value("rate_limit", ec.rate_limit);
        ec.timeout_s = e.value("timeout_s", ec.timeout_s);
        if (e.contains("retry")) {
          const auto& r = e["retry"];
          ec.retry.max_attempts = r.value("max_attempts", ec.retry.max_attempts);
          ec.retry.initial_backoff_s = r.value("initial_backoff_s", ec.retry.initial_backoff_s);
          ec.retry.backoff_factor = r.value("backoff_factor", ec.retry.backoff_factor);
        }
        ec.responses = e.value("responses", ec.responses);
        ec.validate();
        c.endpoints.push_back(ec);
      }
    }
    c.attack.validate();
    c.asm_cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------- batch spec

struct AttackJob {
  std::string utterance_id;
  AttackSpec spec;
};

// For each attack type, one job per utterance of the first `per_type` items:
// a uniformly drawn position and, where needed, a target word not already in
// the transcript.
inline std::vector<AttackJob> make_attack_batch(const std::vector<CorpusItem>& items,
                                                const std::vector<AttackType>& types,
                                                int per_type, const Vocab& vocab,
                                                std::uint64_t seed) {
  std::vector<AttackJob> jobs;
  const std::size_t n = std::min(items.size(), static_cast<std::size_t>(std::max(0, per_type)));
  for (AttackType type : types) {
    for (std::size_t u = 0; u < n; ++u) {
      const auto& item = items[u];
      Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(type)), u));
      const int m = static_cast<int>(item.transcript.size());
      AttackSpec spec;
      spec.type = type;
      spec.k = type == AttackType::kInsert ? rng.integer(0, m) : rng.integer(1, m);
      if (type != AttackType::kDelete) {
        std::vector<TokenId> pool;
        for (TokenId w = 1; w <= vocab.num_words(); ++w) {
          if (!item.transcript.contains(w)) pool.push_back(w);
        }
        if (pool.empty()) continue;
        spec.target_word = pool[rng.index(pool.size())];
      }
      jobs.push_back({item.id, spec});
    }
  }
  return jobs;
}

inline nlohmann::json batch_to_json(const std::vector<AttackJob>& jobs, const Vocab& vocab) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& j : jobs) {
    out.push_back({{"utterance_id", j.utterance_id},
                   {"attack_type", to_string(j.spec.type)},
                   {"k", j.spec.k},
                   {"target_word", j.spec.target_word
                                       ? nlohmann::json(vocab.symbol(*j.spec.target_word))
                                       : nlohmann::json(nullptr)}});
  }
  return out;
}

inline std::vector<AttackJob> batch_from_json(const nlohmann::json& j, const Vocab& vocab) {
  if (!j.is_array()) throw FormatError("attack batch must be a JSON list");
  std::vector<AttackJob> jobs;
  try {
    for (const auto& e : j) {
      AttackJob job;
      job.utterance_id = e.at("utterance_id").get<std::string>();
      job.spec.type = parse_attack_type(e.at("attack_type").get<std::string>());
      job.spec.k = e.at("k").get<int>();
      if (e.contains("target_word") && !e["target_word"].is_null()) {
        job.spec.target_word = vocab.id(e["target_word"].get<std::string>());
      }
      jobs.push_back(job);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed attack batch: ") + e.what());
  }
  return jobs;
}

// ---------------------------------------------------------------- records

struct AttackOutcome {
  std::string variant;
  AttackJob job;
  Transcript reference;            // clean transcript Y
  Transcript target;               // attack target
  SampleSpan span;
  Waveform adversarial;            // as delivered: 16-bit quantized
  double snr_db = 0.0;
  std::string clean_wav, adversarial_wav;  // paths relative to the output dir
};

struct EvalRecord {
  std::string variant;
  std::string endpoint;
  AttackJob job;
  Transcript reference;
  Transcript target;
  Transcript decoded;
  MetricsBundle metrics;
  std::string clean_wav, adversarial_wav;
};

struct ReportRow {
  std::string variant;
  AttackType attack_type = AttackType::kDelete;
  std::string endpoint;
  std::size_t n = 0;
  double snr_db = 0.0;  // means over the group
  double sroa_pct = 0.0;
  double cer = 0.0;
  double med = 0.0;
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<EvalRecord> records;
};

inline nlohmann::json to_json(const EvalRecord& r, const Vocab& vocab) {
  return {{"variant", r.variant},
          {"endpoint", r.endpoint},
          {"utterance_id", r.job.utterance_id},
          {"attack_type", to_string(r.job.spec.type)},
          {"k", r.job.spec.k},
          {"target_word", r.job.spec.target_word
                              ? nlohmann::json(vocab.symbol(*r.job.spec.target_word))
                              : nlohmann::json(nullptr)},
          {"reference", r.reference.to_string(vocab)},
          {"target", r.target.to_string(vocab)},
          {"decoded", r.decoded.to_string(vocab)},
          {"metrics",
           {{"sroa", r.metrics.sroa},
            {"cer", r.metrics.cer},
            {"med", r.metrics.med},
            {"snr_db", r.metrics.snr_db}}},
          {"wav", {{"clean", r.clean_wav}, {"adversarial", r.adversarial_wav}}}};
}

inline EvalRecord record_from_json(const nlohmann::json& j, const Vocab& vocab) {
  EvalRecord r;
  r.variant = j.at("variant").get<std::string>();
  r.endpoint = j.at("endpoint").get<std::string>();
  r.job.utterance_id = j.at("utterance_id").get<std::string>();
  r.job.spec.type = parse_attack_type(j.at("attack_type").get<std::string>());
  r.job.spec.k = j.at("k").get<int>();
  if (!j.at("target_word").is_null()) {
    r.job.spec.target_word = vocab.id(j["target_word"].get<std::string>());
  }
  r.reference = Transcript::parse(j.at("reference").get<std::string>(), vocab);
  r.target = Transcript::parse(j.at("target").get<std::string>(), vocab);
  r.decoded = Transcript::parse(j.at("decoded").get<std::string>(), vocab);
  const auto& m = j.at("metrics");
  r.metrics = {m.at("sroa").get<bool>(), m.at("cer").get<double>(),
               m.at("med").get<std::size_t>(), m.at("snr_db").get<double>()};
  r.clean_wav = j.at("wav").at("clean").get<std::string>();
  r.adversarial_wav = j.at("wav").at("adversarial").get<std::string>();
  return r;
}

inline nlohmann::json to_json(const AttackOutcome& o, const Vocab& vocab) {
  return {{"variant", o.variant},
          {"utterance_id", o.job.utterance_id},
          {"attack_type", to_string(o.job.spec.type)},
          {"k", o.job.spec.k},
          {"target_word", o.job.spec.target_word
                              ? nlohmann::json(vocab.symbol(*o.job.spec.target_word))
                              : nlohmann::json(nullptr)},
          {"reference", o.reference.to_string(vocab)},
          {"target", o.target.to_string(vocab)},
          {"span", {o.span.start, o.span.end}},
          {"snr_db", o.snr_db},
          {"wav", {{"clean", o.clean_wav}, {"adversarial", o.adversarial_wav}}}};
}

// Adversarial waveforms are read back from wav.adversarial under `root`.
inline AttackOutcome outcome_from_json(const nlohmann::json& j, const Vocab& vocab,
                                       const std::string& root) {
  AttackOutcome o;
  o.variant = j.at("variant").get<std::string>();
  o.job.utterance_id = j.at("utterance_id").get<std::string>();
  o.job.spec.type = parse_attack_type(j.at("attack_type").get<std::string>());
  o.job.spec.k = j.at("k").get<int>();
  if (!j.at("target_word").is_null()) {
    o.job.spec.target_word = vocab.id(j["target_word"].get<std::string>());
  }
  o.reference = Transcript::parse(j.at("reference").get<std::string>(), vocab);
  o.target = Transcript::parse(j.at("target").get<std::string>(), vocab);
  o.span = {j.at("span").at(0).get<std::size_t>(), j.at("span").at(1).get<std::size_t>()};
  o.snr_db = j.at("snr_db").get<double>();
  o.clean_wav = j.at("wav").at("clean").get<std::string>();
  o.adversarial_wav = j.at("wav").at("adversarial").get<std::string>();
  o.adversarial = wav_read((std::filesystem::path(root) / o.adversarial_wav).string());
  return o;
}

// ---------------------------------------------------------------- stages

namespace detail {

inline Waveform as_delivered(const Waveform& w) { return wav_decode(wav_encode(w)); }

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace detail

inline constexpr std::string_view kOutcomesFile = "attacks/outcomes.jsonl";
inline constexpr std::string_view kRecordsFile = "eval/records.jsonl";

// Runs every job under every variant. With a non-empty `out_dir` each
// adversarial waveform is written to attacks/<variant>/ and each outcome is
// appended to attacks/outcomes.jsonl as soon as its variant finishes, so an
// exception leaves the completed part on disk.
inline std::vector<AttackOutcome> run_attacks(const ExperimentConfig& cfg,
                                              const std::vector<CorpusItem>& items,
                                              const std::map<std::string, ModelParams>& models,
                                              const std::vector<AttackJob>& jobs,
                                              const std::string& out_dir = {}) {
  namespace fs = std::filesystem;
  std::map<std::string, const CorpusItem*> by_id;
  for (const auto& it : items) by_id[it.id] = &it;
  for (const auto& job : jobs) {
    if (!by_id.count(job.utterance_id)) {
      throw ParameterError("attack batch names unknown utterance " + job.utterance_id);
    }
  }
  std::ofstream log;
  if (!out_dir.empty()) {
    const fs::path path = fs::path(out_dir) / kOutcomesFile;
    fs::create_directories(path.parent_path());
    log.open(path);
    if (!log) throw IoError("cannot write " + path.string());
  }
  std::vector<AttackOutcome> all;
  for (const auto& variant : cfg.variants) {
    const auto mit = models.find(variant.surrogate);
    if (mit == models.end()) {
      throw ConfigError("variant '" + variant.name + "' needs model '" + variant.surrogate + "'");
    }
    const ModelParams& sur = mit->second;
    std::vector<AttackOutcome> out(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) {
      const auto& job = jobs[i];
      const CorpusItem& item = *by_id.at(job.utterance_id);
      AttackConfig ac = cfg.attack;
      ac.variant = variant.mode;
      ac.seed = mix_seed(mix_seed(cfg.seed, 7), i);
      const AttackResult r = attack(sur, item.waveform, item.transcript, job.spec, ac);
      AttackOutcome& o = out[i];
      o.variant = variant.name;
      o.job = job;
      o.reference = item.transcript;
      o.target = r.target_transcript;
      o.span = r.span_used;
      o.adversarial = detail::as_delivered(r.adversarial);
      o.snr_db = snr_db(item.waveform, o.adversarial, job.spec, r.span_used);
      o.clean_wav = "corpus/test/" + item.id + ".wav";
      o.adversarial_wav = "attacks/" + variant.name + "/" + item.id + "_" +
                          std::string(to_string(job.spec.type)) + ".wav";
    });
    for (auto& o : out) {
      if (!out_dir.empty()) {
        const fs::path wav = fs::path(out_dir) / o.adversarial_wav;
        fs::create_directories(wav.parent_path());
        wav_write(o.adversarial, wav.string());
        log << to_json(o, sur.vocab).dump() << '\n';
      }
      all.push_back(std::move(o));
    }
    if (log.is_open()) log.flush();
  }
  return all;
}

// Builds one transcriber per configured endpoint. Local endpoints look their
// model up by name in `models`.
inline std::map<std::string, std::unique_ptr<Transcriber>> make_transcribers(
    const ExperimentConfig& cfg, const std::map<std::string, ModelParams>& models) {
  const Vocab vocab = cfg.make_vocab();
  std::map<std::string, std::unique_ptr<Transcriber>> out;
  for (const auto& e : cfg.endpoints) {
    e.validate();
    switch (e.kind) {
      case EndpointKind::kLocal: {
        const auto it = models.find(e.model);
        if (it == models.end()) {
          throw ConfigError("endpoint '" + e.name + "' needs model '" + e.model + "'");
        }
        out[e.name] = std::make_unique<LocalTranscriber>(it->second);
        break;
      }
      case EndpointKind::kRemote:
        out[e.name] = std::make_unique<RemoteTranscriber>(e, vocab);
        break;
      case EndpointKind::kStub: {
        std::vector<Transcript> responses;
        for (const auto& r : e.responses) responses.push_back(Transcript::parse(r, vocab));
        out[e.name] = std::make_unique<StubTranscriber>(responses);
        break;
      }
    }
  }
  return out;
}

inline MetricsBundle score_outcome(const AttackOutcome& o, const Transcript& decoded,
                                   const Vocab& vocab) {
  MetricsBundle m;
  m.sroa = judge_sroa(decoded, o.job.spec, o.reference);
  m.cer = o.target.empty() ? static_cast<double>(decoded.to_string(vocab).size())
                           : cer(decoded, o.target, vocab);
  m.med = edit_distance(decoded, o.target);
  m.snr_db = o.snr_db;
  return m;
}

// Transcribes every outcome on every endpoint (in configuration order).
// Deterministic endpoints run in parallel; the others one request at a time.
// With a non-empty `out_dir` records are appended to eval/records.jsonl as
// each endpoint finishes.
inline std::vector<EvalRecord> evaluate_outcomes(
    const ExperimentConfig& cfg, const std::vector<AttackOutcome>& outcomes,
    std::map<std::string, std::unique_ptr<Transcriber>>& transcribers,
    const std::string& out_dir = {}) {
  namespace fs = std::filesystem;
  const Vocab vocab = cfg.make_vocab();
  std::ofstream log;
  if (!out_dir.empty()) {
    const fs::path path = fs::path(out_dir) / kRecordsFile;
    fs::create_directories(path.parent_path());
    log.open(path);
    if (!log) throw IoError("cannot write " + path.string());
  }
  std::vector<EvalRecord> records;
  for (const auto& e : cfg.endpoints) {
    Transcriber& t = *transcribers.at(e.name);
    std::vector<Transcript> decoded(outcomes.size());
    const auto run = [&](std::size_t i) { decoded[i] = t.transcribe(outcomes[i].adversarial); };
    if (t.deterministic()) {
      parallel_for(outcomes.size(), run);
    } else {
      for (std::size_t i = 0; i < outcomes.size(); ++i) run(i);
    }
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      const auto& o = outcomes[i];
      records.push_back({o.variant, e.name, o.job, o.reference, o.target, decoded[i],
                         score_outcome(o, decoded[i], vocab), o.clean_wav, o.adversarial_wav});
      if (log.is_open()) log << to_json(records.back(), vocab).dump() << '\n';
    }
    if (log.is_open()) log.flush();
  }
  return records;
}

namespace detail {

template <typename F>
void for_each_jsonl(const std::string& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

}  // namespace detail

inline std::vector<AttackOutcome> load_outcomes(const std::string& out_dir, const Vocab& vocab) {
  std::vector<AttackOutcome> out;
  detail::for_each_jsonl(
      (std::filesystem::path(out_dir) / kOutcomesFile).string(),
      [&](const nlohmann::json& j) { out.push_back(outcome_from_json(j, vocab, out_dir)); });
  return out;
}

inline std::vector<EvalRecord> load_records(const std::string& out_dir, const Vocab& vocab) {
  std::vector<EvalRecord> out;
  detail::for_each_jsonl((std::filesystem::path(out_dir) / kRecordsFile).string(),
                         [&](const nlohmann::json& j) { out.push_back(record_from_json(j, vocab)); });
  return out;
}

// Means per (variant, attack type, endpoint), in first-seen order.
inline std::vector<ReportRow> summarize(const std::vector<EvalRecord>& records) {
  std::vector<ReportRow> rows;
  for (const auto& r : records) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& row) {
      return row.variant == r.variant && row.attack_type == r.job.spec.type &&
             row.endpoint == r.endpoint;
    });
    if (it == rows.end()) {
      rows.push_back({r.variant, r.job.spec.type, r.endpoint});
      it = rows.end() - 1;
    }
    ++it->n;
    it->snr_db += r.metrics.snr_db;
    it->sroa_pct += r.metrics.sroa ? 100.0 : 0.0;
    it->cer += r.metrics.cer;
    it->med += static_cast<double>(r.metrics.med);
  }
  for (auto& row : rows) {
    const double n = static_cast<double>(row.n);
    row.snr_db /= n;
    row.sroa_pct /= n;
    row.cer /= n;
    row.med /= n;
  }
  return rows;
}

inline std::string report_csv(const Report& report) {
  std::string out = "variant,attack_type,target,n,SNR,SRoA,CER,MED\n";
  for (const auto& r : report.rows) {
    out += r.variant + "," + std::string(to_string(r.attack_type)) + "," + r.endpoint + "," +
           std::to_string(r.n) + "," + detail::fmt(r.snr_db) + "," + detail::fmt(r.sroa_pct) +
           "," + detail::fmt(r.cer) + "," + detail::fmt(r.med) + "\n";
  }
  return out;
}

inline nlohmann::json report_json(const Report& report, const Vocab& vocab) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"variant", r.variant},
                    {"attack_type", to_string(r.attack_type)},
                    {"target", r.endpoint},
                    {"n", r.n},
                    {"snr_db", r.snr_db},
                    {"sroa_pct", r.sroa_pct},
                    {"cer", r.cer},
                    {"med", r.med}});
  }
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : report.records) records.push_back(to_json(r, vocab));
  return {{"rows", rows}, {"records", records}};
}

inline void write_report(const Report& report, const Vocab& vocab, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream csv(fs::path(out_dir) / "report.csv");
    if (!csv) throw IoError("cannot write report.csv under " + out_dir);
    csv << report_csv(report);
  }
  std::ofstream js(fs::path(out_dir) / "report.json");
  if (!js) throw IoError("cannot write report.json under " + out_dir);
  js << report_json(report, vocab).dump(2) << '\n';
}

// Attack, transcribe and aggregate in one pass. With a non-empty `out_dir`
// adversarial audio, outcome and record logs, report.csv and report.json land there.
inline Report run_experiment(const ExperimentConfig& cfg, const std::vector<CorpusItem>& items,
                             const std::map<std::string, ModelParams>& models,
                             const std::vector<AttackJob>& jobs,
                             std::map<std::string, std::unique_ptr<Transcriber>>& transcribers,
                             const std::string& out_dir = {}) {
  const auto outcomes = run_attacks(cfg, items, models, jobs, out_dir);
  Report report;
  report.records = evaluate_outcomes(cfg, outcomes, transcribers, out_dir);
  report.rows = summarize(report.records);
  if (!out_dir.empty()) write_report(report, cfg.make_vocab(), out_dir);
  return report;
}

}  // namespace transaudio
