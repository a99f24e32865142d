#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "transaudio/transaudio.hpp"

namespace fs = std::filesystem;
using namespace transaudio;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs/default";
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? default_experiment_config() : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

// The resolved configuration is kept next to the artifacts it produced.
void snapshot(const ExperimentConfig& cfg, const Globals& g) {
  fs::create_directories(g.out);
  std::ofstream out(fs::path(g.out) / "config.json");
  if (!out) throw IoError("cannot write config.json under " + g.out);
  out << to_json(cfg).dump(2) << '\n';
}

std::string corpus_manifest(const Globals& g, const std::string& split) {
  return (fs::path(g.out) / "corpus" / split / "manifest.jsonl").string();
}

std::string model_path(const Globals& g, const std::string& name) {
  return (fs::path(g.out) / "models" / (name + ".json")).string();
}

std::map<std::string, ModelParams> load_models(const Globals& g,
                                               const std::vector<std::string>& names) {
  std::map<std::string, ModelParams> models;
  for (const auto& n : names) {
    if (!models.count(n)) models.emplace(n, load_model(model_path(g, n)));
  }
  return models;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_corpus_gen(const Globals& g) {
  const auto cfg = resolve(g);
  snapshot(cfg, g);
  const Vocab vocab = cfg.make_vocab();
  for (const auto& [split, opts] : {std::pair{"train", cfg.train_corpus()},
                                    std::pair{"test", cfg.test_corpus()}}) {
    const auto items = generate_corpus(vocab, opts);
    const auto manifest =
        write_corpus((fs::path(g.out) / "corpus" / split).string(), items, vocab);
    std::cout << split << ": " << items.size() << " utterances -> " << manifest << '\n';
  }
  return 0;
}

int cmd_train(const Globals& g, const std::string& only) {
  const auto cfg = resolve(g);
  snapshot(cfg, g);
  const Vocab vocab = cfg.make_vocab();
  const auto train_items = read_corpus(corpus_manifest(g, "train"), vocab);
  const auto test_items = read_corpus(corpus_manifest(g, "test"), vocab);
  fs::create_directories(fs::path(g.out) / "models");
  bool any = false;
  for (std::size_t i = 0; i < cfg.models.size(); ++i) {
    const auto& m = cfg.models[i];
    if (!only.empty() && m.name != only) continue;
    any = true;
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = train(m.arch, vocab, train_items, cfg.train_options(i));
    const auto acc = evaluate_recognition(result.params, test_items);
    save_model(result.params, model_path(g, m.name));
    std::cout << m.name << " (" << to_string(m.arch) << "): loss " << result.initial_loss
              << " -> " << result.epoch_loss.back() << ", test word accuracy "
              << acc.word_accuracy << ", " << seconds_since(t0) << " s\n";
  }
  if (!any) throw ConfigError("no model named '" + only + "' in config");
  return 0;
}

int cmd_finetune_asm(const Globals& g) {
  const auto cfg = resolve(g);
  snapshot(cfg, g);
  const Vocab vocab = cfg.make_vocab();
  auto items = read_corpus(corpus_manifest(g, "train"), vocab);
  if (items.size() > static_cast<std::size_t>(cfg.asm_utterances)) {
    items.resize(static_cast<std::size_t>(cfg.asm_utterances));
  }
  const ModelParams base = load_model(model_path(g, cfg.asm_base));
  const fs::path log_path = fs::path(g.out) / "logs" / "finetune_asm.jsonl";
  fs::create_directories(log_path.parent_path());
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write " + log_path.string());
  const auto result = finetune_asm(base, items, cfg.asm_options(), &log);
  save_model(result.params, model_path(g, cfg.asm_output));
  const auto test_items = read_corpus(corpus_manifest(g, "test"), vocab);
  std::cout << cfg.asm_output << ": test word accuracy "
            << evaluate_recognition(result.params, test_items).word_accuracy << " (base "
            << evaluate_recognition(base, test_items).word_accuracy << "), log "
            << log_path.string() << '\n';
  return 0;
}

int cmd_attack(const Globals& g, const std::string& batch_path) {
  const auto cfg = resolve(g);
  snapshot(cfg, g);
  const Vocab vocab = cfg.make_vocab();
  const auto items = read_corpus(corpus_manifest(g, "test"), vocab);
  std::vector<AttackJob> jobs;
  if (batch_path.empty()) {
    jobs = make_attack_batch(items, cfg.attack_types, cfg.utterances_per_type, vocab,
                             cfg.batch_seed());
    const fs::path path = fs::path(g.out) / "attacks" / "batch.json";
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << batch_to_json(jobs, vocab).dump(2) << '\n';
    std::cout << "batch: " << jobs.size() << " jobs -> " << path.string() << '\n';
  } else {
    std::ifstream in(batch_path);
    if (!in) throw IoError("cannot open " + batch_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(batch_path + ": " + e.what());
    }
    jobs = batch_from_json(j, vocab);
  }
  std::vector<std::string> names;
  for (const auto& v : cfg.variants) names.push_back(v.surrogate);
  const auto models = load_models(g, names);
  const auto t0 = std::chrono::steady_clock::now();
  const auto outcomes = run_attacks(cfg, items, models, jobs, g.out);
  std::cout << outcomes.size() << " adversarial examples in " << seconds_since(t0) << " s -> "
            << (fs::path(g.out) / kOutcomesFile).string() << '\n';
  return 0;
}

int cmd_eval(const Globals& g) {
  const auto cfg = resolve(g);
  const Vocab vocab = cfg.make_vocab();
  const auto outcomes = load_outcomes(g.out, vocab);
  std::vector<std::string> names;
  for (const auto& e : cfg.endpoints) {
    if (e.kind == EndpointKind::kLocal) names.push_back(e.model);
  }
  const auto models = load_models(g, names);
  auto transcribers = make_transcribers(cfg, models);
  const auto records = evaluate_outcomes(cfg, outcomes, transcribers, g.out);
  std::cout << records.size() << " records -> " << (fs::path(g.out) / kRecordsFile).string()
            << '\n';
  return 0;
}

int cmd_report(const Globals& g) {
  const auto cfg = resolve(g);
  const Vocab vocab = cfg.make_vocab();
  Report report;
  report.records = load_records(g.out, vocab);
  report.rows = summarize(report.records);
  write_report(report, vocab, g.out);
  std::cout << report_csv(report);
  return 0;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return 3;
  if (dynamic_cast<const AuthError*>(&e)) return 4;
  if (dynamic_cast<const TimeoutError*>(&e)) return 5;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextual transfer attacks on toy speech recognizers"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "master seed, overrides the config");
  app.add_option("--out", g.out, "output directory for all artifacts")->capture_default_str();

  auto* corpus = app.add_subcommand("corpus", "synthetic corpus tools");
  corpus->require_subcommand(1);
  auto* gen = corpus->add_subcommand("gen", "generate train and test corpora");

  std::string only_model;
  auto* train_cmd = app.add_subcommand("train", "train the configured models");
  train_cmd->add_option("--model", only_model, "train only this model");

  auto* ft = app.add_subcommand("finetune-asm", "fine-tune a surrogate with the smoothness term");

  std::string batch;
  auto* attack_cmd = app.add_subcommand("attack", "craft adversarial examples on the surrogates");
  attack_cmd->add_option("--batch", batch, "JSON attack batch; generated when omitted")
      ->check(CLI::ExistingFile);

  auto* eval_cmd = app.add_subcommand("eval", "transcribe adversarial audio on every endpoint");
  auto* report_cmd = app.add_subcommand("report", "aggregate records into CSV and JSON");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;

  try {
    if (gen->parsed()) return cmd_corpus_gen(g);
    if (train_cmd->parsed()) return cmd_train(g, only_model);
    if (ft->parsed()) return cmd_finetune_asm(g);
    if (attack_cmd->parsed()) return cmd_attack(g, batch);
    if (eval_cmd->parsed()) return cmd_eval(g);
    if (report_cmd->parsed()) return cmd_report(g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  }
  return 1;
}
