/* Copyright 2026 The latmem Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Command-line front end: synth, train, generate, evaluate, gradcheck.
//
// Exit codes: 0 ok, 1 verification failure, 2 config or input error,
// 3 artifact mismatch, 4 I/O error.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gradcheck_suite.hpp"
#include "latmem/checkpoint.hpp"
#include "latmem/generation.hpp"
#include "latmem/metrics.hpp"
#include "latmem/training.hpp"
#include "synth.hpp"

namespace {

using namespace latmem;

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kConfigError = 2, kArtifactMismatch = 3, kIoError = 4 };

constexpr const char* kConfigEnv = "LATMEM_CONFIG";

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

std::string config_path(const Globals& g) {
  if (!g.config.empty()) return g.config;
  const char* env = std::getenv(kConfigEnv);
  return env ? std::string(env) : std::string();
}

RunConfig load_config(const Globals& g) {
  const std::string path = config_path(g);
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  if (g.seed) c.model.seed = *g.seed;
  c.validate();
  return c;
}

// Loading a checkpoint: malformed content is an artifact problem, not a
// user input problem.
Checkpoint open_checkpoint(const std::string& dir) {
  try {
    return load_checkpoint(dir);
  } catch (const FormatError& e) {
    throw ArtifactError(e.what());
  } catch (const ConfigError& e) {
    throw ArtifactError(std::string("checkpoint config: ") + e.what());
  }
}

// A user-supplied config must describe the same architecture as the
// checkpoint; vocab_size comes from the checkpoint.
void check_model_matches(const ModelConfig& user, const ModelConfig& stored) {
  auto field = [](const char* name, std::size_t a, std::size_t b) {
    if (a != b) {
      throw ArtifactError(std::string("model.") + name + " is " + std::to_string(a) + " in the config but " +
                          std::to_string(b) + " in the checkpoint");
    }
  };
  field("d_model", user.d_model, stored.d_model);
  field("n_layers_enc", user.n_layers_enc, stored.n_layers_enc);
  field("n_layers_dec", user.n_layers_dec, stored.n_layers_dec);
  field("n_heads", user.n_heads, stored.n_heads);
  field("d_ff", user.d_ff, stored.d_ff);
  field("k", user.k, stored.k);
  field("l", user.l, stored.l);
  field("max_len", user.max_len, stored.max_len);
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string kind;
  std::size_t size = 0;
  std::size_t turns = 3;
  std::size_t distractors = 4;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  const RunConfig cfg = load_config(g);
  if (a.size < 1) throw ConfigError("synth: --size must be >= 1");
  if (g.out.empty()) throw ConfigError("synth: --out is required");
  const std::uint64_t seed = cfg.model.seed;
  std::string text;
  if (a.kind == "nli") {
    const auto pairs = synth::nli(a.size, seed);
    text = to_jsonl(std::span<const NliPair>(pairs));
  } else {
    const auto sessions = synth::dialogues(a.size, seed, a.turns, a.distractors);
    text = to_jsonl(std::span<const DialogueSession>(sessions));
  }
  write_file_atomic(g.out, text);
  std::cout << "wrote " << a.size << " " << a.kind << " records to " << g.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string stage = "alternate";
  std::string init;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  RunConfig cfg = load_config(g);
  const bool need_nli = a.stage != "2", need_dlg = a.stage != "1";
  if (need_nli && cfg.data.nli.empty()) throw ConfigError("data.nli is required for stage " + a.stage);
  if (need_dlg && cfg.data.dialogue.empty()) throw ConfigError("data.dialogue is required for stage " + a.stage);

  std::vector<NliPair> nli;
  std::vector<DialogueSession> dialogues, valid;
  if (!cfg.data.nli.empty()) nli = entailment_only(load_nli(cfg.data.nli));
  if (!cfg.data.dialogue.empty()) dialogues = load_dialogues(cfg.data.dialogue);
  if (!cfg.data.valid_dialogue.empty()) valid = load_dialogues(cfg.data.valid_dialogue);

  std::optional<TrainState> st;
  Vocab vocab;
  if (!a.init.empty()) {
    Checkpoint c = open_checkpoint(a.init);
    if (!config_path(g).empty()) check_model_matches(cfg.model, c.config.model);
    const std::uint64_t seed = cfg.model.seed;
    cfg.model = c.config.model;
    cfg.model.seed = seed;
    vocab = std::move(c.vocab);
    st.emplace(std::move(c.state));
  } else {
    vocab = Vocab::build(corpus_documents(nli, dialogues), cfg.data.min_count);
    cfg.model.vocab_size = vocab.size();
    st.emplace(Model(cfg.model), cfg.model.seed);
  }
  const std::size_t max_len = cfg.model.max_len;

  const fs::path out = g.out.empty() ? fs::path("run") : fs::path(g.out);
  fs::create_directories(out);
  std::ofstream log_file(out / "train_log.jsonl", std::ios::trunc);
  if (!log_file) throw IoError("cannot write " + (out / "train_log.jsonl").string());
  const LogSink log = [&](const std::string& line) { log_file << line << '\n'; };
  const fs::path ckpt = out / "ckpt";
  auto step_dir = [&](const TrainState& s) { return ckpt / ("step-" + std::to_string(s.step)); };

  std::vector<EntailmentExample> nli_ex;
  if (need_nli) nli_ex = build_entailment_examples(nli, vocab, max_len);
  std::vector<TurnExample> turn_ex, valid_ex;
  if (need_dlg) {
    const std::size_t t = cfg.train.num_distractors;
    const CandidateSource src = t > 0 ? CandidateSource::kFileOrSample : CandidateSource::kNone;
    turn_ex = build_turn_examples(dialogues, vocab, max_len, t, src, cfg.model.seed);
    if (!valid.empty()) valid_ex = build_turn_examples(valid, vocab, max_len, t, src, cfg.model.seed);
  }

  nlohmann::ordered_json metrics;
  if (a.stage == "1") {
    enter_stage(*st, 1);
    EpochSummary e;
    for (std::size_t i = 0; i < cfg.train.epochs_per_stage; ++i) e = train_stage1(*st, nli_ex, cfg, log);
    metrics["stage"] = 1;
    metrics["train_loss"] = e.mean_loss;
    metrics["token_accuracy"] = entailment_token_accuracy(st->model, nli_ex);
    save_checkpoint(step_dir(*st), *st, cfg, vocab, metrics);
  } else if (a.stage == "2") {
    enter_stage(*st, 2);
    EpochSummary e;
    for (std::size_t i = 0; i < cfg.train.epochs_per_stage; ++i) e = train_stage2(*st, turn_ex, cfg, log);
    metrics["stage"] = 2;
    metrics["train_loss"] = e.mean_loss;
    metrics["validation"] = validation_loss(st->model, valid_ex.empty() ? turn_ex : valid_ex, cfg.loss_weights);
    save_checkpoint(step_dir(*st), *st, cfg, vocab, metrics);
  } else if (a.stage == "alternate") {
    AlternateHooks hooks;
    hooks.log = log;
    hooks.on_iteration = [&](const TrainState& s, std::size_t outer, double val) {
      nlohmann::ordered_json m;
      m["outer"] = outer;
      m["validation"] = val;
      save_checkpoint(step_dir(s), s, cfg, vocab, m);
    };
    const AlternateSummary sum = alternate(*st, nli_ex, turn_ex, valid_ex, cfg, hooks);
    metrics["outer_iterations"] = sum.outer_iterations;
    metrics["best_iteration"] = sum.best_iteration;
    metrics["early_stopped"] = sum.early_stopped;
    metrics["validation"] = sum.validation;
  } else {
    throw ConfigError("train: --stage must be 1, 2 or alternate");
  }
  log_file.flush();
  if (!log_file) throw IoError("write failed: " + (out / "train_log.jsonl").string());
  save_checkpoint(ckpt / "final", *st, cfg, vocab, metrics);
  std::cout << "stage " << a.stage << ": " << st->step << " steps, checkpoint " << (ckpt / "final").string()
            << "\n" << metrics.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string checkpoint;
  std::vector<std::string> persona;
  std::vector<std::string> history;
  std::string query;
  std::optional<std::size_t> beam;
  bool verbose = false;
};

int cmd_generate(const Globals& g, const GenerateArgs& a) {
  Checkpoint c = open_checkpoint(a.checkpoint);
  GenerationConfig gen = c.config.generation;
  if (!config_path(g).empty()) {
    const RunConfig user = load_config(g);
    check_model_matches(user.model, c.config.model);
    gen = user.generation;
  }
  if (a.beam) gen.beam_size = *a.beam;
  if (gen.beam_size < 1) throw ConfigError("generate: beam size must be >= 1");
  if (a.history.size() % 2 != 0) throw ConfigError("generate: --history takes query/response pairs");
  DialogueInput in;
  in.persona = a.persona;
  for (std::size_t i = 0; i < a.history.size(); i += 2) in.history.emplace_back(a.history[i], a.history[i + 1]);
  in.query = a.query;

  const GenerationResult r = generate_response(c.state.model, c.vocab, in, gen);
  std::cout << r.text << "\n";
  if (!r.best.finished) std::cerr << "warning: no finished hypothesis within the length budget\n";
  if (a.verbose) {
    auto print = [](const char* name, const std::vector<double>& v) {
      std::cout << name;
      for (double x : v) std::cout << ' ' << x;
      std::cout << '\n';
    };
    print("pi:", r.pi);
    print("rho:", r.rho);
    std::cout << "score: " << r.score << "\n";
  }
  if (!g.out.empty()) {
    nlohmann::ordered_json j;
    j["response"] = r.text;
    j["finished"] = r.best.finished;
    j["score"] = r.score;
    j["logprob"] = r.best.logprob;
    j["pi"] = r.pi;
    j["rho"] = r.rho;
    write_file_atomic(g.out, j.dump(2) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string checkpoint;
  std::string corpus;
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a) {
  Checkpoint c = open_checkpoint(a.checkpoint);
  RunConfig cfg = c.config;
  if (!config_path(g).empty()) {
    const RunConfig user = load_config(g);
    check_model_matches(user.model, c.config.model);
    cfg.generation = user.generation;
  }
  std::string corpus = a.corpus;
  if (corpus.empty()) corpus = !cfg.data.valid_dialogue.empty() ? cfg.data.valid_dialogue : cfg.data.dialogue;
  if (corpus.empty()) throw ConfigError("evaluate: no corpus (--corpus or data.valid_dialogue)");
  const auto sessions = load_dialogues(corpus);

  EvalOutputs o = evaluate_sessions(c.state.model, c.vocab, sessions, cfg);
  o.report.config_fingerprint = config_fingerprint(cfg);
  o.report.checkpoint = fs::path(a.checkpoint).lexically_normal().filename().string() + "@" +
                        model_checksum(c.state.model);
  for (const std::string& w : o.report.warnings) std::cerr << "warning: " << w << "\n";
  const fs::path out = g.out.empty() ? fs::path("report.json") : fs::path(g.out);
  write_file_atomic(out, to_json(o.report).dump(2) + "\n");

  const EvalReport& r = o.report;
  std::printf("%-12s %s\n", "metric", "value");
  if (r.hits_at_1) std::printf("%-12s %.4f\n", "hits@1", *r.hits_at_1);
  std::printf("%-12s %.4f\n%-12s %.4f\n%-12s %.4f\n%-12s %.4f\n", "ppl", r.ppl, "f1", r.f1, "dist-1", r.dist1,
              "dist-2", r.dist2);
  for (std::size_t n = 0; n < r.bleu.size(); ++n) std::printf("bleu-%-7zu %.4f\n", n + 1, r.bleu[n]);
  std::printf("%-12s %zu\n", "examples", r.n_examples);
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::string corrupt;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const Globals& g, const GradcheckArgs& a) {
  const RunConfig cfg = load_config(g);
  std::optional<CorruptBackwardGuard> corrupt;
  if (!a.corrupt.empty()) {
    const auto op = op_from_name(a.corrupt);
    if (!op) throw ConfigError("gradcheck: unknown op '" + a.corrupt + "'");
    corrupt.emplace(*op);
    std::cout << "test hook: backward of '" << a.corrupt << "' scaled by 1.5\n";
  }
  const auto start = std::chrono::steady_clock::now();
  const std::vector<ComponentCheck> checks = run_gradient_suite(cfg.model.seed, a.tolerance);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::vector<std::string> failed;
  nlohmann::ordered_json report = nlohmann::json::array();
  for (const ComponentCheck& c : checks) {
    std::printf("%s %-6s max_rel_error=%.3e worst=%s[%zu] analytic=%.6e numeric=%.6e "
                "zero_grad_coords=%zu max_rel_error_resolved=%.3e\n",
                c.passed ? "PASS" : "FAIL", c.component.c_str(), c.result.max_rel_error,
                c.worst_parameter.c_str(), c.result.worst_index, c.result.analytic, c.result.numeric,
                c.result.zero_gradient_coordinates, c.result.max_rel_error_resolved);
    if (!c.passed) failed.push_back(c.component);
    report.push_back({{"component", c.component},
                      {"passed", c.passed},
                      {"max_rel_error", c.result.max_rel_error},
                      {"worst_parameter", c.worst_parameter},
                      {"worst_index", c.result.worst_index},
                      {"zero_gradient_coordinates", c.result.zero_gradient_coordinates},
                      {"max_rel_error_resolved", c.result.max_rel_error_resolved}});
  }
  std::printf("coordinates per component: %zu, seconds: %.1f\n", checks.front().result.coordinates, secs);
  if (!g.out.empty()) write_file_atomic(g.out, report.dump(2) + "\n");
  if (failed.empty()) return kOk;
  std::cout << "gradcheck failed for:";
  for (const std::string& f : failed) std::cout << ' ' << f;
  if (!a.corrupt.empty()) std::cout << " (corrupted op: " << a.corrupt << ")";
  std::cout << "\n";
  return kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-memory persona dialogue toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, std::string("Run config JSON (default: $") + kConfigEnv + ")");
  auto* seed_opt = app.add_option("--seed", seed, "Override model.seed");
  app.add_option("--out", g.out, "Output path (file or directory, per command)");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Write a seeded synthetic corpus");
  synth_cmd->add_option("--kind", sa.kind, "nli or dialogue")->required()->check(CLI::IsMember({"nli", "dialogue"}));
  synth_cmd->add_option("--size", sa.size, "Number of pairs or sessions")->required();
  synth_cmd->add_option("--turns", sa.turns, "Turns per dialogue session (2-4)");
  synth_cmd->add_option("--distractors", sa.distractors, "Candidates per turn in the file");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train stage 1, stage 2 or both alternately");
  train_cmd->add_option("--stage", ta.stage, "1, 2 or alternate")->check(CLI::IsMember({"1", "2", "alternate"}));
  train_cmd->add_option("--init", ta.init, "Checkpoint directory to continue from");

  GenerateArgs ga;
  std::size_t beam = 0;
  auto* gen_cmd = app.add_subcommand("generate", "Generate a response");
  gen_cmd->add_option("--checkpoint", ga.checkpoint, "Checkpoint directory")->required();
  gen_cmd->add_option("--persona", ga.persona, "Persona sentence (repeatable)");
  gen_cmd->add_option("--history", ga.history, "Earlier query then response (repeatable, in pairs)");
  gen_cmd->add_option("--query", ga.query, "Current query")->required();
  auto* beam_opt = gen_cmd->add_option("--beam", beam, "Beam size");
  gen_cmd->add_flag("--verbose", ga.verbose, "Print memory read weights");

  EvaluateArgs ea;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a dialogue corpus");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--corpus", ea.corpus, "Dialogue corpus (default: data.valid_dialogue)");

  GradcheckArgs ca;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
  grad_cmd->add_option("--corrupt", ca.corrupt, "Test hook: corrupt the backward of this op");
  grad_cmd->add_option("--tolerance", ca.tolerance, "Maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }
  if (*seed_opt) g.seed = seed;
  if (*beam_opt) ga.beam = beam;

  try {
    if (*synth_cmd) return cmd_synth(g, sa);
    if (*train_cmd) return cmd_train(g, ta);
    if (*gen_cmd) return cmd_generate(g, ga);
    if (*eval_cmd) return cmd_evaluate(g, ea);
    if (*grad_cmd) return cmd_gradcheck(g, ca);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ArtifactError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kArtifactMismatch;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerifyFailed;
  }
  return kConfigError;
}
