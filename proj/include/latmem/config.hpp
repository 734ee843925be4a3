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

// Run configuration and its strict JSON mapping. Unknown keys are rejected
// with their dotted path so typos never pass silently.

#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "latmem/errors.hpp"
#include "latmem/io.hpp"

namespace latmem {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers_enc = 2;
  std::size_t n_layers_dec = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 0;  // filled from the vocabulary at train time
  std::size_t k = 10;          // entailment memory slots
  std::size_t l = 10;          // discourse memory slots
  std::size_t max_len = 50;
  std::uint64_t seed = 1234;
  double init_std = 0.02;

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw ConfigError("model.d_model (" + std::to_string(d_model) +
                        ") must be a positive multiple of model.n_heads (" +
                        std::to_string(n_heads) + ")");
    }
    if (k < 1) throw ConfigError("model.k must be >= 1");
    if (l < 1) throw ConfigError("model.l must be >= 1");
    if (max_len < 4) throw ConfigError("model.max_len must be >= 4");
    if (d_ff == 0) throw ConfigError("model.d_ff must be >= 1");
    if (vocab_size != 0 && vocab_size < 12) throw ConfigError("model.vocab_size too small");
    if (!(init_std > 0.0)) throw ConfigError("model.init_std must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct OptimConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t grad_accum_steps = 8;  // stage-2 micro-batches per update
  std::size_t batch_size_stage1 = 64;
  std::size_t batch_size_stage2 = 2;
  double max_grad_norm = 1.0;  // <= 0 disables clipping

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("optim.learning_rate must be > 0");
    if (grad_accum_steps < 1) throw ConfigError("optim.grad_accum_steps must be >= 1");
    if (batch_size_stage1 < 1) throw ConfigError("optim.batch_size_stage1 must be >= 1");
    if (batch_size_stage2 < 1) throw ConfigError("optim.batch_size_stage2 must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("optim.beta1/beta2 must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("optim.eps must be positive");
  }

  bool operator==(const OptimConfig&) const = default;
};

struct LossWeights {
  double ddm = 1.0;
  double bow = 1.0;
  double lm = 1.0;
  double cls = 1.0;
  bool operator==(const LossWeights&) const = default;
};

struct TrainConfig {
  std::size_t num_distractors = 4;
  std::size_t epochs_per_stage = 1;
  std::size_t max_outer_iters = 10;
  std::size_t patience = 2;
  double min_delta = 1e-3;
  bool shuffle = true;
  bool operator==(const TrainConfig&) const = default;
};

struct DataConfig {
  std::string nli;             // nli.jsonl
  std::string dialogue;        // dialogue.jsonl
  std::string valid_dialogue;  // optional; training dialogues when empty
  std::size_t min_count = 1;
  bool operator==(const DataConfig&) const = default;
};

enum class RankingMode { kClassifier, kLikelihood };

struct GenerationConfig {
  std::size_t beam_size = 4;
  std::size_t max_new_tokens = 50;
  double length_alpha = 0.7;
  RankingMode ranking = RankingMode::kClassifier;
  bool operator==(const GenerationConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  OptimConfig optim;
  LossWeights loss_weights;
  TrainConfig train;
  DataConfig data;
  GenerationConfig generation;

  void validate() const {
    model.validate();
    optim.validate();
    if (generation.beam_size < 1) throw ConfigError("generation.beam_size must be >= 1");
    if (train.epochs_per_stage < 1) throw ConfigError("train.epochs_per_stage must be >= 1");
  }

  bool operator==(const RunConfig&) const = default;
};

namespace detail {

// Reads known keys from one JSON object and rejects the rest.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError("config section '" + prefix_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError("config key '" + path(key) + "' must be a non-negative integer");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError("config key '" + path(key) + "' must be a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("config key '" + path(key) + "' must be a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("config key '" + path(key) + "' must be a string");
    }
    out = v.get<T>();
  }

  const nlohmann::json* section(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + path(k.c_str()) + "'");
    }
  }

  std::string path(const char* key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& prefix = "model") {
  ModelConfig c;
  detail::FieldReader r(j, prefix);
  r.get("d_model", c.d_model);
  r.get("n_layers_enc", c.n_layers_enc);
  r.get("n_layers_dec", c.n_layers_dec);
  r.get("n_heads", c.n_heads);
  r.get("d_ff", c.d_ff);
  r.get("vocab_size", c.vocab_size);
  r.get("k", c.k);
  r.get("l", c.l);
  r.get("max_len", c.max_len);
  r.get("seed", c.seed);
  r.get("init_std", c.init_std);
  r.finish();
  return c;
}

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model}, {"n_layers_enc", c.n_layers_enc}, {"n_layers_dec", c.n_layers_dec},
          {"n_heads", c.n_heads}, {"d_ff", c.d_ff}, {"vocab_size", c.vocab_size}, {"k", c.k},
          {"l", c.l}, {"max_len", c.max_len}, {"seed", c.seed}, {"init_std", c.init_std}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::FieldReader root(j, "");
  if (const auto* m = root.section("model")) c.model = model_config_from_json(*m);
  if (const auto* o = root.section("optim")) {
    detail::FieldReader r(*o, "optim");
    r.get("learning_rate", c.optim.learning_rate);
    r.get("beta1", c.optim.beta1);
    r.get("beta2", c.optim.beta2);
    r.get("eps", c.optim.eps);
    r.get("weight_decay", c.optim.weight_decay);
    r.get("grad_accum_steps", c.optim.grad_accum_steps);
    r.get("batch_size_stage1", c.optim.batch_size_stage1);
    r.get("batch_size_stage2", c.optim.batch_size_stage2);
    r.get("max_grad_norm", c.optim.max_grad_norm);
    r.finish();
  }
  if (const auto* w = root.section("loss_weights")) {
    detail::FieldReader r(*w, "loss_weights");
    r.get("ddm", c.loss_weights.ddm);
    r.get("bow", c.loss_weights.bow);
    r.get("lm", c.loss_weights.lm);
    r.get("cls", c.loss_weights.cls);
    r.finish();
  }
  if (const auto* t = root.section("train")) {
    detail::FieldReader r(*t, "train");
    r.get("num_distractors", c.train.num_distractors);
    r.get("epochs_per_stage", c.train.epochs_per_stage);
    r.get("max_outer_iters", c.train.max_outer_iters);
    r.get("patience", c.train.patience);
    r.get("min_delta", c.train.min_delta);
    r.get("shuffle", c.train.shuffle);
    r.finish();
  }
  if (const auto* d = root.section("data")) {
    detail::FieldReader r(*d, "data");
    r.get("nli", c.data.nli);
    r.get("dialogue", c.data.dialogue);
    r.get("valid_dialogue", c.data.valid_dialogue);
    r.get("min_count", c.data.min_count);
    r.finish();
  }
  if (const auto* g = root.section("generation")) {
    detail::FieldReader r(*g, "generation");
    r.get("beam_size", c.generation.beam_size);
    r.get("max_new_tokens", c.generation.max_new_tokens);
    r.get("length_alpha", c.generation.length_alpha);
    std::string ranking = c.generation.ranking == RankingMode::kClassifier ? "classifier" : "likelihood";
    r.get("ranking", ranking);
    if (ranking == "classifier") {
      c.generation.ranking = RankingMode::kClassifier;
    } else if (ranking == "likelihood") {
      c.generation.ranking = RankingMode::kLikelihood;
    } else {
      throw ConfigError("config key 'generation.ranking' must be classifier|likelihood");
    }
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = to_json(c.model);
  j["optim"] = {{"learning_rate", c.optim.learning_rate},
                {"beta1", c.optim.beta1},
                {"beta2", c.optim.beta2},
                {"eps", c.optim.eps},
                {"weight_decay", c.optim.weight_decay},
                {"grad_accum_steps", c.optim.grad_accum_steps},
                {"batch_size_stage1", c.optim.batch_size_stage1},
                {"batch_size_stage2", c.optim.batch_size_stage2},
                {"max_grad_norm", c.optim.max_grad_norm}};
  j["loss_weights"] = {{"ddm", c.loss_weights.ddm},
                       {"bow", c.loss_weights.bow},
                       {"lm", c.loss_weights.lm},
                       {"cls", c.loss_weights.cls}};
  j["train"] = {{"num_distractors", c.train.num_distractors},
                {"epochs_per_stage", c.train.epochs_per_stage},
                {"max_outer_iters", c.train.max_outer_iters},
                {"patience", c.train.patience},
                {"min_delta", c.train.min_delta},
                {"shuffle", c.train.shuffle}};
  j["data"] = {{"nli", c.data.nli},
               {"dialogue", c.data.dialogue},
               {"valid_dialogue", c.data.valid_dialogue},
               {"min_count", c.data.min_count}};
  j["generation"] = {{"beam_size", c.generation.beam_size},
                     {"max_new_tokens", c.generation.max_new_tokens},
                     {"length_alpha", c.generation.length_alpha},
                     {"ranking", c.generation.ranking == RankingMode::kClassifier ? "classifier"
                                                                                  : "likelihood"}};
  return j;
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

// Relative corpus paths are resolved against the config file's directory.
inline RunConfig load_run_config(const fs::path& path) {
  RunConfig c = parse_run_config(read_file(path));
  const fs::path base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.data.nli);
  resolve(c.data.dialogue);
  resolve(c.data.valid_dialogue);
  return c;
}

// Stable fingerprint of the fully serialised configuration.
inline std::string config_fingerprint(const RunConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

}  // namespace latmem
