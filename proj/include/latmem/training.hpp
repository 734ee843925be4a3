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

// Two-stage training. Stage 1 fits the entailment memory on premise to
// hypothesis generation; stage 2 freezes it and fits the discourse memory and
// dialogue heads. `alternate` repeats both until validation loss stalls.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latmem/config.hpp"
#include "latmem/data.hpp"
#include "latmem/model.hpp"
#include "latmem/objectives.hpp"
#include "latmem/optim.hpp"

namespace latmem {

using LogSink = std::function<void(const std::string&)>;

// Parameters excluded from updates in a stage. Stage 1 never touches the
// discourse read or the dialogue heads; stage 2 keeps the entailment read
// (memory and projection) fixed.
inline bool frozen_in_stage(int stage, const std::string& name) {
  if (stage == 1) return params::is_discourse_read(name) || params::is_dialogue_head(name);
  return params::is_entailment_read(name);
}

struct TrainState {
  Model model;
  MomentMap moments;
  int stage = 1;
  std::set<std::string> freeze_set;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::mt19937_64 rng;
  double best_validation = std::numeric_limits<double>::infinity();

  TrainState(Model m, std::uint64_t seed) : model(std::move(m)), rng(seed) {}

  TrainState clone() const {
    TrainState s(model.clone(), 0);
    s.moments = moments;
    s.stage = stage;
    s.freeze_set = freeze_set;
    s.step = step;
    s.epoch = epoch;
    s.rng = rng;
    s.best_validation = best_validation;
    s.apply_freeze();
    return s;
  }

  // Parameters that receive optimizer updates in the current stage.
  std::vector<NamedTensor> trainable() const {
    std::vector<NamedTensor> out;
    for (const NamedTensor& e : model.parameters().entries()) {
      if (!freeze_set.count(e.name)) out.push_back(e);
    }
    return out;
  }

  void apply_freeze() {
    for (const NamedTensor& e : model.parameters().entries()) {
      Tensor t = e.tensor;
      t.set_requires_grad(!freeze_set.count(e.name));
    }
  }
};

// Switches stage, rebuilds the freeze set and drops moments of parameters
// that are now frozen.
inline void enter_stage(TrainState& st, int stage) {
  if (stage != 1 && stage != 2) throw ContractError("enter_stage: stage must be 1 or 2");
  st.stage = stage;
  st.freeze_set.clear();
  for (const NamedTensor& e : st.model.parameters().entries()) {
    if (frozen_in_stage(stage, e.name)) st.freeze_set.insert(e.name);
  }
  for (auto it = st.moments.begin(); it != st.moments.end();) {
    it = st.freeze_set.count(it->first) ? st.moments.erase(it) : std::next(it);
  }
  st.apply_freeze();
  st.model.parameters().zero_grad();
}

struct StepResult {
  LossBreakdown loss;
  StepReport optim;
};

namespace detail {

inline void log_step(const LogSink& log, int stage, std::uint64_t step, const LossBreakdown& b,
                     const StepReport& r) {
  if (!log) return;
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["step"] = step;
  if (stage == 1) {
    j["l_erm"] = b.total;
  } else {
    j["l_ddm"] = b.l_ddm;
    j["l_bow"] = b.l_bow;
    j["l_lm"] = b.l_lm;
    j["l_cls"] = b.l_cls;
    j["total"] = b.total;
  }
  j["grad_norm"] = r.grad_norm;
  if (!r.applied) j["event"] = "skipped_non_finite_gradient";
  log(j.dump());
}

inline StepReport optimizer_step(TrainState& st, const OptimConfig& cfg) {
  const std::vector<NamedTensor> params = st.trainable();
  const StepReport r = adamw_step(params, st.moments, cfg);
  st.model.parameters().zero_grad();
  ++st.step;
  return r;
}

}  // namespace detail

// One optimizer step over `batch`, each example's gradient scaled by 1/|batch|.
inline StepResult train_step_stage1(TrainState& st, std::span<const EntailmentExample> batch,
                                    const RunConfig& cfg, const LogSink& log = {}) {
  if (st.stage != 1) throw ContractError("train_stage1: state is in stage " + std::to_string(st.stage));
  if (batch.empty()) throw ContractError("train_stage1: empty batch");
  const double w = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const EntailmentExample& ex : batch) {
    const Tensor loss = stage1_example_loss(st.model, ex);
    total += loss.item();
    backward(scale(loss, w));
  }
  StepResult r;
  r.loss.l_lm = total * w;
  r.loss.total = r.loss.l_lm;
  r.optim = detail::optimizer_step(st, cfg.optim);
  detail::log_step(log, 1, st.step, r.loss, r.optim);
  return r;
}

// One optimizer step over `batch`, processed as micro-batches of
// batch_size_stage2 whose gradients accumulate before the update. Every
// example contributes its weighted loss scaled by 1/|batch|; the
// orthogonality term is added once per step.
inline StepResult train_step_stage2(TrainState& st, std::span<const TurnExample> batch,
                                    const RunConfig& cfg, const LogSink& log = {}) {
  if (st.stage != 2) throw ContractError("train_stage2: state is in stage " + std::to_string(st.stage));
  if (batch.empty()) throw ContractError("train_stage2: empty batch");
  const LossWeights& lw = cfg.loss_weights;
  const double w = 1.0 / static_cast<double>(batch.size());
  const std::size_t micro = cfg.optim.batch_size_stage2;
  LossBreakdown b;
  for (std::size_t start = 0; start < batch.size(); start += micro) {
    const std::size_t end = std::min(batch.size(), start + micro);
    for (std::size_t i = start; i < end; ++i) {
      const TurnExample& ex = batch[i];
      if (cfg.train.num_distractors > 0 && ex.candidates.empty()) {
        throw ContractError("train_stage2: session " + std::to_string(ex.session) + " turn " +
                            std::to_string(ex.turn) + " has no candidates");
      }
      const Stage2ExampleLosses l = stage2_example_losses(st.model, ex);
      b.l_lm += l.l_lm.item() * w;
      b.l_bow += l.l_bow.item() * w;
      b.l_cls += l.l_cls.item() * w;
      const Tensor weighted =
          add(add(scale(l.l_lm, lw.lm), scale(l.l_bow, lw.bow)), scale(l.l_cls, lw.cls));
      backward(scale(weighted, w));
    }
  }
  const Tensor ddm = orthogonality_loss(st.model.entailment_memory().rows, st.model.discourse_memory().rows);
  b.l_ddm = ddm.item();
  backward(scale(ddm, lw.ddm));
  b.total = lw.ddm * b.l_ddm + lw.bow * b.l_bow + lw.lm * b.l_lm + lw.cls * b.l_cls;

  StepResult r;
  r.loss = b;
  r.optim = detail::optimizer_step(st, cfg.optim);
  detail::log_step(log, 2, st.step, r.loss, r.optim);
  return r;
}

struct EpochSummary {
  std::size_t steps = 0;
  double mean_loss = 0.0;
  std::size_t skipped = 0;
};

namespace detail {

inline std::vector<std::size_t> epoch_order(TrainState& st, std::size_t n, bool shuffle) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) std::shuffle(order.begin(), order.end(), st.rng);
  return order;
}

template <typename Example, typename StepFn>
EpochSummary run_epoch(TrainState& st, std::span<const Example> examples, std::size_t step_size,
                       bool shuffle, StepFn step) {
  if (examples.empty()) throw ContractError("training: empty example set");
  const std::vector<std::size_t> order = epoch_order(st, examples.size(), shuffle);
  EpochSummary s;
  std::vector<Example> batch;
  for (std::size_t start = 0; start < order.size(); start += step_size) {
    batch.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + step_size); ++i) {
      batch.push_back(examples[order[i]]);
    }
    const StepResult r = step(std::span<const Example>(batch));
    s.mean_loss += r.loss.total;
    if (!r.optim.applied) ++s.skipped;
    ++s.steps;
  }
  s.mean_loss /= static_cast<double>(s.steps);
  ++st.epoch;
  return s;
}

}  // namespace detail

inline EpochSummary train_stage1(TrainState& st, std::span<const EntailmentExample> examples,
                                 const RunConfig& cfg, const LogSink& log = {}) {
  return detail::run_epoch(st, examples, cfg.optim.batch_size_stage1, cfg.train.shuffle,
                           [&](std::span<const EntailmentExample> b) {
                             return train_step_stage1(st, b, cfg, log);
                           });
}

// An optimizer step consumes batch_size_stage2 * grad_accum_steps examples.
inline EpochSummary train_stage2(TrainState& st, std::span<const TurnExample> examples,
                                 const RunConfig& cfg, const LogSink& log = {}) {
  const std::size_t per_step = cfg.optim.batch_size_stage2 * cfg.optim.grad_accum_steps;
  return detail::run_epoch(st, examples, per_step, cfg.train.shuffle,
                           [&](std::span<const TurnExample> b) {
                             return train_step_stage2(st, b, cfg, log);
                           });
}

// Mean weighted per-turn loss plus the orthogonality term.
inline double validation_loss(const Model& model, std::span<const TurnExample> examples,
                              const LossWeights& lw) {
  if (examples.empty()) throw ContractError("validation_loss: empty validation set");
  NoGradGuard guard;
  double total = 0.0;
  for (const TurnExample& ex : examples) {
    const Stage2ExampleLosses l = stage2_example_losses(model, ex);
    total += lw.lm * l.l_lm.item() + lw.bow * l.l_bow.item() + lw.cls * l.l_cls.item();
  }
  total /= static_cast<double>(examples.size());
  return total + lw.ddm * orthogonality_loss(model.entailment_memory().rows,
                                             model.discourse_memory().rows).item();
}

// Teacher-forced argmax accuracy over hypothesis target tokens.
inline double entailment_token_accuracy(const Model& model, std::span<const EntailmentExample> examples) {
  NoGradGuard guard;
  std::size_t hit = 0, total = 0;
  for (const EntailmentExample& ex : examples) {
    const EncoderOutput enc = model.encode(ex.premise);
    const LatentRead read = model.read_entailment_memory(enc.h_z);
    const DecoderOutput out = model.decode(enc, ex.hypothesis, {read.z, std::nullopt});
    const Tensor logits = target_logits(out.logits, ex.hypothesis);
    const std::vector<int> targets = decoder_targets(ex.hypothesis);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      std::size_t best = 0;
      for (std::size_t v = 1; v < logits.cols(); ++v) {
        if (logits.at(t, v) > logits.at(t, best)) best = v;
      }
      hit += static_cast<int>(best) == targets[t];
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

struct AlternateSummary {
  std::size_t outer_iterations = 0;
  std::size_t best_iteration = 0;
  bool early_stopped = false;
  std::vector<double> validation;
};

struct AlternateHooks {
  LogSink log;
  // Called after each outer iteration with the validation loss.
  std::function<void(const TrainState&, std::size_t, double)> on_iteration;
};

// Stage 1 then stage 2 per outer iteration, epochs_per_stage epochs each.
// Stops after `patience` iterations without a min_delta improvement or at
// max_outer_iters, and leaves `st` at the best-validation iteration.
inline AlternateSummary alternate(TrainState& st, std::span<const EntailmentExample> nli,
                                  std::span<const TurnExample> dialogue,
                                  std::span<const TurnExample> valid, const RunConfig& cfg,
                                  const AlternateHooks& hooks = {}) {
  if (nli.empty() || dialogue.empty()) throw ContractError("alternate: both corpora are required");
  AlternateSummary sum;
  std::optional<TrainState> best;
  std::size_t bad = 0;
  for (std::size_t outer = 0; outer < cfg.train.max_outer_iters; ++outer) {
    enter_stage(st, 1);
    for (std::size_t e = 0; e < cfg.train.epochs_per_stage; ++e) train_stage1(st, nli, cfg, hooks.log);
    enter_stage(st, 2);
    for (std::size_t e = 0; e < cfg.train.epochs_per_stage; ++e) train_stage2(st, dialogue, cfg, hooks.log);
    const double val = validation_loss(st.model, valid.empty() ? dialogue : valid, cfg.loss_weights);
    sum.validation.push_back(val);
    ++sum.outer_iterations;
    if (hooks.log) {
      nlohmann::ordered_json j;
      j["outer"] = outer;
      j["validation"] = val;
      hooks.log(j.dump());
    }
    const bool improved = val < st.best_validation - cfg.train.min_delta;
    if (improved) {
      st.best_validation = val;
      best = st.clone();
      sum.best_iteration = outer;
      bad = 0;
    }
    if (hooks.on_iteration) hooks.on_iteration(st, outer, val);
    if (!improved && ++bad >= cfg.train.patience) {
      sum.early_stopped = true;
      break;
    }
  }
  if (best) st = std::move(*best);
  return sum;
}

}  // namespace latmem
