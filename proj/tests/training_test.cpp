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

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "latmem/checkpoint.hpp"
#include "latmem/training.hpp"
#include "synth.hpp"

namespace latmem {
namespace {

struct Fixture {
  RunConfig cfg;
  Vocab vocab;
  std::vector<EntailmentExample> nli;
  std::vector<TurnExample> turns;
};

Fixture make_fixture(std::size_t sessions = 8) {
  Fixture f;
  const auto pairs = synth::nli(8, 1);
  const auto dlg = synth::dialogues(sessions, 2, 2, 4);
  f.vocab = Vocab::build(corpus_documents(pairs, dlg));
  f.cfg.model.d_model = 16;
  f.cfg.model.n_heads = 2;
  f.cfg.model.n_layers_enc = 1;
  f.cfg.model.n_layers_dec = 1;
  f.cfg.model.d_ff = 32;
  f.cfg.model.k = 3;
  f.cfg.model.l = 3;
  f.cfg.model.max_len = 40;
  f.cfg.model.vocab_size = f.vocab.size();
  f.cfg.optim.learning_rate = 1e-2;
  f.cfg.optim.batch_size_stage1 = 4;
  f.cfg.optim.batch_size_stage2 = 2;
  f.cfg.optim.grad_accum_steps = 2;
  f.nli = build_entailment_examples(pairs, f.vocab, f.cfg.model.max_len);
  f.turns = build_turn_examples(dlg, f.vocab, f.cfg.model.max_len, 4, CandidateSource::kFileOrSample, 3);
  return f;
}

TrainState fresh(const Fixture& f, int stage) {
  TrainState st(Model(f.cfg.model), f.cfg.model.seed);
  enter_stage(st, stage);
  return st;
}

std::vector<NamedTensor> single_param(Tensor p) { return {{"p", std::move(p)}}; }

TEST(AdamW, ZeroGradientZeroDecayIsNoOp) {
  Tensor p = Tensor::vector({1.0, -2.0, 3.0}, true);
  MomentMap mo;
  OptimConfig cfg;
  const auto params = single_param(p);
  ASSERT_TRUE(adamw_step(params, mo, cfg).applied);
  EXPECT_EQ(p.values()[0], 1.0);
  EXPECT_EQ(p.values()[1], -2.0);
}

TEST(AdamW, FirstStepClosedForm) {
  Tensor p = Tensor::vector({1.0, -2.0, 3.0}, true);
  const std::vector<double> g{0.5, -0.01, 0.0};
  std::copy(g.begin(), g.end(), p.mutable_grad().begin());
  MomentMap mo;
  OptimConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.max_grad_norm = 0.0;
  const auto params = single_param(p);
  adamw_step(params, mo, cfg);
  const std::vector<double> start{1.0, -2.0, 3.0};
  for (std::size_t i = 0; i < 3; ++i) {
    const double expect = start[i] - 0.1 * g[i] / (std::abs(g[i]) + cfg.eps);
    EXPECT_NEAR(p.values()[i], expect, 1e-15);
  }
  EXPECT_EQ(mo["p"].t, 1u);
}

TEST(AdamW, DecayAloneShrinks) {
  Tensor p = Tensor::vector({1.0, -2.0}, true);
  MomentMap mo;
  OptimConfig cfg;
  cfg.weight_decay = 0.1;
  cfg.learning_rate = 0.5;
  const auto params = single_param(p);
  adamw_step(params, mo, cfg);
  EXPECT_NEAR(p.values()[0], 0.95, 1e-15);
  EXPECT_NEAR(p.values()[1], -1.9, 1e-15);
}

TEST(AdamW, NonFiniteGradientSkipsStep) {
  Tensor p = Tensor::vector({1.0, 2.0}, true);
  p.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  MomentMap mo;
  const auto params = single_param(p);
  const StepReport r = adamw_step(params, mo, OptimConfig{});
  EXPECT_FALSE(r.applied);
  EXPECT_EQ(p.values()[0], 1.0);
  EXPECT_TRUE(mo.empty());
}

TEST(AdamW, ClipsToMaxNorm) {
  Tensor p = Tensor::vector({0.0, 0.0}, true);
  p.mutable_grad()[0] = 30.0;
  p.mutable_grad()[1] = 40.0;
  MomentMap mo;
  OptimConfig cfg;
  cfg.max_grad_norm = 1.0;
  const auto params = single_param(p);
  const StepReport r = adamw_step(params, mo, cfg);
  EXPECT_DOUBLE_EQ(r.grad_norm, 50.0);
  EXPECT_NEAR(r.clip_scale, 1.0 / (50.0 + 1e-6), 1e-18);
  EXPECT_NEAR(mo["p"].m[1], 0.1 * 40.0 * r.clip_scale, 1e-15);
}

TEST(Stages, FreezeSets) {
  const Fixture f = make_fixture();
  TrainState st = fresh(f, 1);
  EXPECT_TRUE(st.freeze_set.count("ddm.memory"));
  EXPECT_TRUE(st.freeze_set.count("cls.w"));
  EXPECT_FALSE(st.freeze_set.count("erm.memory"));
  enter_stage(st, 2);
  EXPECT_EQ(st.freeze_set, (std::set<std::string>{"erm.memory", "erm.proj_b", "erm.proj_w"}));
  EXPECT_FALSE(st.model.parameters().get("erm.memory").requires_grad());
  EXPECT_THROW(enter_stage(st, 3), ContractError);
}

TEST(Stages, WrongStageIsContractError) {
  const Fixture f = make_fixture();
  TrainState st = fresh(f, 2);
  EXPECT_THROW(train_step_stage1(st, std::span(f.nli).first(1), f.cfg), ContractError);
}

TEST(Stage1, UpdatesOnlyTrainableGroup) {
  const Fixture f = make_fixture();
  TrainState st = fresh(f, 1);
  const auto& p = st.model.parameters();
  const std::string ddm = parameter_checksum(p, params::is_discourse_read);
  const std::string heads = parameter_checksum(p, params::is_dialogue_head);
  const std::string erm = parameter_checksum(p, params::is_entailment_read);
  train_stage1(st, f.nli, f.cfg);
  EXPECT_EQ(parameter_checksum(p, params::is_discourse_read), ddm);
  EXPECT_EQ(parameter_checksum(p, params::is_dialogue_head), heads);
  EXPECT_NE(parameter_checksum(p, params::is_entailment_read), erm);
  for (const auto& [name, m] : st.moments) EXPECT_FALSE(st.freeze_set.count(name)) << name;
}

TEST(Stage1, ZeroLearningRateKeepsParameters) {
  Fixture f = make_fixture();
  f.cfg.optim.learning_rate = 0.0;
  TrainState st = fresh(f, 1);
  const std::string before = model_checksum(st.model);
  train_stage1(st, f.nli, f.cfg);
  EXPECT_EQ(model_checksum(st.model), before);
}

TEST(Stage1, LossDecreasesOnOverfitSet) {
  Fixture f = make_fixture();
  f.cfg.optim.batch_size_stage1 = 8;
  TrainState st = fresh(f, 1);
  const double first = train_step_stage1(st, f.nli, f.cfg).loss.total;
  double last = first;
  for (int i = 0; i < 20; ++i) last = train_step_stage1(st, f.nli, f.cfg).loss.total;
  EXPECT_LT(last, first);
}

TEST(Stage2, EntailmentReadStaysBitIdentical) {
  const Fixture f = make_fixture();
  TrainState st = fresh(f, 2);
  const auto& p = st.model.parameters();
  const std::string erm = parameter_checksum(p, params::is_entailment_read);
  const std::string ddm = parameter_checksum(p, params::is_discourse_read);
  train_stage2(st, f.turns, f.cfg);
  train_stage2(st, f.turns, f.cfg);
  EXPECT_EQ(parameter_checksum(p, params::is_entailment_read), erm);
  EXPECT_NE(parameter_checksum(p, params::is_discourse_read), ddm);
  EXPECT_FALSE(st.moments.count("erm.memory"));
  EXPECT_TRUE(st.moments.count("ddm.memory"));
}

TEST(Stage2, MissingCandidatesIsError) {
  Fixture f = make_fixture();
  TrainState st = fresh(f, 2);
  std::vector<TurnExample> bad(f.turns.begin(), f.turns.begin() + 2);
  bad[1].candidates.clear();
  EXPECT_THROW(train_step_stage2(st, bad, f.cfg), ContractError);
}

TEST(Stage2, AccumulationMatchesOneLargeBatch) {
  Fixture f = make_fixture();
  ASSERT_GE(f.turns.size(), 16u);
  const std::span<const TurnExample> batch(f.turns.data(), 16);
  RunConfig accum = f.cfg, whole = f.cfg;
  accum.optim.batch_size_stage2 = 2;
  accum.optim.grad_accum_steps = 8;
  whole.optim.batch_size_stage2 = 16;
  whole.optim.grad_accum_steps = 1;
  TrainState a = fresh(f, 2), b = fresh(f, 2);
  train_step_stage2(a, batch, accum);
  train_step_stage2(b, batch, whole);
  for (const NamedTensor& e : a.model.parameters().entries()) {
    const auto x = e.tensor.values();
    const auto y = b.model.parameters().get(e.name).values();
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(x[i], y[i], 1e-9) << e.name;
  }
}

TEST(Training, DeterministicAcrossRuns) {
  const Fixture f = make_fixture();
  std::vector<std::string> logs[2];
  std::string sums[2];
  for (int r = 0; r < 2; ++r) {
    TrainState st = fresh(f, 1);
    auto sink = [&](const std::string& s) { logs[r].push_back(s); };
    train_stage1(st, f.nli, f.cfg, sink);
    enter_stage(st, 2);
    train_stage2(st, f.turns, f.cfg, sink);
    sums[r] = model_checksum(st.model);
  }
  EXPECT_EQ(sums[0], sums[1]);
  EXPECT_EQ(logs[0], logs[1]);
}

TEST(Alternate, OneOuterIterationRunsEachStageOnce) {
  Fixture f = make_fixture();
  f.cfg.train.max_outer_iters = 1;
  TrainState st = fresh(f, 1);
  std::vector<std::string> lines;
  std::size_t calls = 0;
  AlternateHooks hooks;
  hooks.log = [&](const std::string& s) { lines.push_back(s); };
  hooks.on_iteration = [&](const TrainState&, std::size_t, double) { ++calls; };
  const AlternateSummary s = alternate(st, f.nli, f.turns, {}, f.cfg, hooks);
  EXPECT_EQ(s.outer_iterations, 1u);
  EXPECT_EQ(calls, 1u);
  std::size_t s1 = 0, s2 = 0;
  for (const std::string& l : lines) {
    const auto j = nlohmann::json::parse(l);
    if (!j.contains("stage")) continue;
    (j["stage"] == 1 ? s1 : s2)++;
  }
  EXPECT_EQ(s1, 2u);  // 8 pairs / batch 4
  EXPECT_EQ(s2, (f.turns.size() + 3) / 4);
  EXPECT_EQ(st.stage, 2);
}

TEST(Alternate, KeepsBestValidationState) {
  Fixture f = make_fixture();
  f.cfg.train.max_outer_iters = 4;
  f.cfg.train.patience = 1;
  f.cfg.train.min_delta = 1e9;  // nothing after the first iteration counts as improvement
  TrainState st = fresh(f, 1);
  std::string first;
  AlternateHooks hooks;
  hooks.on_iteration = [&](const TrainState& s, std::size_t outer, double) {
    if (outer == 0) first = model_checksum(s.model);
  };
  const AlternateSummary s = alternate(st, f.nli, f.turns, {}, f.cfg, hooks);
  EXPECT_TRUE(s.early_stopped);
  EXPECT_EQ(s.outer_iterations, 2u);
  EXPECT_EQ(s.best_iteration, 0u);
  EXPECT_EQ(model_checksum(st.model), first);
  EXPECT_EQ(st.best_validation, s.validation[0]);
}

TEST(Checkpoint, RoundTripThenStepIsBitIdentical) {
  const Fixture f = make_fixture();
  TrainState st = fresh(f, 1);
  train_stage1(st, f.nli, f.cfg);
  enter_stage(st, 2);
  train_step_stage2(st, std::span(f.turns).first(4), f.cfg);
  const fs::path dir = fs::temp_directory_path() / "latmem_ckpt_test" / "step-1";
  save_checkpoint(dir, st, f.cfg, f.vocab, {{"note", "x"}});
  Checkpoint c = load_checkpoint(dir);
  EXPECT_EQ(c.vocab, f.vocab);
  EXPECT_EQ(c.config.optim, f.cfg.optim);
  EXPECT_EQ(c.state.freeze_set, st.freeze_set);
  EXPECT_EQ(c.state.moments, st.moments);
  EXPECT_EQ(model_checksum(c.state.model), model_checksum(st.model));
  EXPECT_FALSE(c.state.model.parameters().get("erm.memory").requires_grad());

  train_stage2(st, f.turns, f.cfg);
  train_stage2(c.state, f.turns, c.config);
  EXPECT_EQ(model_checksum(c.state.model), model_checksum(st.model));
  EXPECT_EQ(c.state.step, st.step);
  fs::remove_all(dir.parent_path());
}

TEST(Checkpoint, ShapeMismatchIsArtifactError) {
  const Fixture f = make_fixture();
  const Model m(f.cfg.model);
  ModelConfig other = f.cfg.model;
  other.d_model = 8;
  Model n(other);
  EXPECT_THROW(load_parameters(serialize_parameters(m.parameters()), n.parameters()), ArtifactError);
  EXPECT_THROW(load_parameters("junk", n.parameters()), FormatError);
}

}  // namespace
}  // namespace latmem
