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
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "latmem/model.hpp"
#include "latmem/objectives.hpp"

namespace latmem {
namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers_enc = 1;
  c.n_layers_dec = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 20;
  c.k = 3;
  c.l = 2;
  c.max_len = 16;
  c.seed = 42;
  return c;
}

EncodedSequence premise_of(std::vector<int> words) { return assemble_erm_input(words, 16); }

LatentMemory fixed_memory(std::vector<double> bias, double diag) {
  const std::size_t n = bias.size();
  LatentMemory m;
  m.rows = scale(Tensor::identity(n), diag);
  m.proj_w = Tensor::zeros({n, n});
  m.proj_b = Tensor({n}, std::move(bias));
  return m;
}

TEST(ReadMemory, ThirdAndTwoThirds) {
  const LatentRead r = read_memory(Tensor::zeros({1, 2}), fixed_memory({0.0, std::log(2.0)}, 3.0));
  EXPECT_NEAR(r.weights.at(0, 0), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.z.at(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(r.z.at(0, 1), 2.0, 1e-12);
}

TEST(ReadMemory, QuarterAndThreeQuarters) {
  const LatentRead r = read_memory(Tensor::zeros({1, 2}), fixed_memory({0.0, std::log(3.0)}, 4.0));
  EXPECT_NEAR(r.weights.at(0, 1), 0.75, 1e-12);
  EXPECT_NEAR(r.z.at(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(r.z.at(0, 1), 3.0, 1e-12);
}

TEST(ReadMemory, SingleSlotReturnsTheRow) {
  LatentMemory m;
  m.rows = Tensor::matrix({{1.0}});
  m.proj_w = Tensor::matrix({{5.0}});
  m.proj_b = Tensor::vector({-2.0});
  const LatentRead r = read_memory(Tensor::matrix({{0.7}}), m);
  EXPECT_EQ(r.weights.at(0, 0), 1.0);
  EXPECT_EQ(r.z.at(0, 0), 1.0);
}

TEST(ReadMemory, WeightsStayOnSimplex) {
  const Model model(small_config());
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> h(16);
    for (double& x : h) x = n(rng);
    const Tensor hz({1, 16}, std::move(h));
    for (const LatentRead& r : {model.read_entailment_memory(hz), model.read_discourse_memory(hz)}) {
      double s = 0.0;
      for (double w : r.weights.values()) {
        ASSERT_GE(w, 0.0);
        s += w;
      }
      ASSERT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(ReadMemory, WrongWidthThrows) {
  const Model model(small_config());
  EXPECT_THROW(model.read_entailment_memory(Tensor::zeros({1, 8})), DimensionError);
}

TEST(Model, SameSeedSameParameters) {
  const Model a(small_config()), b(small_config());
  ASSERT_EQ(a.parameters().entries().size(), b.parameters().entries().size());
  for (const NamedTensor& e : a.parameters().entries()) {
    const auto& other = b.parameters().get(e.name).values();
    ASSERT_TRUE(std::equal(e.tensor.values().begin(), e.tensor.values().end(), other.begin())) << e.name;
  }
  ModelConfig c = small_config();
  c.seed = 43;
  const Model d(c);
  EXPECT_NE(d.parameters().get("tok_emb").values()[0], a.parameters().get("tok_emb").values()[0]);
}

TEST(Model, ParameterNamesAndShapes) {
  const Model m(small_config());
  EXPECT_EQ(m.parameters().get("erm.memory").shape(), (Shape{3, 16}));
  EXPECT_EQ(m.parameters().get("ddm.memory").shape(), (Shape{2, 16}));
  EXPECT_EQ(m.parameters().get("cls.w").shape(), (Shape{16, 1}));
  EXPECT_EQ(m.parameters().get("bow.w").shape(), (Shape{16, 20}));
  EXPECT_TRUE(m.parameters().contains("dec.layer0.cross_attn.q.w"));
  EXPECT_TRUE(params::is_entailment_read("erm.proj_b"));
  EXPECT_TRUE(params::is_dialogue_head("bow.b"));
  EXPECT_FALSE(params::is_dialogue_head("tok_emb"));
}

TEST(Model, VocabTooSmallIsConfigError) {
  ModelConfig c = small_config();
  c.vocab_size = 11;
  EXPECT_THROW(Model{c}, ConfigError);
}

TEST(Model, CloneIsIndependent) {
  const Model a(small_config());
  Model b = a.clone();
  Tensor w = b.parameters().get("tok_emb");
  w.data()[0] += 1.0;
  EXPECT_NE(a.parameters().get("tok_emb").values()[0], w.values()[0]);
}

TEST(Encode, DeterministicAndShaped) {
  const Model m(small_config());
  const EncodedSequence s = premise_of({12, 13, 14});
  const EncoderOutput a = m.encode(s), b = m.encode(s);
  EXPECT_EQ(a.hidden.shape(), (Shape{6, 16}));
  EXPECT_EQ(a.h_z.shape(), (Shape{1, 16}));
  EXPECT_EQ(a.hidden.values(), b.hidden.values());
}

TEST(Encode, PaddingDoesNotChangeRealRows) {
  const Model m(small_config());
  const EncodedSequence s = premise_of({12, 13});
  EncodedSequence padded = s;
  for (int i = 0; i < 3; ++i) {
    padded.ids.push_back(tok::kPad);
    padded.mask.push_back(0);
    padded.roles.push_back(Role::kSpecial);
  }
  const EncoderOutput a = m.encode(s), b = m.encode(padded);
  for (std::size_t r = 0; r < s.size(); ++r) {
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(a.hidden.at(r, c), b.hidden.at(r, c), 1e-12);
  }
}

TEST(Encode, TooLongOrBadIdsThrow) {
  const Model m(small_config());
  EncodedSequence s;
  for (int i = 0; i < 17; ++i) s.push(12, Role::kPremise);
  EXPECT_THROW(m.encode(s), ContractError);
  EncodedSequence bad;
  bad.push(25, Role::kPremise);
  EXPECT_THROW(m.encode(bad), ContractError);
}

TEST(Inject, OnlyPositionZeroChanges) {
  const Model m(small_config());
  const std::vector<int> ids{tok::kSoh, tok::kBos, 12, tok::kEos};
  const Tensor e = m.decoder_embeddings(ids);
  const Tensor z = Tensor::full({1, 16}, 0.5);
  const Tensor zd = Tensor::full({1, 16}, -0.25);
  const Tensor out = inject_latent(e, ids, {z, zd});
  for (std::size_t c = 0; c < 16; ++c) {
    EXPECT_NEAR(out.at(0, c), e.at(0, c) + 0.25, 1e-15);
    for (std::size_t r = 1; r < 4; ++r) EXPECT_EQ(out.at(r, c), e.at(r, c));
  }
  const std::vector<int> no_soh{tok::kBos, 12};
  EXPECT_THROW(inject_latent(m.decoder_embeddings(no_soh), no_soh, {z, std::nullopt}), ContractError);
}

TEST(Decode, ShapesAndCausality) {
  const Model m(small_config());
  const EncoderOutput enc = m.encode(premise_of({12, 13}));
  const std::vector<int> a{tok::kSoh, tok::kBos, 12, 15, tok::kEos};
  std::vector<int> b = a;
  b[3] = 17;
  const DecoderOutput oa = m.decode(enc, a), ob = m.decode(enc, b);
  EXPECT_EQ(oa.logits.shape(), (Shape{5, 20}));
  EXPECT_EQ(oa.hidden.shape(), (Shape{5, 16}));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 20; ++c) EXPECT_EQ(oa.logits.at(r, c), ob.logits.at(r, c));
  }
  double diff = 0.0;
  for (std::size_t c = 0; c < 20; ++c) diff += std::abs(oa.logits.at(3, c) - ob.logits.at(3, c));
  EXPECT_GT(diff, 0.0);
}

TEST(Decode, LatentChangesEveryPosition) {
  const Model m(small_config());
  const EncoderOutput enc = m.encode(premise_of({12}));
  const std::vector<int> ids{tok::kSoh, tok::kBos, 12, tok::kEos};
  // A constant shift would be removed by layer norm, so use a varying latent.
  std::vector<double> zv(16);
  for (std::size_t i = 0; i < 16; ++i) zv[i] = (i % 2 == 0) ? 1.0 : -0.5 * static_cast<double>(i);
  const Tensor z({1, 16}, std::move(zv));
  const DecoderOutput plain = m.decode(enc, ids), injected = m.decode(enc, ids, {z, std::nullopt});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    double diff = 0.0;
    for (std::size_t c = 0; c < 20; ++c) diff += std::abs(plain.logits.at(r, c) - injected.logits.at(r, c));
    EXPECT_GT(diff, 1e-9) << "row " << r;
  }
}

TEST(CandidateScore, LinearHead) {
  Model m(small_config());
  Tensor w = m.parameters().get("cls.w");
  Tensor b = m.parameters().get("cls.b");
  std::fill(w.data().begin(), w.data().end(), 0.0);
  w.data()[0] = 2.0;
  w.data()[1] = -1.0;
  b.data()[0] = 0.5;
  std::vector<double> h(16, 0.0);
  h[0] = 1.5;
  h[1] = 4.0;
  EXPECT_DOUBLE_EQ(m.candidate_score(Tensor({1, 16}, h)).item(), 2.0 * 1.5 - 4.0 + 0.5);
}

TEST(Objectives, EntailmentGradientReachesMemory) {
  const Model m(small_config());
  EntailmentExample ex{premise_of({12, 13, 14}), make_decoder_sequence(std::vector<int>{12, 14}, 16)};
  Tensor loss = stage1_example_loss(m, ex);
  backward(loss);
  double g = 0.0;
  for (double x : m.parameters().get("erm.memory").grad()) g += std::abs(x);
  EXPECT_GT(g, 0.0);
  for (double x : m.parameters().get("ddm.memory").grad()) EXPECT_EQ(x, 0.0);
}

}  // namespace
}  // namespace latmem
