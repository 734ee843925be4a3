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

#include <random>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "latmem/config.hpp"
#include "latmem/data.hpp"

namespace latmem {
namespace {

TEST(Tokenize, LowercasesAndSplitsPunctuation) {
  EXPECT_EQ(tokenize("Hello,  World!"), (std::vector<std::string>{"hello", ",", "world", "!"}));
  EXPECT_EQ(tokenize("i'm ok."), (std::vector<std::string>{"i", "'", "m", "ok", "."}));
  EXPECT_TRUE(tokenize("   ").empty());
}

TEST(Vocab, SpecialsThenFrequencyThenLexicographic) {
  const std::vector<std::string> docs{"b a c", "a b", "a d"};
  const Vocab v = Vocab::build(docs);
  ASSERT_EQ(v.size(), 15u);
  EXPECT_EQ(v.token(0), "[PAD]");
  EXPECT_EQ(v.token(7), "[SOH]");
  EXPECT_EQ(v.token(11), "a");
  EXPECT_EQ(v.token(12), "b");
  EXPECT_EQ(v.token(13), "c");
  EXPECT_EQ(v.token(14), "d");
  EXPECT_EQ(v.id("zebra"), tok::kUnk);
}

TEST(Vocab, MinCountDropsRareWords) {
  const std::vector<std::string> docs{"a a b"};
  const Vocab v = Vocab::build(docs, 2);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_FALSE(v.contains("b"));
}

TEST(Vocab, RoundTripAndValidation) {
  const std::vector<std::string> docs{"the cat sat"};
  const Vocab v = Vocab::build(docs);
  EXPECT_EQ(Vocab::parse(v.serialize()), v);
  EXPECT_THROW(Vocab::parse("[PAD]\n[UNK]\n"), FormatError);
  EXPECT_THROW(Vocab::build(std::vector<std::string>{}), ContractError);
  EXPECT_EQ(v.decode(v.encode("The cat!")), "the cat");
  EXPECT_EQ(v.decode(v.encode("The cat!"), true), "the cat [UNK]");
}

TEST(Assemble, PremiseLayout) {
  const std::vector<std::string> docs{"cats sleep"};
  const Vocab v = Vocab::build(docs);
  const EncodedSequence s = assemble_erm_input(v.encode("cats sleep"), 50);
  EXPECT_EQ(s.ids, (std::vector<int>{tok::kZ, tok::kSop, v.id("cats"), v.id("sleep"), tok::kEop}));
  EXPECT_EQ(s.ids[0], 4);
  EXPECT_EQ(s.ids[1], 5);
  EXPECT_EQ(s.ids[4], 6);
  EXPECT_EQ(s.mask, (std::vector<std::uint8_t>(5, 1)));
  EXPECT_EQ(s.roles[2], Role::kPremise);
}

TEST(Assemble, PremiseTruncatesToMaxLen) {
  const std::vector<int> prem(100, 20);
  const EncodedSequence s = assemble_erm_input(prem, 10);
  EXPECT_EQ(s.size(), 10u);
  EXPECT_EQ(s.ids.back(), tok::kEop);
}

TEST(Assemble, DiscourseLayout) {
  const std::vector<std::string> docs{"i ski", "hi"};
  const Vocab v = Vocab::build(docs);
  const std::vector<std::string> persona{"i ski"};
  const EncodedSequence s = dialogue_context(persona, {}, "hi", v, 50);
  EXPECT_EQ(s.ids, (std::vector<int>{4, 8, v.id("i"), v.id("ski"), 9, v.id("hi")}));
}

TEST(Assemble, HistoryLayoutAndOldestTurnsDropFirst) {
  const std::vector<std::vector<int>> persona{{20, 21}};
  const std::vector<HistoryTurn> hist{{{30}, {31}}, {{32}, {33}}};
  const std::vector<int> q{40};
  const EncodedSequence full = assemble_ddm_input(persona, hist, q, 50);
  EXPECT_EQ(full.ids, (std::vector<int>{4, 8, 20, 21, 9, 30, 10, 31, 9, 32, 10, 33, 9, 40}));
  const EncodedSequence cut = assemble_ddm_input(persona, hist, q, 10);
  EXPECT_EQ(cut.ids, (std::vector<int>{4, 8, 20, 21, 9, 32, 10, 33, 9, 40}));
  const EncodedSequence tight = assemble_ddm_input(persona, hist, q, 5);
  EXPECT_EQ(tight.ids, (std::vector<int>{4, 8, 20, 9, 40}));
  for (std::size_t n = 4; n < 20; ++n) EXPECT_LE(assemble_ddm_input(persona, hist, q, n).size(), n);
}

TEST(Decoder, SequenceAndTargets) {
  const std::vector<int> words{20, 21};
  const std::vector<int> seq = make_decoder_sequence(words, 50);
  EXPECT_EQ(seq, (std::vector<int>{tok::kSoh, tok::kBos, 20, 21, tok::kEos}));
  EXPECT_EQ(decoder_targets(seq), (std::vector<int>{20, 21, tok::kEos}));
  EXPECT_EQ(make_decoder_sequence(std::vector<int>(10, 20), 6).size(), 6u);
}

TEST(Distractors, DistinctGoldIncludedDeterministic) {
  const std::vector<std::string> pool{"a", "b", "c", "d", "e", "gold", "a"};
  std::mt19937_64 r1(5), r2(5);
  const CandidateSet x = sample_distractors("gold", pool, 4, r1);
  const CandidateSet y = sample_distractors("gold", pool, 4, r2);
  ASSERT_EQ(x.candidates.size(), 5u);
  EXPECT_EQ(x.candidates[x.gold_index], "gold");
  EXPECT_EQ(std::set<std::string>(x.candidates.begin(), x.candidates.end()).size(), 5u);
  EXPECT_EQ(x.candidates, y.candidates);
  EXPECT_EQ(x.gold_index, y.gold_index);
  std::mt19937_64 r3(5);
  EXPECT_THROW(sample_distractors("gold", pool, 6, r3), ContractError);
}

TEST(Distractors, GoldPositionCoversAllSlots) {
  const std::vector<std::string> pool{"a", "b", "c"};
  std::set<std::size_t> seen;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) seen.insert(sample_distractors("g", pool, 2, rng).gold_index);
  EXPECT_EQ(seen, (std::set<std::size_t>{0, 1, 2}));
}

TEST(Batch, RightPads) {
  const std::vector<std::vector<int>> items{{1, 2, 3}, {4}};
  const Batch b = make_batch(items, 4);
  EXPECT_EQ(b.rows, 2u);
  EXPECT_EQ(b.cols, 4u);
  EXPECT_EQ(b.at(1, 0), 4);
  EXPECT_EQ(b.at(1, 1), tok::kPad);
  EXPECT_EQ(b.mask, (std::vector<std::uint8_t>{1, 1, 1, 0, 1, 0, 0, 0}));
}

TEST(Corpus, ParsesAndRoundTrips) {
  const std::string nli =
      "{\"premise\":\"a red hat\",\"hypothesis\":\"a hat\",\"label\":\"entailment\"}\n\n"
      "{\"premise\":\"x\",\"hypothesis\":\"y\",\"label\":\"neutral\"}\n";
  const auto pairs = parse_nli(nli);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(entailment_only(pairs).size(), 1u);
  EXPECT_EQ(parse_nli(to_jsonl(std::span<const NliPair>(pairs))).size(), 2u);

  const std::string dlg =
      "{\"persona\":[\"i ski .\"],\"turns\":[{\"query\":\"hi\",\"response\":\"hello\","
      "\"candidates\":[\"no\",\"yes\"]}]}\n";
  const auto sessions = parse_dialogues(dlg);
  ASSERT_EQ(sessions.size(), 1u);
  ASSERT_TRUE(sessions[0].turns[0].candidates.has_value());
  EXPECT_EQ(sessions[0].turns[0].candidates->size(), 2u);
}

TEST(Corpus, ErrorsNameTheLine) {
  try {
    parse_nli("{\"premise\":\"a\",\"hypothesis\":\"b\",\"label\":\"entailment\"}\n{\"premise\":1}\n");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("nli.jsonl:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_nli("{\"premise\":\"a\",\"hypothesis\":\"b\",\"label\":\"maybe\"}"), FormatError);
  EXPECT_THROW(parse_nli("{\"premise\":\"a\",\"hypothesis\":\"b\",\"label\":\"entailment\",\"x\":1}"),
               FormatError);
  EXPECT_THROW(parse_dialogues("{\"persona\":[],\"turns\":[]}"), FormatError);
  EXPECT_THROW(parse_dialogues("not json"), FormatError);
}

TEST(Examples, TurnExamplesWithSampledCandidates) {
  std::vector<DialogueSession> sessions;
  for (int s = 0; s < 3; ++s) {
    DialogueSession d;
    d.persona = {"i am person " + std::to_string(s) + " ."};
    d.turns.push_back({"hi", "hello " + std::to_string(s), std::nullopt});
    d.turns.push_back({"bye", "see you " + std::to_string(s), std::nullopt});
    sessions.push_back(d);
  }
  const Vocab v = Vocab::build(corpus_documents({}, sessions));
  const auto ex = build_turn_examples(sessions, v, 50, 3, CandidateSource::kFileOrSample, 11);
  ASSERT_EQ(ex.size(), 6u);
  for (const TurnExample& e : ex) {
    ASSERT_EQ(e.candidates.size(), 4u);
    EXPECT_EQ(e.candidates[e.gold_index], e.response);
    EXPECT_EQ(e.context.ids.front(), tok::kZ);
    EXPECT_EQ(e.persona.ids[1], tok::kSop);
  }
  EXPECT_EQ(ex[1].context.ids[ex[1].context.size() - 2], tok::kQry);
  const auto again = build_turn_examples(sessions, v, 50, 3, CandidateSource::kFileOrSample, 11);
  EXPECT_EQ(again[4].candidates, ex[4].candidates);
  const auto none = build_turn_examples(sessions, v, 50, 3, CandidateSource::kNone, 11);
  EXPECT_TRUE(none[0].candidates.empty());
}

TEST(Examples, EntailmentRejectsOtherLabels) {
  const std::vector<NliPair> pairs{{"a b", "a", NliLabel::kContradiction}};
  const std::vector<std::string> docs{"a b"};
  EXPECT_THROW(build_entailment_examples(pairs, Vocab::build(docs), 50), ContractError);
}

TEST(Config, ParseDefaultsAndUnknownKeys) {
  const RunConfig c = parse_run_config("{\"model\":{\"d_model\":32,\"n_heads\":4}}");
  EXPECT_EQ(c.model.d_model, 32u);
  EXPECT_EQ(c.optim.grad_accum_steps, 8u);
  EXPECT_THROW(parse_run_config("{\"model\":{\"dmodel\":32}}"), ConfigError);
  EXPECT_THROW(parse_run_config("{\"model\":{\"d_model\":\"x\"}}"), ConfigError);
  EXPECT_THROW(parse_run_config("{\"model\":{\"d_model\":30,\"n_heads\":4}}"), ConfigError);
  EXPECT_THROW(parse_run_config("{\"optim\":{\"learning_rate\":0}}"), ConfigError);
  EXPECT_THROW(parse_run_config("{\"optim\":{\"grad_accum_steps\":0}}"), ConfigError);
  EXPECT_EQ(run_config_from_json(nlohmann::json::parse(to_json(c).dump())), c);
  EXPECT_EQ(config_fingerprint(c), config_fingerprint(c));
  RunConfig d = c;
  d.optim.learning_rate = 1e-3;
  EXPECT_NE(config_fingerprint(c), config_fingerprint(d));
}

}  // namespace
}  // namespace latmem
