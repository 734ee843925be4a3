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

// Seeded synthetic corpora: modifier-deletion entailment pairs and dialogues
// whose gold responses are fixed by the persona and the query.

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "latmem/data.hpp"

namespace latmem::synth {

inline constexpr std::array<std::string_view, 16> kNames{
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi",
    "ivan", "judy", "mallory", "nina", "oscar", "peggy", "rupert", "sybil"};
inline constexpr std::array<std::string_view, 8> kCities{
    "paris", "rome", "oslo", "lima", "cairo", "tokyo", "dublin", "quito"};
inline constexpr std::array<std::string_view, 8> kFoods{
    "pizza", "sushi", "tacos", "soup", "pasta", "curry", "salad", "bread"};
inline constexpr std::array<std::string_view, 8> kJobs{
    "teacher", "nurse", "pilot", "chef", "farmer", "singer", "lawyer", "baker"};
inline constexpr std::array<std::string_view, 6> kVerbs{"has", "owns", "sees", "wants", "finds", "paints"};
inline constexpr std::array<std::string_view, 8> kAdjectives{
    "red", "big", "old", "small", "green", "shiny", "soft", "new"};
inline constexpr std::array<std::string_view, 8> kNouns{
    "hat", "dog", "car", "book", "lamp", "boat", "chair", "kite"};

template <std::size_t N>
std::string pick(const std::array<std::string_view, N>& a, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, N - 1);
  return std::string(a[d(rng)]);
}

// "x <verb> a <adj> <noun> ." entails "x <verb> a <noun> ."
inline std::vector<NliPair> nli(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<NliPair> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    const std::string who = pick(kNames, rng), verb = pick(kVerbs, rng);
    const std::string adj = pick(kAdjectives, rng), noun = pick(kNouns, rng);
    out.push_back({who + " " + verb + " a " + adj + " " + noun + " .", who + " " + verb + " a " + noun + " .",
                   NliLabel::kEntailment});
  }
  return out;
}

struct Slot {
  std::string_view query;
  std::string_view persona_prefix;
};

inline constexpr std::array<Slot, 4> kSlots{{
    {"what is your name ?", "my name is"},
    {"where do you live ?", "i live in"},
    {"what do you like to eat ?", "i like"},
    {"what is your job ?", "my job is"},
}};

// Every session has the four persona sentences in shuffled order and
// `turns` of the four questions; the gold reply repeats the matching persona
// sentence. Each turn lists `distractors` responses drawn from other sessions.
inline std::vector<DialogueSession> dialogues(std::size_t size, std::uint64_t seed,
                                              std::size_t turns = 3, std::size_t distractors = 4) {
  if (turns < 2 || turns > kSlots.size()) throw ContractError("synth: turns must be in [2, 4]");
  std::mt19937_64 rng(seed);
  std::vector<DialogueSession> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    const std::array<std::string, 4> facts{
        "my name is " + std::string(kNames[i % kNames.size()]) + " .",
        "i live in " + pick(kCities, rng) + " .",
        "i like " + pick(kFoods, rng) + " .",
        "my job is " + pick(kJobs, rng) + " .",
    };
    DialogueSession s;
    s.persona.assign(facts.begin(), facts.end());
    std::shuffle(s.persona.begin(), s.persona.end(), rng);
    std::array<std::size_t, 4> order{0, 1, 2, 3};
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t t = 0; t < turns; ++t) {
      s.turns.push_back({std::string(kSlots[order[t]].query), facts[order[t]], std::nullopt});
    }
    out.push_back(std::move(s));
  }
  if (distractors > 0) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::vector<std::string> pool = response_pool(out, i);
      for (Turn& t : out[i].turns) {
        CandidateSet cs = sample_distractors(t.response, pool, distractors, rng);
        cs.candidates.erase(cs.candidates.begin() + static_cast<std::ptrdiff_t>(cs.gold_index));
        t.candidates = std::move(cs.candidates);
      }
    }
  }
  return out;
}

}  // namespace latmem::synth
