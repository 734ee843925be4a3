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

// Corpus ingestion and model-input assembly.
//
// Encoder layouts (every sequence starts with [z] so the read heads can take
// the hidden state at position 0):
//   entailment: [z] [SOP] premise... [EOP]
//   discourse:  [z] [PER] persona... ([QRY] q [RSP] r)* [QRY] query
// Decoder layout for hypotheses and responses: [SOH] [BOS] tokens... [EOS].

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latmem/errors.hpp"
#include "latmem/io.hpp"
#include "latmem/vocab.hpp"

namespace latmem {

enum class NliLabel { kEntailment, kNeutral, kContradiction };

inline std::string to_string(NliLabel l) {
  switch (l) {
    case NliLabel::kEntailment: return "entailment";
    case NliLabel::kNeutral: return "neutral";
    case NliLabel::kContradiction: return "contradiction";
  }
  return "";
}

struct NliPair {
  std::string premise;
  std::string hypothesis;
  NliLabel label = NliLabel::kEntailment;
};

struct Turn {
  std::string query;
  std::string response;
  std::optional<std::vector<std::string>> candidates;  // distractors only
};

struct DialogueSession {
  std::vector<std::string> persona;
  std::vector<Turn> turns;
};

// Where each token of an encoder sequence came from.
enum class Role : std::uint8_t { kSpecial, kPremise, kPersona, kQuery, kResponse };

struct EncodedSequence {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;  // 1 = real token, 0 = padding
  std::vector<Role> roles;

  std::size_t size() const { return ids.size(); }

  void push(int id, Role role) {
    ids.push_back(id);
    mask.push_back(1);
    roles.push_back(role);
  }
};

// ---------------------------------------------------------------------------
// Line-delimited JSON corpora.

namespace detail {

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

inline bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

[[noreturn]] inline void schema_error(const std::string& file, std::size_t line,
                                      const std::string& what) {
  throw FormatError(file + ":" + std::to_string(line) + ": " + what);
}

inline const nlohmann::json& require_key(const nlohmann::json& obj, const char* key,
                                         const std::string& file, std::size_t line) {
  if (!obj.is_object() || !obj.contains(key)) schema_error(file, line, std::string("missing key '") + key + "'");
  return obj.at(key);
}

inline std::string require_string(const nlohmann::json& v, const std::string& what,
                                  const std::string& file, std::size_t line) {
  if (!v.is_string()) schema_error(file, line, what + " must be a string");
  return v.get<std::string>();
}

}  // namespace detail

// Parses `nli.jsonl`. Blank lines are skipped; errors carry 1-based line numbers.
inline std::vector<NliPair> parse_nli(const std::string& text, const std::string& name = "nli.jsonl") {
  std::vector<NliPair> out;
  const auto lines = detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::is_blank(lines[i])) continue;
    const std::size_t ln = i + 1;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::parse_error& e) {
      detail::schema_error(name, ln, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) detail::schema_error(name, ln, "expected an object");
    for (const auto& [k, v] : j.items()) {
      if (k != "premise" && k != "hypothesis" && k != "label") {
        detail::schema_error(name, ln, "unknown key '" + k + "'");
      }
    }
    NliPair p;
    p.premise = detail::require_string(detail::require_key(j, "premise", name, ln), "premise", name, ln);
    p.hypothesis =
        detail::require_string(detail::require_key(j, "hypothesis", name, ln), "hypothesis", name, ln);
    const std::string label =
        detail::require_string(detail::require_key(j, "label", name, ln), "label", name, ln);
    if (label == "entailment") {
      p.label = NliLabel::kEntailment;
    } else if (label == "neutral") {
      p.label = NliLabel::kNeutral;
    } else if (label == "contradiction") {
      p.label = NliLabel::kContradiction;
    } else {
      detail::schema_error(name, ln, "label must be entailment|neutral|contradiction, got '" + label + "'");
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<DialogueSession> parse_dialogues(const std::string& text,
                                                    const std::string& name = "dialogue.jsonl") {
  std::vector<DialogueSession> out;
  const auto lines = detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::is_blank(lines[i])) continue;
    const std::size_t ln = i + 1;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::parse_error& e) {
      detail::schema_error(name, ln, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) detail::schema_error(name, ln, "expected an object");
    for (const auto& [k, v] : j.items()) {
      if (k != "persona" && k != "turns") detail::schema_error(name, ln, "unknown key '" + k + "'");
    }
    DialogueSession s;
    const auto& persona = detail::require_key(j, "persona", name, ln);
    if (!persona.is_array()) detail::schema_error(name, ln, "persona must be an array of strings");
    for (const auto& p : persona) s.persona.push_back(detail::require_string(p, "persona entry", name, ln));
    const auto& turns = detail::require_key(j, "turns", name, ln);
    if (!turns.is_array() || turns.empty()) detail::schema_error(name, ln, "turns must be a non-empty array");
    for (const auto& t : turns) {
      if (!t.is_object()) detail::schema_error(name, ln, "turn must be an object");
      for (const auto& [k, v] : t.items()) {
        if (k != "query" && k != "response" && k != "candidates") {
          detail::schema_error(name, ln, "unknown turn key '" + k + "'");
        }
      }
      Turn turn;
      turn.query = detail::require_string(detail::require_key(t, "query", name, ln), "query", name, ln);
      turn.response =
          detail::require_string(detail::require_key(t, "response", name, ln), "response", name, ln);
      if (t.contains("candidates")) {
        const auto& c = t.at("candidates");
        if (!c.is_array()) detail::schema_error(name, ln, "candidates must be an array of strings");
        std::vector<std::string> cands;
        for (const auto& x : c) cands.push_back(detail::require_string(x, "candidate", name, ln));
        turn.candidates = std::move(cands);
      }
      s.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<NliPair> load_nli(const fs::path& path) {
  return parse_nli(read_file(path), path.string());
}

inline std::vector<DialogueSession> load_dialogues(const fs::path& path) {
  return parse_dialogues(read_file(path), path.string());
}

inline std::string to_jsonl(std::span<const NliPair> pairs) {
  std::string s;
  for (const NliPair& p : pairs) {
    nlohmann::ordered_json j;
    j["premise"] = p.premise;
    j["hypothesis"] = p.hypothesis;
    j["label"] = to_string(p.label);
    s += j.dump();
    s.push_back('\n');
  }
  return s;
}

inline std::string to_jsonl(std::span<const DialogueSession> sessions) {
  std::string s;
  for (const DialogueSession& d : sessions) {
    nlohmann::ordered_json j;
    j["persona"] = d.persona;
    j["turns"] = nlohmann::ordered_json::array();
    for (const Turn& t : d.turns) {
      nlohmann::ordered_json jt;
      jt["query"] = t.query;
      jt["response"] = t.response;
      if (t.candidates) jt["candidates"] = *t.candidates;
      j["turns"].push_back(std::move(jt));
    }
    s += j.dump();
    s.push_back('\n');
  }
  return s;
}

// Entailment pairs only; the entailment memory models premise -> hypothesis.
inline std::vector<NliPair> entailment_only(std::span<const NliPair> pairs) {
  std::vector<NliPair> out;
  for (const NliPair& p : pairs) {
    if (p.label == NliLabel::kEntailment) out.push_back(p);
  }
  return out;
}

// Every text that contributes to the vocabulary.
inline std::vector<std::string> corpus_documents(std::span<const NliPair> nli,
                                                 std::span<const DialogueSession> dialogues) {
  std::vector<std::string> docs;
  for (const NliPair& p : nli) {
    docs.push_back(p.premise);
    docs.push_back(p.hypothesis);
  }
  for (const DialogueSession& s : dialogues) {
    for (const std::string& p : s.persona) docs.push_back(p);
    for (const Turn& t : s.turns) {
      docs.push_back(t.query);
      docs.push_back(t.response);
      if (t.candidates) {
        for (const std::string& c : *t.candidates) docs.push_back(c);
      }
    }
  }
  return docs;
}

// ---------------------------------------------------------------------------
// Input assembly.

inline EncodedSequence assemble_erm_input(std::span<const int> premise, std::size_t max_len) {
  if (premise.empty()) throw ContractError("assemble_erm_input: empty premise");
  if (max_len < 4) throw ContractError("assemble_erm_input: max_len must be at least 4");
  const std::size_t keep = std::min(premise.size(), max_len - 3);
  EncodedSequence s;
  s.push(tok::kZ, Role::kSpecial);
  s.push(tok::kSop, Role::kSpecial);
  for (std::size_t i = 0; i < keep; ++i) s.push(premise[i], Role::kPremise);
  s.push(tok::kEop, Role::kSpecial);
  return s;
}

struct HistoryTurn {
  std::vector<int> query;
  std::vector<int> response;
};

// Over-long inputs lose whole history turns (oldest first), then persona
// tokens from the right, then, as a last resort, query tokens from the right.
inline EncodedSequence assemble_ddm_input(std::span<const std::vector<int>> persona,
                                          std::span<const HistoryTurn> history,
                                          std::span<const int> query, std::size_t max_len) {
  if (query.empty()) throw ContractError("assemble_ddm_input: empty query");
  if (max_len < 4) throw ContractError("assemble_ddm_input: max_len must be at least 4");
  std::vector<int> persona_flat;
  for (const auto& p : persona) persona_flat.insert(persona_flat.end(), p.begin(), p.end());

  std::size_t first_turn = 0;
  auto turn_len = [&](std::size_t i) { return history[i].query.size() + history[i].response.size() + 2; };
  std::size_t hist_len = 0;
  for (std::size_t i = 0; i < history.size(); ++i) hist_len += turn_len(i);
  const std::size_t fixed = 3 + query.size();  // [z] [PER] ... [QRY] query
  while (first_turn < history.size() && fixed + persona_flat.size() + hist_len > max_len) {
    hist_len -= turn_len(first_turn);
    ++first_turn;
  }
  std::size_t query_keep = query.size();
  if (fixed + persona_flat.size() > max_len) {
    const std::size_t room = max_len >= fixed ? max_len - fixed : 0;
    persona_flat.resize(std::min(persona_flat.size(), room));
    if (fixed > max_len) query_keep = max_len - 3;
  }

  EncodedSequence s;
  s.push(tok::kZ, Role::kSpecial);
  s.push(tok::kPer, Role::kSpecial);
  for (int id : persona_flat) s.push(id, Role::kPersona);
  for (std::size_t i = first_turn; i < history.size(); ++i) {
    s.push(tok::kQry, Role::kSpecial);
    for (int id : history[i].query) s.push(id, Role::kQuery);
    s.push(tok::kRsp, Role::kSpecial);
    for (int id : history[i].response) s.push(id, Role::kResponse);
  }
  s.push(tok::kQry, Role::kSpecial);
  for (std::size_t i = 0; i < query_keep; ++i) s.push(query[i], Role::kQuery);
  return s;
}

// [SOH] [BOS] tokens... [EOS], truncating tokens to fit max_len.
inline std::vector<int> make_decoder_sequence(std::span<const int> tokens, std::size_t max_len) {
  if (max_len < 3) throw ContractError("make_decoder_sequence: max_len must be at least 3");
  const std::size_t keep = std::min(tokens.size(), max_len - 3);
  std::vector<int> s{tok::kSoh, tok::kBos};
  s.insert(s.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  s.push_back(tok::kEos);
  return s;
}

// Targets for a decoder sequence: position i predicts seq[i + 1]. Positions
// predicting [BOS]'s successors through [EOS] are scored, so the first row
// (which predicts [BOS]) is skipped.
inline std::vector<int> decoder_targets(std::span<const int> seq) {
  if (seq.size() < 3) throw ContractError("decoder_targets: sequence too short");
  return std::vector<int>(seq.begin() + 2, seq.end());
}

// ---------------------------------------------------------------------------
// Distractors.

struct CandidateSet {
  std::vector<std::string> candidates;
  std::size_t gold_index = 0;
};

// Chooses t distinct pool entries different from `gold` and inserts `gold` at
// a random position among the t + 1 candidates.
template <typename Rng>
CandidateSet sample_distractors(const std::string& gold, std::span<const std::string> pool,
                                std::size_t t, Rng& rng) {
  std::set<std::string> uniq(pool.begin(), pool.end());
  uniq.erase(gold);
  std::vector<std::string> avail(uniq.begin(), uniq.end());
  if (avail.size() < t) {
    throw ContractError("sample_distractors: need " + std::to_string(t) +
                        " distinct distractors, pool has " + std::to_string(avail.size()));
  }
  for (std::size_t i = 0; i < t; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, avail.size() - 1);
    std::swap(avail[i], avail[pick(rng)]);
  }
  CandidateSet out;
  out.candidates.assign(avail.begin(), avail.begin() + static_cast<std::ptrdiff_t>(t));
  std::uniform_int_distribution<std::size_t> pos(0, t);
  out.gold_index = pos(rng);
  out.candidates.insert(out.candidates.begin() + static_cast<std::ptrdiff_t>(out.gold_index), gold);
  return out;
}

// Responses of every session except `exclude`.
inline std::vector<std::string> response_pool(std::span<const DialogueSession> sessions,
                                              std::size_t exclude) {
  std::vector<std::string> pool;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    if (i == exclude) continue;
    for (const Turn& t : sessions[i].turns) pool.push_back(t.response);
  }
  return pool;
}

// Seed for one turn so sampling depends only on (seed, session, turn).
inline std::mt19937_64 turn_rng(std::uint64_t seed, std::size_t session, std::size_t turn) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(session), static_cast<std::uint32_t>(turn)};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------
// Batching.

struct Batch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> ids;             // row-major rows x cols
  std::vector<std::uint8_t> mask;   // 1 on real tokens

  int at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
};

// Right-pads every item with [PAD] to max(pad_to, longest item).
inline Batch make_batch(std::span<const std::vector<int>> items, std::size_t pad_to = 0) {
  Batch b;
  b.rows = items.size();
  b.cols = pad_to;
  for (const auto& it : items) b.cols = std::max(b.cols, it.size());
  b.ids.assign(b.rows * b.cols, tok::kPad);
  b.mask.assign(b.rows * b.cols, 0);
  for (std::size_t r = 0; r < items.size(); ++r) {
    for (std::size_t c = 0; c < items[r].size(); ++c) {
      b.ids[r * b.cols + c] = items[r][c];
      b.mask[r * b.cols + c] = 1;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training examples.

struct EntailmentExample {
  EncodedSequence premise;
  std::vector<int> hypothesis;  // decoder sequence
};

inline std::vector<EntailmentExample> build_entailment_examples(std::span<const NliPair> pairs,
                                                                const Vocab& vocab,
                                                                std::size_t max_len) {
  std::vector<EntailmentExample> out;
  for (const NliPair& p : pairs) {
    if (p.label != NliLabel::kEntailment) {
      throw ContractError("build_entailment_examples: non-entailment pair '" + p.premise + "'");
    }
    const std::vector<int> prem = vocab.encode(p.premise);
    const std::vector<int> hyp = vocab.encode(p.hypothesis);
    out.push_back({assemble_erm_input(prem, max_len), make_decoder_sequence(hyp, max_len)});
  }
  return out;
}

struct TurnExample {
  EncodedSequence context;   // discourse layout
  EncodedSequence persona;   // persona as premise, entailment layout
  std::vector<int> response;        // decoder sequence
  std::vector<int> response_words;  // bag-of-words targets
  std::vector<std::vector<int>> candidates;  // decoder sequences; empty if none
  std::size_t gold_index = 0;
  std::size_t session = 0;
  std::size_t turn = 0;
};

enum class CandidateSource {
  kNone,          // no candidates
  kFile,          // corpus candidates only; turns without them get none
  kFileOrSample,  // first t corpus candidates, else t sampled distractors
};

inline EncodedSequence persona_premise(std::span<const std::string> persona, const Vocab& vocab,
                                       std::size_t max_len) {
  std::vector<int> ids;
  for (const std::string& p : persona) {
    const auto e = vocab.encode(p);
    ids.insert(ids.end(), e.begin(), e.end());
  }
  if (ids.empty()) ids.push_back(tok::kUnk);
  return assemble_erm_input(ids, max_len);
}

inline EncodedSequence dialogue_context(std::span<const std::string> persona,
                                        std::span<const std::pair<std::string, std::string>> history,
                                        const std::string& query, const Vocab& vocab,
                                        std::size_t max_len) {
  std::vector<std::vector<int>> per;
  for (const std::string& p : persona) per.push_back(vocab.encode(p));
  std::vector<HistoryTurn> hist;
  for (const auto& [q, r] : history) hist.push_back({vocab.encode(q), vocab.encode(r)});
  std::vector<int> q = vocab.encode(query);
  if (q.empty()) throw ContractError("dialogue_context: empty query");
  return assemble_ddm_input(per, hist, q, max_len);
}

inline std::vector<TurnExample> build_turn_examples(std::span<const DialogueSession> sessions,
                                                    const Vocab& vocab, std::size_t max_len,
                                                    std::size_t t, CandidateSource source,
                                                    std::uint64_t seed) {
  std::vector<TurnExample> out;
  for (std::size_t si = 0; si < sessions.size(); ++si) {
    const DialogueSession& s = sessions[si];
    const EncodedSequence persona = persona_premise(s.persona, vocab, max_len);
    std::vector<std::pair<std::string, std::string>> history;
    std::vector<std::string> pool;
    for (std::size_t ti = 0; ti < s.turns.size(); ++ti) {
      const Turn& turn = s.turns[ti];
      TurnExample ex;
      ex.session = si;
      ex.turn = ti;
      ex.context = dialogue_context(s.persona, history, turn.query, vocab, max_len);
      ex.persona = persona;
      const std::vector<int> words = vocab.encode(turn.response);
      if (words.empty()) throw ContractError("build_turn_examples: empty response in session " +
                                             std::to_string(si));
      ex.response = make_decoder_sequence(words, max_len);
      ex.response_words.assign(ex.response.begin() + 2, ex.response.end() - 1);

      std::optional<CandidateSet> cs;
      if (source == CandidateSource::kFile && turn.candidates) {
        auto rng = turn_rng(seed, si, ti);
        std::set<std::string> distinct(turn.candidates->begin(), turn.candidates->end());
        distinct.erase(turn.response);
        cs = sample_distractors(turn.response, *turn.candidates, distinct.size(), rng);
      } else if (source == CandidateSource::kFileOrSample) {
        auto rng = turn_rng(seed, si, ti);
        if (turn.candidates) {
          if (turn.candidates->size() < t) {
            throw ContractError("session " + std::to_string(si) + " turn " + std::to_string(ti) +
                                ": " + std::to_string(turn.candidates->size()) +
                                " candidates, need " + std::to_string(t));
          }
          std::vector<std::string> first(turn.candidates->begin(),
                                         turn.candidates->begin() + static_cast<std::ptrdiff_t>(t));
          cs = sample_distractors(turn.response, first, t, rng);
        } else {
          if (pool.empty()) pool = response_pool(sessions, si);
          cs = sample_distractors(turn.response, pool, t, rng);
        }
      }
      if (cs) {
        for (const std::string& c : cs->candidates) {
          ex.candidates.push_back(make_decoder_sequence(vocab.encode(c), max_len));
        }
        ex.gold_index = cs->gold_index;
      }
      out.push_back(std::move(ex));
      history.emplace_back(turn.query, turn.response);
    }
  }
  return out;
}

}  // namespace latmem
