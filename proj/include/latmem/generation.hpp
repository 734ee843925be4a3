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

// Inference: both latent reads, greedy and beam decoding, and candidate
// ranking. Decoding re-runs the decoder over the whole prefix each step.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "latmem/config.hpp"
#include "latmem/data.hpp"
#include "latmem/model.hpp"
#include "latmem/objectives.hpp"

namespace latmem {

// Hard cap on generated tokens, [EOS] included.
inline constexpr std::size_t kMaxGeneratedTokens = 50;

struct DialogueInput {
  std::vector<std::string> persona;
  std::vector<std::pair<std::string, std::string>> history;  // (query, response)
  std::string query;
};

struct BeamHypothesis {
  std::vector<int> tokens;  // generated ids, ending in [EOS] when finished
  double logprob = 0.0;
  bool finished = false;
};

struct GenerationResult {
  BeamHypothesis best;
  double score = 0.0;  // logprob / length^alpha
  std::string text;    // filled by generate_response
  std::vector<double> pi;
  std::vector<double> rho;
};

inline double length_normalized(const BeamHypothesis& h, double alpha) {
  if (h.tokens.empty()) return h.logprob;
  return h.logprob / std::pow(static_cast<double>(h.tokens.size()), alpha);
}

inline std::size_t generation_cap(const ModelConfig& m, std::size_t max_new_tokens) {
  const std::size_t room = m.max_len >= 3 ? m.max_len - 2 : 1;
  return std::max<std::size_t>(1, std::min({max_new_tokens, kMaxGeneratedTokens, room}));
}

// Encodes the dialogue context and persona and reads both memories.
inline DialogueLatents prepare_latents(const Model& model, const Vocab& vocab, const DialogueInput& in) {
  const std::size_t max_len = model.config().max_len;
  const EncodedSequence context = dialogue_context(in.persona, in.history, in.query, vocab, max_len);
  const EncodedSequence persona = persona_premise(in.persona, vocab, max_len);
  NoGradGuard guard;
  return read_latents(model, context, persona);
}

namespace detail {

// Log-probabilities of the next token after [SOH] [BOS] prefix..., with
// special tokens other than [EOS] masked to -inf.
inline std::vector<double> next_token_logprobs(const Model& model, const DialogueLatents& lat,
                                               std::span<const int> prefix) {
  std::vector<int> ids{tok::kSoh, tok::kBos};
  ids.insert(ids.end(), prefix.begin(), prefix.end());
  const DecoderOutput out = model.decode(lat.context, ids, lat.injection());
  const std::size_t v = out.logits.cols(), last = ids.size() - 1;
  std::vector<double> row(v);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < v; ++j) {
    const bool allowed = j == static_cast<std::size_t>(tok::kEos) || !tok::is_special(static_cast<int>(j));
    row[j] = allowed ? out.logits.at(last, j) : -std::numeric_limits<double>::infinity();
    mx = std::max(mx, row[j]);
  }
  double z = 0.0;
  for (double x : row) z += std::exp(x - mx);
  const double lz = mx + std::log(z);
  for (double& x : row) x -= lz;
  return row;
}

}  // namespace detail

// Argmax decoding; ties go to the lower token id.
inline BeamHypothesis greedy_decode(const Model& model, const DialogueLatents& lat,
                                    std::size_t max_new_tokens) {
  NoGradGuard guard;
  const std::size_t cap = generation_cap(model.config(), max_new_tokens);
  BeamHypothesis h;
  while (h.tokens.size() < cap) {
    const std::vector<double> lp = detail::next_token_logprobs(model, lat, h.tokens);
    const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.tokens.push_back(best);
    h.logprob += lp[static_cast<std::size_t>(best)];
    if (best == tok::kEos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

// Beam search keeping the beam_size highest cumulative log-probability
// expansions per step. The result maximises logprob / length^alpha over the
// finished hypotheses and the greedy hypothesis, which guarantees a score at
// least that of beam size 1. With no finished hypothesis the best unfinished
// one is returned and flagged by `finished == false`.
inline GenerationResult beam_search(const Model& model, const DialogueLatents& lat, std::size_t beam_size,
                                    std::size_t max_new_tokens, double alpha) {
  if (beam_size < 1) throw ContractError("beam_search: beam_size must be >= 1");
  NoGradGuard guard;
  const std::size_t cap = generation_cap(model.config(), max_new_tokens);
  std::vector<BeamHypothesis> live{BeamHypothesis{}};
  std::vector<BeamHypothesis> done;
  for (std::size_t step = 0; step < cap && !live.empty(); ++step) {
    std::vector<BeamHypothesis> expansions;
    for (const BeamHypothesis& h : live) {
      const std::vector<double> lp = detail::next_token_logprobs(model, lat, h.tokens);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (!std::isfinite(lp[v])) continue;
        BeamHypothesis e = h;
        e.tokens.push_back(static_cast<int>(v));
        e.logprob += lp[v];
        e.finished = static_cast<int>(v) == tok::kEos;
        expansions.push_back(std::move(e));
      }
    }
    std::stable_sort(expansions.begin(), expansions.end(),
                     [](const BeamHypothesis& a, const BeamHypothesis& b) { return a.logprob > b.logprob; });
    live.clear();
    for (std::size_t i = 0; i < std::min(beam_size, expansions.size()); ++i) {
      (expansions[i].finished ? done : live).push_back(std::move(expansions[i]));
    }
  }
  std::vector<BeamHypothesis> pool = done;
  if (pool.empty()) pool = live;
  // Beam size 1 already is the greedy search.
  if (beam_size > 1) pool.push_back(greedy_decode(model, lat, max_new_tokens));

  GenerationResult r;
  r.best = pool.front();
  r.score = length_normalized(r.best, alpha);
  for (std::size_t i = 1; i < pool.size(); ++i) {
    const double s = length_normalized(pool[i], alpha);
    if (s > r.score) {
      r.score = s;
      r.best = pool[i];
    }
  }
  return r;
}

// Generated word ids with the trailing [EOS] removed.
inline std::vector<int> response_words(const BeamHypothesis& h) {
  std::vector<int> w = h.tokens;
  if (!w.empty() && w.back() == tok::kEos) w.pop_back();
  return w;
}

inline GenerationResult generate_response(const Model& model, const Vocab& vocab, const DialogueInput& in,
                                          const GenerationConfig& cfg) {
  const DialogueLatents lat = prepare_latents(model, vocab, in);
  GenerationResult r = beam_search(model, lat, cfg.beam_size, cfg.max_new_tokens, cfg.length_alpha);
  r.text = vocab.decode(response_words(r.best));
  const auto pi = lat.entailment.weights.values();
  const auto rho = lat.discourse.weights.values();
  r.pi.assign(pi.begin(), pi.end());
  r.rho.assign(rho.begin(), rho.end());
  return r;
}

struct RankResult {
  std::vector<double> scores;
  std::size_t best_index = 0;
};

// Scores each candidate (word ids) independently: the classifier head on the
// final decoder state, or the mean token log-likelihood. Empty candidates
// score -inf; ties go to the lower index.
inline RankResult rank_candidates(const Model& model, const DialogueLatents& lat,
                                  std::span<const std::vector<int>> candidates,
                                  RankingMode mode = RankingMode::kClassifier) {
  if (candidates.size() < 2) throw ContractError("rank_candidates: need at least 2 candidates");
  NoGradGuard guard;
  RankResult r;
  for (const std::vector<int>& words : candidates) {
    if (words.empty()) {
      r.scores.push_back(-std::numeric_limits<double>::infinity());
      continue;
    }
    const std::vector<int> seq = make_decoder_sequence(words, model.config().max_len);
    const DecoderOutput out = model.decode(lat.context, seq, lat.injection());
    if (mode == RankingMode::kClassifier) {
      r.scores.push_back(model.candidate_score(final_hidden(out)).item());
    } else {
      r.scores.push_back(-response_lm_loss(target_logits(out.logits, seq), decoder_targets(seq)).item());
    }
  }
  for (std::size_t i = 1; i < r.scores.size(); ++i) {
    if (r.scores[i] > r.scores[r.best_index]) r.best_index = i;
  }
  return r;
}

// Word ids of a decoder sequence [SOH] [BOS] w... [EOS].
inline std::vector<int> sequence_words(std::span<const int> seq) {
  if (seq.size() < 3) throw ContractError("sequence_words: sequence too short");
  return std::vector<int>(seq.begin() + 2, seq.end() - 1);
}

}  // namespace latmem
