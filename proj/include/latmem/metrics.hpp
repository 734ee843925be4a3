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

// Automatic dialogue metrics and the evaluation report.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latmem/config.hpp"
#include "latmem/data.hpp"
#include "latmem/generation.hpp"
#include "latmem/model.hpp"

namespace latmem {

struct RankedTurn {
  std::size_t gold = 0;
  std::size_t best = 0;
};

inline double hits_at_1(std::span<const RankedTurn> ranked) {
  if (ranked.empty()) throw ContractError("hits_at_1: no ranked turns");
  std::size_t hit = 0;
  for (const RankedTurn& r : ranked) hit += r.best == r.gold;
  return static_cast<double>(hit) / static_cast<double>(ranked.size());
}

inline double perplexity_from_nll(double total_nll, std::size_t tokens) {
  if (tokens == 0) throw ContractError("perplexity: zero tokens");
  return std::exp(total_nll / static_cast<double>(tokens));
}

// Summed teacher-forced NLL of the gold response and its token count
// (words plus [EOS]).
struct ResponseNll {
  double total = 0.0;
  std::size_t tokens = 0;
};

inline ResponseNll response_nll(const Model& model, const TurnExample& ex) {
  NoGradGuard guard;
  const DialogueLatents lat = read_latents(model, ex.context, ex.persona);
  const DecoderOutput out = model.decode(lat.context, ex.response, lat.injection());
  const std::vector<int> targets = decoder_targets(ex.response);
  const double mean = response_lm_loss(target_logits(out.logits, ex.response), targets).item();
  return {mean * static_cast<double>(targets.size()), targets.size()};
}

inline double perplexity(const Model& model, std::span<const TurnExample> examples) {
  ResponseNll sum;
  for (const TurnExample& ex : examples) {
    const ResponseNll r = response_nll(model, ex);
    sum.total += r.total;
    sum.tokens += r.tokens;
  }
  return perplexity_from_nll(sum.total, sum.tokens);
}

// Multiset word overlap F1; 0 when either side is empty.
inline double word_f1(std::string_view prediction, std::string_view gold) {
  const auto p = tokenize(prediction), g = tokenize(gold);
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, std::size_t> counts;
  for (const auto& w : g) ++counts[w];
  std::size_t overlap = 0;
  for (const auto& w : p) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

namespace detail {

using Ngram = std::vector<std::string>;

inline std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<Ngram, std::size_t> c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++c[Ngram(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return c;
}

}  // namespace detail

// Distinct n-grams over total n-grams across all responses.
inline double dist_n(std::span<const std::string> responses, std::size_t n) {
  if (n < 1) throw ContractError("dist_n: n must be >= 1");
  std::set<detail::Ngram> distinct;
  std::size_t total = 0;
  for (const std::string& r : responses) {
    for (const auto& [g, c] : detail::ngram_counts(tokenize(r), n)) {
      distinct.insert(g);
      total += c;
    }
  }
  return total ? static_cast<double>(distinct.size()) / static_cast<double>(total) : 0.0;
}

inline constexpr const char* kBleuSmoothing = "add-one on numerator and denominator for n >= 2";

// Corpus BLEU-1..max_n: clipped n-gram precisions pooled over the corpus,
// geometric mean, brevity penalty exp(1 - r/c) when c <= r.
inline std::vector<double> corpus_bleu(std::span<const std::string> predictions,
                                       std::span<const std::string> references, std::size_t max_n = 4) {
  if (predictions.empty()) throw ContractError("corpus_bleu: empty corpus");
  if (predictions.size() != references.size()) {
    throw ContractError("corpus_bleu: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(references.size()) + " references");
  }
  std::vector<double> match(max_n + 1, 0.0), total(max_n + 1, 0.0);
  double c = 0.0, r = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto p = tokenize(predictions[i]), g = tokenize(references[i]);
    c += static_cast<double>(p.size());
    r += static_cast<double>(g.size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto pc = detail::ngram_counts(p, n), gc = detail::ngram_counts(g, n);
      for (const auto& [gram, cnt] : pc) {
        total[n] += static_cast<double>(cnt);
        const auto it = gc.find(gram);
        if (it != gc.end()) match[n] += static_cast<double>(std::min(cnt, it->second));
      }
    }
  }
  const double bp = c == 0.0 ? 0.0 : (c > r ? 1.0 : std::exp(1.0 - r / c));
  std::vector<double> out;
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const double prec = n == 1 ? (total[1] > 0.0 ? match[1] / total[1] : 0.0)
                               : (match[n] + 1.0) / (total[n] + 1.0);
    if (prec <= 0.0) zero = true;
    if (!zero) log_sum += std::log(prec);
    out.push_back(zero ? 0.0 : bp * std::exp(log_sum / static_cast<double>(n)));
  }
  return out;
}

struct EvalReport {
  std::optional<double> hits_at_1;
  double ppl = 0.0;
  double f1 = 0.0;
  double dist1 = 0.0;
  double dist2 = 0.0;
  std::vector<double> bleu;
  std::size_t n_examples = 0;
  std::string config_fingerprint;
  std::string checkpoint;
  std::vector<std::string> warnings;
};

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  if (r.hits_at_1) j["hits_at_1"] = *r.hits_at_1;
  j["ppl"] = r.ppl;
  j["f1"] = r.f1;
  j["dist1"] = r.dist1;
  j["dist2"] = r.dist2;
  j["bleu"] = r.bleu;
  j["bleu_smoothing"] = kBleuSmoothing;
  j["n_examples"] = r.n_examples;
  j["config_fingerprint"] = r.config_fingerprint;
  j["checkpoint"] = r.checkpoint;
  return j;
}

struct EvalOutputs {
  EvalReport report;
  std::vector<std::string> predictions;
  std::vector<std::string> references;
};

// Generates a response for every turn and scores the set. Hits@1 is reported
// only when every turn carries corpus candidates.
inline EvalOutputs evaluate_sessions(const Model& model, const Vocab& vocab,
                                     std::span<const DialogueSession> sessions, const RunConfig& cfg) {
  const std::size_t max_len = model.config().max_len;
  const std::vector<TurnExample> examples =
      build_turn_examples(sessions, vocab, max_len, cfg.train.num_distractors, CandidateSource::kFile,
                          cfg.model.seed);
  if (examples.empty()) throw ContractError("evaluate: no turns");
  NoGradGuard guard;
  EvalOutputs o;
  std::vector<RankedTurn> ranked;
  bool all_candidates = true;
  std::size_t k = 0;
  double f1 = 0.0;
  for (const DialogueSession& s : sessions) {
    DialogueInput in;
    in.persona = s.persona;
    for (const Turn& t : s.turns) {
      const TurnExample& ex = examples[k++];
      in.query = t.query;
      const GenerationResult g = generate_response(model, vocab, in, cfg.generation);
      o.predictions.push_back(g.text);
      o.references.push_back(vocab.decode(vocab.encode(t.response)));
      f1 += word_f1(o.predictions.back(), t.response);
      if (ex.candidates.size() >= 2) {
        std::vector<std::vector<int>> words;
        for (const auto& c : ex.candidates) words.push_back(sequence_words(c));
        const DialogueLatents lat = read_latents(model, ex.context, ex.persona);
        ranked.push_back({ex.gold_index, rank_candidates(model, lat, words, cfg.generation.ranking).best_index});
      } else {
        all_candidates = false;
      }
      in.history.emplace_back(t.query, t.response);
    }
  }
  EvalReport& r = o.report;
  r.n_examples = examples.size();
  if (all_candidates) {
    r.hits_at_1 = hits_at_1(ranked);
  } else {
    r.warnings.push_back("some turns have no candidates; hits_at_1 omitted");
  }
  r.ppl = perplexity(model, examples);
  r.f1 = f1 / static_cast<double>(examples.size());
  r.dist1 = dist_n(o.predictions, 1);
  r.dist2 = dist_n(o.predictions, 2);
  r.bleu = corpus_bleu(o.predictions, o.references);
  return o;
}

}  // namespace latmem
