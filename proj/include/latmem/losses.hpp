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

// Training objectives. LM and bag-of-words losses are token means; the
// candidate loss is the ordinary cross-entropy against the one-hot gold.

#pragma once

#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latmem/config.hpp"
#include "latmem/tensor.hpp"
#include "latmem/vocab.hpp"

namespace latmem {

// Mean over targets of -log softmax(logits[t])[targets[t]].
inline Tensor token_nll(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.rows() != targets.size()) {
    throw DimensionError("token_nll: logits " + shape_str(logits.shape()) + " for " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t m = logits.rows(), v = logits.cols();
  std::vector<double> pick(m * v, 0.0);
  std::size_t count = 0;
  for (std::size_t t = 0; t < m; ++t) {
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= v) {
      throw ContractError("token_nll: target id " + std::to_string(targets[t]) + " out of range");
    }
    pick[t * v + static_cast<std::size_t>(targets[t])] = 1.0;
    ++count;
  }
  if (count == 0) throw ContractError("token_nll: no target tokens");
  const Tensor selected = mul(log_softmax(logits), Tensor({m, v}, std::move(pick)));
  return scale(sum(selected), -1.0 / static_cast<double>(count));
}

// Premise-to-hypothesis LM loss on teacher-forced logits, one row per
// hypothesis target.
inline Tensor erm_lm_loss(const Tensor& logits, std::span<const int> hypothesis_ids) {
  return token_nll(logits, hypothesis_ids);
}

inline Tensor response_lm_loss(const Tensor& logits, std::span<const int> response_ids) {
  return token_nll(logits, response_ids);
}

// Decoder rows that predict [BOS]'s successors through [EOS], for a decoder
// sequence [SOH] [BOS] w... [EOS] run through the decoder as input.
inline Tensor target_logits(const Tensor& decoder_logits, std::span<const int> seq) {
  if (seq.size() < 3 || decoder_logits.rows() != seq.size()) {
    throw DimensionError("target_logits: decoder logits " + shape_str(decoder_logits.shape()) +
                         " for sequence of " + std::to_string(seq.size()));
  }
  return slice(decoder_logits, 0, 1, seq.size() - 1);
}

inline constexpr double kNormFloor = 1e-12;

// Sum over all (i, j) of the squared cosine between M_i and N_j. Rows whose
// L2 norm is below 1e-12 have their norm guarded by +1e-12 instead of
// raising.
inline Tensor orthogonality_loss(const Tensor& m, const Tensor& n) {
  if (m.rank() != 2 || n.rank() != 2 || m.cols() != n.cols()) {
    throw DimensionError("orthogonality_loss: " + shape_str(m.shape()) + " vs " + shape_str(n.shape()));
  }
  // Squared norms come from the same product routine as the cross terms so
  // that identical rows give a cosine of exactly one.
  auto squared_norms = [](const Tensor& x) {
    const std::size_t r = x.rows();
    const Tensor diag = sum(mul(matmul(x, transpose(x)), Tensor::identity(r)), 1);  // [r x 1]
    std::vector<double> guard(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      const double sq = diag.values()[i];
      if (sq < kNormFloor * kNormFloor) {
        const double norm = std::sqrt(std::max(sq, 0.0));
        guard[i] = (norm + kNormFloor) * (norm + kNormFloor) - sq;
      }
    }
    return add(diag, Tensor({r, 1}, std::move(guard)));
  };
  const Tensor cross = matmul(m, transpose(n));                              // [k x l]
  const Tensor denom = matmul(squared_norms(m), transpose(squared_norms(n)));  // [k x l]
  return sum(div(mul(cross, cross), denom));
}

// Bag-of-words loss: mean over response words of -log softmax(f)(w), with f
// the position-independent vocabulary logits ([1 x V]).
inline Tensor bow_loss(const Tensor& logits, std::span<const int> response_ids) {
  if (logits.rank() != 2 || logits.rows() != 1) {
    throw DimensionError("bow_loss: logits must be [1 x V], got " + shape_str(logits.shape()));
  }
  const std::size_t v = logits.cols();
  std::vector<double> counts(v, 0.0);
  std::size_t total = 0;
  for (int id : response_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw ContractError("bow_loss: token id " + std::to_string(id) + " out of range");
    }
    counts[static_cast<std::size_t>(id)] += 1.0;
    ++total;
  }
  if (total == 0) throw ContractError("bow_loss: empty response");
  const Tensor weighted = mul(log_softmax(logits), Tensor({1, v}, std::move(counts)));
  return scale(sum(weighted), -1.0 / static_cast<double>(total));
}

// -log softmax(candidate_logits)[gold]; logits shaped [1 x (t+1)].
inline Tensor cls_loss(const Tensor& candidate_logits, std::size_t gold_index) {
  if (candidate_logits.rank() != 2 || candidate_logits.rows() != 1) {
    throw DimensionError("cls_loss: logits must be [1 x C], got " + shape_str(candidate_logits.shape()));
  }
  const std::size_t c = candidate_logits.cols();
  if (gold_index >= c) {
    throw ContractError("cls_loss: gold index " + std::to_string(gold_index) + " with " +
                        std::to_string(c) + " candidates");
  }
  std::vector<double> onehot(c, 0.0);
  onehot[gold_index] = 1.0;
  return scale(sum(mul(log_softmax(candidate_logits), Tensor({1, c}, std::move(onehot)))), -1.0);
}

struct LossBreakdown {
  double l_ddm = 0.0;
  double l_bow = 0.0;
  double l_lm = 0.0;
  double l_cls = 0.0;
  double total = 0.0;
};

struct Stage2Components {
  Tensor l_ddm;
  Tensor l_bow;
  Tensor l_lm;
  Tensor l_cls;
};

// Weighted sum (unit weights by default) and its breakdown.
inline std::pair<Tensor, LossBreakdown> stage2_total(const Stage2Components& c,
                                                     const LossWeights& w = {}) {
  const Tensor total = add(add(add(scale(c.l_ddm, w.ddm), scale(c.l_bow, w.bow)), scale(c.l_lm, w.lm)),
                           scale(c.l_cls, w.cls));
  LossBreakdown b;
  b.l_ddm = c.l_ddm.item();
  b.l_bow = c.l_bow.item();
  b.l_lm = c.l_lm.item();
  b.l_cls = c.l_cls.item();
  b.total = total.item();
  return {total, b};
}

// One machine-readable log line per optimisation step.
inline std::string loss_log_line(std::size_t step, const LossBreakdown& b) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["l_ddm"] = b.l_ddm;
  j["l_bow"] = b.l_bow;
  j["l_lm"] = b.l_lm;
  j["l_cls"] = b.l_cls;
  j["total"] = b.total;
  return j.dump();
}

}  // namespace latmem
