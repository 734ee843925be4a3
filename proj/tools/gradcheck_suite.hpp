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

// Finite-difference check of every training loss on a tiny random model.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latmem/gradcheck.hpp"
#include "latmem/objectives.hpp"
#include "synth.hpp"

namespace latmem {

struct ComponentCheck {
  std::string component;
  GradCheckResult result;
  std::string worst_parameter;
  bool passed = false;
};

inline ModelConfig gradcheck_model_config(std::size_t vocab_size, std::uint64_t seed) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers_enc = 2;
  c.n_layers_dec = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.k = 4;
  c.l = 4;
  c.max_len = 32;
  c.vocab_size = vocab_size;
  c.seed = seed;
  c.init_std = 0.2;
  return c;
}

// Checks L_ERM, L_DDM, L_BOW, L_LM, L_CLS and their weighted stage-2 sum
// against central differences over every model parameter.
inline std::vector<ComponentCheck> run_gradient_suite(std::uint64_t seed, double tolerance = 1e-4,
                                                      double eps = 1e-5) {
  const auto pairs = synth::nli(1, seed);
  const auto sessions = synth::dialogues(3, seed, 2, 2);
  const Vocab vocab = Vocab::build(corpus_documents(pairs, sessions));
  const Model model(gradcheck_model_config(vocab.size(), seed));
  const std::size_t max_len = model.config().max_len;
  const EntailmentExample nli = build_entailment_examples(pairs, vocab, max_len).front();
  const TurnExample turn =
      build_turn_examples(sessions, vocab, max_len, 2, CandidateSource::kFileOrSample, seed).at(1);

  std::vector<Tensor> all;
  std::vector<std::string> names;
  for (const NamedTensor& e : model.parameters().entries()) {
    all.push_back(e.tensor);
    names.push_back(e.name);
  }
  const Tensor& m_rows = model.entailment_memory().rows;
  const Tensor& n_rows = model.discourse_memory().rows;

  struct Component {
    std::string name;
    std::function<Tensor()> f;
  };
  const std::vector<Component> components{
      {"l_erm", [&] { return stage1_example_loss(model, nli); }},
      {"l_ddm", [&] { return orthogonality_loss(m_rows, n_rows); }},
      {"l_bow", [&] {
         const DialogueLatents lat = read_latents(model, turn.context, turn.persona);
         return bow_loss(model.bow_logits(lat.entailment.z, lat.discourse.z), turn.response_words);
       }},
      {"l_lm", [&] {
         const DialogueLatents lat = read_latents(model, turn.context, turn.persona);
         const DecoderOutput out = model.decode(lat.context, turn.response, lat.injection());
         return response_lm_loss(target_logits(out.logits, turn.response), decoder_targets(turn.response));
       }},
      {"l_cls", [&] {
         const DialogueLatents lat = read_latents(model, turn.context, turn.persona);
         std::vector<Tensor> scores;
         for (const auto& c : turn.candidates) {
           scores.push_back(model.candidate_score(final_hidden(model.decode(lat.context, c, lat.injection()))));
         }
         return cls_loss(concat(scores, 1), turn.gold_index);
       }},
      {"total", [&] {
         const Stage2ExampleLosses l = stage2_example_losses(model, turn);
         return stage2_total({orthogonality_loss(m_rows, n_rows), l.l_bow, l.l_lm, l.l_cls}).first;
       }},
  };
  std::vector<ComponentCheck> out;
  for (const Component& c : components) {
    ComponentCheck r;
    r.component = c.name;
    r.result = finite_diff_check(c.f, all, eps);
    r.worst_parameter = names[r.result.worst_param];
    r.passed = r.result.max_rel_error < tolerance;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace latmem
