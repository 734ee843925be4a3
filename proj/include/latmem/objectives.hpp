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

// Per-example forward passes for both training stages.

#pragma once

#include <cstddef>
#include <vector>

#include "latmem/data.hpp"
#include "latmem/losses.hpp"
#include "latmem/model.hpp"

namespace latmem {

// Stage 1: encode the premise, read the entailment memory, inject z and
// score the hypothesis.
inline Tensor stage1_example_loss(const Model& model, const EntailmentExample& ex) {
  const EncoderOutput enc = model.encode(ex.premise);
  const LatentRead read = model.read_entailment_memory(enc.h_z);
  const DecoderOutput out = model.decode(enc, ex.hypothesis, {read.z, std::nullopt});
  return erm_lm_loss(target_logits(out.logits, ex.hypothesis), decoder_targets(ex.hypothesis));
}

// Both latent reads for one dialogue turn. The decoder attends over the
// discourse-layout encoding; the persona is encoded separately in premise
// layout for the entailment read.
struct DialogueLatents {
  EncoderOutput context;
  LatentRead entailment;
  LatentRead discourse;

  Injection injection() const { return {entailment.z, discourse.z}; }
};

inline DialogueLatents read_latents(const Model& model, const EncodedSequence& context,
                                    const EncodedSequence& persona) {
  DialogueLatents d;
  d.context = model.encode(context);
  d.discourse = model.read_discourse_memory(d.context.h_z);
  const EncoderOutput per = model.encode(persona);
  d.entailment = model.read_entailment_memory(per.h_z);
  return d;
}

// Decoder state at the final ([EOS]) position of a teacher-forced sequence.
inline Tensor final_hidden(const DecoderOutput& out) {
  const std::size_t n = out.hidden.rows();
  return slice(out.hidden, 0, n - 1, n);
}

struct Stage2ExampleLosses {
  Tensor l_lm;
  Tensor l_bow;
  Tensor l_cls;  // zero constant when the turn has no candidates
};

inline Stage2ExampleLosses stage2_example_losses(const Model& model, const TurnExample& ex) {
  const DialogueLatents lat = read_latents(model, ex.context, ex.persona);
  const Injection inj = lat.injection();
  const DecoderOutput gold = model.decode(lat.context, ex.response, inj);

  Stage2ExampleLosses r;
  r.l_lm = response_lm_loss(target_logits(gold.logits, ex.response), decoder_targets(ex.response));
  r.l_bow = bow_loss(model.bow_logits(lat.entailment.z, lat.discourse.z), ex.response_words);
  if (ex.candidates.empty()) {
    r.l_cls = Tensor::scalar(0.0);
    return r;
  }
  std::vector<Tensor> scores;
  scores.reserve(ex.candidates.size());
  for (std::size_t i = 0; i < ex.candidates.size(); ++i) {
    if (i == ex.gold_index && ex.candidates[i] == ex.response) {
      scores.push_back(model.candidate_score(final_hidden(gold)));
    } else {
      const DecoderOutput c = model.decode(lat.context, ex.candidates[i], inj);
      scores.push_back(model.candidate_score(final_hidden(c)));
    }
  }
  r.l_cls = cls_loss(concat(scores, 1), ex.gold_index);
  return r;
}

}  // namespace latmem
