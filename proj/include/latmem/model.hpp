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

// Encoder-decoder transformer with two latent memories.
//
// The backbone is a pre-norm transformer with learned positions and GELU
// feed-forward blocks; token embeddings are shared between encoder, decoder
// and the (tied) output projection. On top of it sit
//   * the entailment memory M (k x d) and its read head (W_pi, b_pi),
//   * the discourse memory N (l x d) and its read head (W_rho, b_rho),
//   * a candidate-scoring head on the decoder state at [EOS],
//   * a bag-of-words head on the summed latents.
// A read projects the encoder state at [z] (position 0) onto the slots,
// normalises with softmax and returns the expected memory row. The latents
// are added to the [SOH] embedding at decoder position 0.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "latmem/config.hpp"
#include "latmem/data.hpp"
#include "latmem/tensor.hpp"
#include "latmem/vocab.hpp"

namespace latmem {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Parameters in registration order; names are stable checkpoint keys.
class ParameterStore {
 public:
  Tensor add(std::string name, Tensor t) {
    if (index_.count(name)) throw ContractError("duplicate parameter " + name);
    t.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), t});
    return t;
  }

  const Tensor& get(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return entries_[it->second].tensor;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::span<const NamedTensor> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<NamedTensor> entries_;
  std::map<std::string, std::size_t> index_;
};

struct Linear {
  Tensor w;  // [in x out]
  Tensor b;  // [out]
  Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// Keys have no bias: a key bias shifts every score in a row equally and
// cancels in the softmax, so it would never receive gradient.
struct AttentionParams {
  Linear q, v, o;
  Tensor k;  // [d x d]
};

struct FeedForwardParams {
  Linear up, down;
  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
};

struct EncoderLayer {
  LayerNormParams ln_attn, ln_ff;
  AttentionParams attn;
  FeedForwardParams ff;
};

struct DecoderLayer {
  LayerNormParams ln_self, ln_cross, ln_ff;
  AttentionParams self_attn, cross_attn;
  FeedForwardParams ff;
};

struct LatentMemory {
  Tensor rows;    // [slots x d_model]
  Tensor proj_w;  // [d_model x slots]
  Tensor proj_b;  // [slots]
  std::size_t slots() const { return rows.rows(); }
};

struct LatentRead {
  Tensor weights;  // [1 x slots], on the probability simplex
  Tensor z;        // [1 x d_model]
};

struct EncoderOutput {
  Tensor hidden;  // [seq x d_model]
  Tensor h_z;     // [1 x d_model], hidden row 0
  std::vector<std::uint8_t> mask;
};

struct DecoderOutput {
  Tensor logits;  // [seq x vocab]
  Tensor hidden;  // [seq x d_model]
};

// Latents added to the [SOH] embedding; absent members are skipped.
struct Injection {
  std::optional<Tensor> z;
  std::optional<Tensor> z_d;
};

// softmax(h_z W + b) over the slots, then the weighted sum of memory rows.
inline LatentRead read_memory(const Tensor& h_z, const LatentMemory& mem) {
  if (h_z.rank() != 2 || h_z.rows() != 1 || h_z.cols() != mem.rows.cols()) {
    throw DimensionError("read_memory: h_z " + shape_str(h_z.shape()) + " vs memory " +
                         shape_str(mem.rows.shape()));
  }
  LatentRead r;
  r.weights = softmax(add(matmul(h_z, mem.proj_w), mem.proj_b));
  r.z = matmul(r.weights, mem.rows);
  return r;
}

// Adds the latents to decoder position 0, which must hold [SOH]. Rows >= 1
// are passed through untouched.
inline Tensor inject_latent(const Tensor& embeddings, std::span<const int> ids, const Injection& inj) {
  if (ids.empty() || ids[0] != tok::kSoh) {
    throw ContractError("inject_latent: decoder position 0 must be [SOH]");
  }
  if (!inj.z && !inj.z_d) return embeddings;
  Tensor head = slice(embeddings, 0, 0, 1);
  if (inj.z) head = add(head, *inj.z);
  if (inj.z_d) head = add(head, *inj.z_d);
  if (embeddings.rows() == 1) return head;
  return concat({head, slice(embeddings, 0, 1, embeddings.rows())}, 0);
}

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.vocab_size < tok::kNumSpecial + 1) {
      throw ConfigError("model.vocab_size must cover the special tokens plus at least one word");
    }
    build();
  }

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Deep copy with independent parameter storage.
  Model clone() const {
    Model m(cfg_);
    m.copy_from(*this);
    return m;
  }

  void copy_from(const Model& other) {
    for (const NamedTensor& e : params_.entries()) {
      const Tensor& src = other.params_.get(e.name);
      if (src.shape() != e.tensor.shape()) throw DimensionError("copy_from: shape mismatch for " + e.name);
      Tensor dst = e.tensor;
      std::copy(src.values().begin(), src.values().end(), dst.data().begin());
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  const LatentMemory& entailment_memory() const { return erm_; }
  const LatentMemory& discourse_memory() const { return ddm_; }
  const Linear& cls_head() const { return cls_; }
  const Linear& bow_head() const { return bow_; }

  EncoderOutput encode(const EncodedSequence& seq) const {
    const std::size_t n = seq.ids.size();
    if (n == 0) throw ContractError("encode: empty sequence");
    if (n > cfg_.max_len) {
      throw ContractError("encode: sequence length " + std::to_string(n) + " exceeds max_len " +
                          std::to_string(cfg_.max_len));
    }
    if (seq.mask.size() != n) throw ContractError("encode: mask length differs from sequence length");
    check_ids(seq.ids);
    Tensor x = add(embedding(tok_emb_, seq.ids), slice(enc_pos_, 0, 0, n));
    for (const EncoderLayer& layer : enc_layers_) {
      x = add(x, attention(layer.attn, layer.ln_attn(x), std::nullopt, seq.mask, false));
      x = add(x, layer.ff(layer.ln_ff(x)));
    }
    EncoderOutput out;
    out.hidden = enc_final_(x);
    out.h_z = slice(out.hidden, 0, 0, 1);
    out.mask = seq.mask;
    return out;
  }

  LatentRead read_entailment_memory(const Tensor& h_z) const { return read_memory(h_z, erm_); }
  LatentRead read_discourse_memory(const Tensor& h_z) const { return read_memory(h_z, ddm_); }

  // Token plus position embeddings for decoder ids, before injection.
  Tensor decoder_embeddings(std::span<const int> ids) const {
    if (ids.empty()) throw ContractError("decode: empty decoder input");
    if (ids.size() > cfg_.max_len) {
      throw ContractError("decode: length " + std::to_string(ids.size()) + " exceeds max_len " +
                          std::to_string(cfg_.max_len));
    }
    check_ids(ids);
    return add(embedding(tok_emb_, ids), slice(dec_pos_, 0, 0, ids.size()));
  }

  DecoderOutput decode(const EncoderOutput& enc, std::span<const int> ids,
                       const Injection& inj = {}) const {
    Tensor x = decoder_embeddings(ids);
    if (inj.z || inj.z_d) x = inject_latent(x, ids, inj);
    const std::size_t n_mem = enc.hidden.rank() == 2 ? enc.hidden.rows() : 0;
    for (const DecoderLayer& layer : dec_layers_) {
      x = add(x, attention(layer.self_attn, layer.ln_self(x), std::nullopt, {}, true));
      if (n_mem > 0) {
        x = add(x, attention(layer.cross_attn, layer.ln_cross(x), enc.hidden, enc.mask, false));
      }
      x = add(x, layer.ff(layer.ln_ff(x)));
    }
    DecoderOutput out;
    out.hidden = dec_final_(x);
    out.logits = add(matmul(out.hidden, transpose(tok_emb_)), lm_bias_);
    return out;
  }

  // Unnormalised candidate score W_h h_eos + b_h, shape [1 x 1].
  Tensor candidate_score(const Tensor& h_eos) const { return cls_(h_eos); }

  // Position-independent vocabulary logits from z + z_d, shape [1 x vocab].
  Tensor bow_logits(const Tensor& z, const Tensor& z_d) const { return bow_(add(z, z_d)); }

 private:
  void check_ids(std::span<const int> ids) const {
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
        throw ContractError("token id " + std::to_string(id) + " outside vocab of " +
                            std::to_string(cfg_.vocab_size));
      }
    }
  }

  // Multi-head attention. `memory` defaults to the query stream; key_mask
  // (1 = attend) covers memory rows; causal hides later positions.
  Tensor attention(const AttentionParams& p, const Tensor& x, const std::optional<Tensor>& memory,
                   std::span<const std::uint8_t> key_mask, bool causal) const {
    const Tensor& kv = memory ? *memory : x;
    const std::size_t nq = x.rows(), nk = kv.rows();
    const std::size_t heads = cfg_.n_heads;
    const std::size_t dh = cfg_.d_model / heads;
    const Tensor q = p.q(x), k = matmul(kv, p.k), v = p.v(kv);

    std::vector<std::uint8_t> blocked(nq * nk, 0);
    bool any_blocked = false;
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t j = 0; j < nk; ++j) {
        const bool pad = !key_mask.empty() && key_mask[j] == 0;
        const bool future = causal && j > i;
        if (pad || future) {
          blocked[i * nk + j] = 1;
          any_blocked = true;
        }
      }
    }
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
      const Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
      const Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
      Tensor scores = scale(matmul(qh, transpose(kh)), s);
      if (any_blocked) scores = masked_fill(scores, blocked, -1e30);
      outs.push_back(matmul(softmax(scores), vh));
    }
    const Tensor merged = heads == 1 ? outs[0] : concat(outs, 1);
    return p.o(merged);
  }

  void build() {
    std::mt19937_64 rng(cfg_.seed);
    std::normal_distribution<double> normal(0.0, cfg_.init_std);
    const std::size_t d = cfg_.d_model, V = cfg_.vocab_size;
    auto weight = [&](const std::string& name, std::size_t r, std::size_t c) {
      std::vector<double> v(r * c);
      for (double& x : v) x = normal(rng);
      return params_.add(name, Tensor({r, c}, std::move(v)));
    };
    auto bias = [&](const std::string& name, std::size_t n) {
      return params_.add(name, Tensor::zeros({n}));
    };
    auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
      Linear l;
      l.w = weight(name + ".w", in, out);
      l.b = bias(name + ".b", out);
      return l;
    };
    auto norm = [&](const std::string& name) {
      LayerNormParams n;
      n.gamma = params_.add(name + ".gamma", Tensor::full({d}, 1.0));
      n.beta = bias(name + ".beta", d);
      return n;
    };
    auto attn = [&](const std::string& name) {
      AttentionParams a;
      a.q = linear(name + ".q", d, d);
      a.k = weight(name + ".k.w", d, d);
      a.v = linear(name + ".v", d, d);
      a.o = linear(name + ".o", d, d);
      return a;
    };
    auto ffn = [&](const std::string& name) {
      FeedForwardParams f;
      f.up = linear(name + ".up", d, cfg_.d_ff);
      f.down = linear(name + ".down", cfg_.d_ff, d);
      return f;
    };
    auto memory = [&](const std::string& name, std::size_t slots) {
      LatentMemory m;
      m.rows = weight(name + ".memory", slots, d);
      m.proj_w = weight(name + ".proj_w", d, slots);
      m.proj_b = bias(name + ".proj_b", slots);
      return m;
    };

    tok_emb_ = weight("tok_emb", V, d);
    enc_pos_ = weight("enc.pos_emb", cfg_.max_len, d);
    dec_pos_ = weight("dec.pos_emb", cfg_.max_len, d);
    for (std::size_t i = 0; i < cfg_.n_layers_enc; ++i) {
      const std::string p = "enc.layer" + std::to_string(i);
      EncoderLayer layer;
      layer.ln_attn = norm(p + ".ln_attn");
      layer.attn = attn(p + ".attn");
      layer.ln_ff = norm(p + ".ln_ff");
      layer.ff = ffn(p + ".ff");
      enc_layers_.push_back(std::move(layer));
    }
    enc_final_ = norm("enc.final_ln");
    for (std::size_t i = 0; i < cfg_.n_layers_dec; ++i) {
      const std::string p = "dec.layer" + std::to_string(i);
      DecoderLayer layer;
      layer.ln_self = norm(p + ".ln_self");
      layer.self_attn = attn(p + ".self_attn");
      layer.ln_cross = norm(p + ".ln_cross");
      layer.cross_attn = attn(p + ".cross_attn");
      layer.ln_ff = norm(p + ".ln_ff");
      layer.ff = ffn(p + ".ff");
      dec_layers_.push_back(std::move(layer));
    }
    dec_final_ = norm("dec.final_ln");
    lm_bias_ = bias("lm_bias", V);
    erm_ = memory("erm", cfg_.k);
    ddm_ = memory("ddm", cfg_.l);
    cls_ = linear("cls", d, 1);
    bow_ = linear("bow", d, V);
  }

  ModelConfig cfg_;
  ParameterStore params_;
  Tensor tok_emb_, enc_pos_, dec_pos_, lm_bias_;
  std::vector<EncoderLayer> enc_layers_;
  std::vector<DecoderLayer> dec_layers_;
  LayerNormParams enc_final_, dec_final_;
  LatentMemory erm_, ddm_;
  Linear cls_, bow_;
};

// Parameter groups by role.
namespace params {
inline bool is_entailment_read(const std::string& name) { return name.rfind("erm.", 0) == 0; }
inline bool is_discourse_read(const std::string& name) { return name.rfind("ddm.", 0) == 0; }
inline bool is_dialogue_head(const std::string& name) {
  return name.rfind("cls.", 0) == 0 || name.rfind("bow.", 0) == 0;
}
}  // namespace params

}  // namespace latmem
