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

// Checkpoint directories hold model.bin, optimizer.bin, state.json,
// config.json, vocab.txt and metrics.json. Doubles are stored as raw
// little-endian bytes, so a save/load round trip is bit-exact.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <functional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latmem/config.hpp"
#include "latmem/io.hpp"
#include "latmem/model.hpp"
#include "latmem/training.hpp"
#include "latmem/vocab.hpp"

namespace latmem {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

namespace detail {

inline constexpr std::uint32_t kFormatVersion = 1;

class ByteWriter {
 public:
  template <typename T>
  void pod(const T& v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void doubles(std::span<const double> v) {
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string name) : buf_(std::move(bytes)), name_(std::move(name)) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(std::span<double> out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), buf_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }
  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::string_view(buf_).substr(pos_, magic.size()) != magic) {
      throw FormatError(name_ + ": bad magic");
    }
    pos_ += magic.size();
    if (pod<std::uint32_t>() != kFormatVersion) throw FormatError(name_ + ": unsupported version");
  }
  void expect_end() const {
    if (pos_ != buf_.size()) throw FormatError(name_ + ": trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError(name_ + ": truncated");
  }
  std::string buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline std::string double_bits(double v) { return hex64(std::bit_cast<std::uint64_t>(v)); }

inline double double_from_bits(const std::string& hex) {
  if (hex.size() != 16) throw FormatError("state.json: bad double encoding '" + hex + "'");
  return std::bit_cast<double>(static_cast<std::uint64_t>(std::stoull(hex, nullptr, 16)));
}

}  // namespace detail

inline std::string serialize_parameters(const ParameterStore& params) {
  detail::ByteWriter w;
  w.pod(std::array<char, 4>{'L', 'M', 'P', 'M'});
  w.pod(detail::kFormatVersion);
  w.pod(static_cast<std::uint64_t>(params.entries().size()));
  for (const NamedTensor& e : params.entries()) {
    w.str(e.name);
    w.pod(static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) w.pod(static_cast<std::uint64_t>(d));
    w.doubles(e.tensor.values());
  }
  return w.bytes();
}

// Overwrites every parameter of `params` from `bytes`. Names and shapes must
// match one to one.
inline void load_parameters(const std::string& bytes, ParameterStore& params,
                            const std::string& name = "model.bin") {
  detail::ByteReader r(bytes, name);
  r.expect_magic("LMPM");
  const auto count = r.pod<std::uint64_t>();
  if (count != params.entries().size()) {
    throw ArtifactError(name + ": " + std::to_string(count) + " tensors, model has " +
                        std::to_string(params.entries().size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string pname = r.str();
    if (!params.contains(pname)) throw ArtifactError(name + ": unknown parameter " + pname);
    Tensor t = params.get(pname);
    const auto rank = r.pod<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.pod<std::uint64_t>());
    if (shape != t.shape()) {
      throw ArtifactError(name + ": " + pname + " stored as " + shape_str(shape) + ", model expects " +
                          shape_str(t.shape()));
    }
    r.doubles(t.data());
  }
  r.expect_end();
}

inline std::string serialize_moments(const MomentMap& moments) {
  detail::ByteWriter w;
  w.pod(std::array<char, 4>{'L', 'M', 'O', 'P'});
  w.pod(detail::kFormatVersion);
  w.pod(static_cast<std::uint64_t>(moments.size()));
  for (const auto& [name, m] : moments) {
    w.str(name);
    w.pod(m.t);
    w.pod(static_cast<std::uint64_t>(m.m.size()));
    w.doubles(m.m);
    w.doubles(m.v);
  }
  return w.bytes();
}

inline MomentMap parse_moments(const std::string& bytes, const std::string& name = "optimizer.bin") {
  detail::ByteReader r(bytes, name);
  r.expect_magic("LMOP");
  MomentMap out;
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string pname = r.str();
    Moments m;
    m.t = r.pod<std::uint64_t>();
    const auto n = r.pod<std::uint64_t>();
    m.m.resize(n);
    m.v.resize(n);
    r.doubles(m.m);
    r.doubles(m.v);
    out.emplace(pname, std::move(m));
  }
  r.expect_end();
  return out;
}

// Order-sensitive FNV-1a over the raw bytes of the named parameters.
inline std::string parameter_checksum(const ParameterStore& params,
                                      const std::function<bool(const std::string&)>& select) {
  std::uint64_t h = fnv1a("");
  for (const NamedTensor& e : params.entries()) {
    if (!select(e.name)) continue;
    h = fnv1a(e.name, h);
    const auto v = e.tensor.values();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double)), h);
  }
  return hex64(h);
}

inline std::string model_checksum(const Model& m) {
  return parameter_checksum(m.parameters(), [](const std::string&) { return true; });
}

struct Checkpoint {
  RunConfig config;
  Vocab vocab;
  TrainState state;
  nlohmann::json metrics;
};

inline nlohmann::ordered_json state_json(const TrainState& st) {
  nlohmann::ordered_json j;
  j["stage"] = st.stage;
  j["step"] = st.step;
  j["epoch"] = st.epoch;
  std::ostringstream rng;
  rng << st.rng;
  j["rng"] = rng.str();
  j["best_validation_bits"] = detail::double_bits(st.best_validation);
  j["freeze_set"] = st.freeze_set;
  return j;
}

// Writes a complete checkpoint to `dir`. Files are assembled in a sibling
// staging directory which then replaces `dir`.
inline void save_checkpoint(const fs::path& dir, const TrainState& st, const RunConfig& cfg,
                            const Vocab& vocab, const nlohmann::json& metrics = nlohmann::json::object()) {
  fs::path staging = dir;
  staging += ".partial";
  std::error_code ec;
  fs::remove_all(staging, ec);
  RunConfig stored = cfg;
  stored.model = st.model.config();
  write_file_atomic(staging / "model.bin", serialize_parameters(st.model.parameters()));
  write_file_atomic(staging / "optimizer.bin", serialize_moments(st.moments));
  write_file_atomic(staging / "state.json", state_json(st).dump(2) + "\n");
  write_file_atomic(staging / "config.json", to_json(stored).dump(2) + "\n");
  write_file_atomic(staging / "vocab.txt", vocab.serialize());
  write_file_atomic(staging / "metrics.json", metrics.dump(2) + "\n");
  fs::remove_all(dir, ec);
  fs::rename(staging, dir, ec);
  if (ec) throw IoError("cannot move checkpoint into " + dir.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir.string());
  nlohmann::json cj, sj, mj;
  try {
    cj = nlohmann::json::parse(read_file(dir / "config.json"));
    sj = nlohmann::json::parse(read_file(dir / "state.json"));
    mj = nlohmann::json::parse(read_file(dir / "metrics.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
  RunConfig cfg = run_config_from_json(cj);
  Vocab vocab = Vocab::load(dir / "vocab.txt");
  if (vocab.size() != cfg.model.vocab_size) {
    throw ArtifactError(dir.string() + ": vocab.txt has " + std::to_string(vocab.size()) +
                        " entries, config says " + std::to_string(cfg.model.vocab_size));
  }
  TrainState st(Model(cfg.model), 0);
  load_parameters(read_file(dir / "model.bin"), st.model.parameters());
  st.moments = parse_moments(read_file(dir / "optimizer.bin"));
  try {
    st.stage = sj.at("stage").get<int>();
    st.step = sj.at("step").get<std::uint64_t>();
    st.epoch = sj.at("epoch").get<std::uint64_t>();
    std::istringstream rng(sj.at("rng").get<std::string>());
    rng >> st.rng;
    if (!rng) throw FormatError("state.json: bad rng state");
    st.best_validation = detail::double_from_bits(sj.at("best_validation_bits").get<std::string>());
    st.freeze_set = sj.at("freeze_set").get<std::set<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/state.json: " + e.what());
  }
  st.apply_freeze();
  return {std::move(cfg), std::move(vocab), std::move(st), std::move(mj)};
}

}  // namespace latmem
