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

// Word-level tokenizer and vocabulary with a fixed special-token prefix.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "latmem/errors.hpp"
#include "latmem/io.hpp"

namespace latmem {

namespace tok {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kZ = 4;
inline constexpr int kSop = 5;
inline constexpr int kEop = 6;
inline constexpr int kSoh = 7;
inline constexpr int kPer = 8;
inline constexpr int kQry = 9;
inline constexpr int kRsp = 10;
inline constexpr int kNumSpecial = 11;

inline constexpr std::array<std::string_view, kNumSpecial> kSpecialNames{
    "[PAD]", "[BOS]", "[EOS]", "[UNK]", "[z]", "[SOP]",
    "[EOP]", "[SOH]", "[PER]", "[QRY]", "[RSP]"};

inline bool is_special(int id) { return id >= 0 && id < kNumSpecial; }
}  // namespace tok

// Lowercases ASCII, splits on whitespace, and emits every ASCII punctuation
// character as its own token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

inline std::string detokenize(std::span<const std::string> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

class Vocab {
 public:
  Vocab() : Vocab(std::vector<std::string>{}) {}

  // Specials, then words with frequency >= min_count ordered by frequency
  // descending and lexicographically within ties.
  static Vocab build(std::span<const std::string> documents, std::size_t min_count = 1) {
    if (documents.empty()) throw ContractError("build_vocab: empty corpus");
    std::map<std::string, std::size_t> freq;
    for (const std::string& doc : documents) {
      for (std::string& t : tokenize(doc)) ++freq[std::move(t)];
    }
    std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> words;
    for (auto& [w, c] : items) {
      if (c >= min_count) words.push_back(w);
    }
    return Vocab(std::move(words));
  }

  // `tokens` must begin with the special tokens in their fixed order.
  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < tok::kNumSpecial) {
      throw FormatError("vocab: expected at least " + std::to_string(tok::kNumSpecial) +
                        " entries, got " + std::to_string(tokens.size()));
    }
    for (int i = 0; i < tok::kNumSpecial; ++i) {
      if (tokens[static_cast<std::size_t>(i)] != tok::kSpecialNames[static_cast<std::size_t>(i)]) {
        throw FormatError("vocab: line " + std::to_string(i + 1) + " must be " +
                          std::string(tok::kSpecialNames[static_cast<std::size_t>(i)]));
      }
    }
    return Vocab(std::vector<std::string>(tokens.begin() + tok::kNumSpecial, tokens.end()));
  }

  static Vocab parse(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      lines.emplace_back(text.substr(start, end - start));
      start = end + 1;
    }
    return from_tokens(lines);
  }

  static Vocab load(const fs::path& path) { return parse(read_file(path)); }

  std::string serialize() const {
    std::string s;
    for (const std::string& t : id_to_token_) {
      s += t;
      s.push_back('\n');
    }
    return s;
  }

  void save(const fs::path& path) const { write_file_atomic(path, serialize()); }

  std::size_t size() const { return id_to_token_.size(); }

  int id(std::string_view token) const {
    const auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? tok::kUnk : it->second;
  }
  bool contains(std::string_view token) const {
    return token_to_id_.count(std::string(token)) != 0;
  }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
      throw ContractError("vocab: id " + std::to_string(id) + " out of range");
    }
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const std::string& t : tokenize(text)) ids.push_back(id(t));
    return ids;
  }

  // Special tokens are dropped unless keep_special is set.
  std::string decode(std::span<const int> ids, bool keep_special = false) const {
    std::vector<std::string> words;
    for (int i : ids) {
      if (!keep_special && tok::is_special(i)) continue;
      words.push_back(token(i));
    }
    return detokenize(words);
  }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  bool operator==(const Vocab& o) const { return id_to_token_ == o.id_to_token_; }

 private:
  explicit Vocab(std::vector<std::string> words) {
    for (std::string_view s : tok::kSpecialNames) id_to_token_.emplace_back(s);
    for (std::string& w : words) id_to_token_.push_back(std::move(w));
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
      if (!token_to_id_.emplace(id_to_token_[i], static_cast<int>(i)).second) {
        throw FormatError("vocab: duplicate token '" + id_to_token_[i] + "'");
      }
    }
  }

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace latmem
