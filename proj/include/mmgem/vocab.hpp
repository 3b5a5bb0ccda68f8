/*
 * Copyright (c) 2026 The mmgem Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgem/error.hpp"

namespace mmgem {

using TokenId = std::size_t;

inline constexpr std::size_t kNumSoftPrompts = 64;
inline constexpr std::size_t kDefaultMaxTextLen = 50;
inline constexpr std::size_t kLongTextLen = 200;

// Scene vocabulary shared by the corpus generator, the tokenizer and the
// caption grammar checker.
inline const std::array<std::string, 4> kColors = {"red", "green", "blue", "yellow"};
inline const std::array<std::string, 3> kShapes = {"circle", "square", "triangle"};
inline const std::array<std::string, 5> kBackgrounds = {"black", "gray", "brown", "purple", "white"};
inline const std::array<std::string, 4> kQuadrantNames = {"top left", "top right", "bottom left",
                                                          "bottom right"};

/// Word-level vocabulary. Reserved ids occupy the low end of the id space:
/// PAD, BOS, EOS, UNK, [EMB], [CAP], then [CAP_1] .. [CAP_64].
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kEmb = 4;
  static constexpr TokenId kCap = 5;
  static constexpr TokenId kFirstSoftPrompt = 6;
  static constexpr TokenId kFirstWord = kFirstSoftPrompt + kNumSoftPrompts;

  /// The fixed vocabulary of the synthetic scene grammar.
  static Vocabulary standard() {
    std::vector<std::string> words = {"a", "and", ".", "photo", "picture", "of", "there", "is",
                                      "in", "the", "corner", "image", "on", "background", "with",
                                      "small", "large", "shapes", "shape", "one", "two", "three",
                                      "four", "top", "bottom", "left", "right", "this", "shows"};
    for (const auto& c : kColors) words.push_back(c);
    for (const auto& s : kShapes) words.push_back(s);
    for (const auto& b : kBackgrounds)
      if (std::find(words.begin(), words.end(), b) == words.end()) words.push_back(b);
    return Vocabulary(words);
  }

  explicit Vocabulary(const std::vector<std::string>& words) {
    tokens_ = reserved_tokens();
    for (const auto& w : words) {
      if (w.empty() || w != lowercase(w))
        throw FormatError("vocabulary word must be non-empty lowercase: '" + w + "'");
      if (word_to_id_.count(w)) throw FormatError("duplicate vocabulary word: " + w);
      word_to_id_.emplace(w, tokens_.size());
      tokens_.push_back(w);
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  static bool is_reserved(TokenId id) { return id != kUnk && id < kFirstWord; }
  static TokenId soft_prompt_id(std::size_t i) { return kFirstSoftPrompt + i; }

  std::optional<TokenId> find(const std::string& word) const {
    auto it = word_to_id_.find(word);
    if (it == word_to_id_.end()) return std::nullopt;
    return it->second;
  }

  /// Lowercase whitespace split; unknown words map to UNK; at most max_len ids.
  std::vector<TokenId> tokenize(const std::string& text, std::size_t max_len) const {
    std::vector<TokenId> ids;
    std::istringstream is(lowercase(text));
    std::string w;
    while (ids.size() < max_len && is >> w) {
      auto it = word_to_id_.find(w);
      ids.push_back(it == word_to_id_.end() ? kUnk : it->second);
    }
    return ids;
  }

  /// Space-joined tokens; stops at EOS, skips PAD and BOS.
  std::string detokenize(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id == kEos) break;
      if (id == kPad || id == kBos) continue;
      if (!out.empty()) out += ' ';
      out += tokens_.at(id);
    }
    return out;
  }

  nlohmann::json to_json() const { return nlohmann::json(tokens_); }

  static Vocabulary from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw FormatError("vocabulary: expected a JSON array of strings");
    const auto reserved = reserved_tokens();
    if (j.size() < reserved.size()) throw FormatError("vocabulary: missing reserved tokens");
    for (std::size_t i = 0; i < reserved.size(); ++i)
      if (j[i] != reserved[i])
        throw FormatError("vocabulary: reserved token " + std::to_string(i) + " is not " +
                          reserved[i]);
    std::vector<std::string> words;
    for (std::size_t i = reserved.size(); i < j.size(); ++i) words.push_back(j[i].get<std::string>());
    return Vocabulary(words);
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write vocabulary " + path);
    os << to_json().dump() << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot read vocabulary " + path);
    try {
      return from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("vocabulary " + path + ": " + e.what());
    }
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

  static std::string lowercase(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }

 private:
  static std::vector<std::string> reserved_tokens() {
    std::vector<std::string> r = {"<pad>", "<bos>", "<eos>", "<unk>", "[EMB]", "[CAP]"};
    for (std::size_t i = 1; i <= kNumSoftPrompts; ++i) r.push_back("[CAP_" + std::to_string(i) + "]");
    return r;
  }

  std::vector<std::string> tokens_;
  std::map<std::string, TokenId> word_to_id_;
};

/// One "a <color> <shape>" phrase of a scene caption.
struct ShapePhrase {
  std::string color;
  std::string shape;
};

/// Parses the short caption grammar: phrase ("and" phrase)*, phrase = "a" color shape.
/// Returns nullopt for anything outside the grammar.
inline std::optional<std::vector<ShapePhrase>> parse_scene_caption(const std::string& caption) {
  std::istringstream is(caption);
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  std::vector<ShapePhrase> out;
  std::size_t i = 0;
  auto in = [](const auto& arr, const std::string& w) {
    return std::find(arr.begin(), arr.end(), w) != arr.end();
  };
  while (true) {
    if (i + 3 > words.size() || words[i] != "a" || !in(kColors, words[i + 1]) ||
        !in(kShapes, words[i + 2]))
      return std::nullopt;
    out.push_back({words[i + 1], words[i + 2]});
    i += 3;
    if (i == words.size()) break;
    if (words[i] != "and") return std::nullopt;
    ++i;
  }
  if (out.size() > 4) return std::nullopt;
  return out;
}

}  // namespace mmgem
