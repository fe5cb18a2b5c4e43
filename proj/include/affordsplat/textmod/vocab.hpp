#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "affordsplat/core/errors.hpp"

namespace affordsplat::textmod {

// Reserved marker inserted immediately after the affordance word in answers.
inline constexpr const char* kAffMarker = "⟨Aff⟩";

struct Vocabulary {
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kBos = 1;
  static constexpr std::int64_t kEos = 2;
  static constexpr std::int64_t kUnk = 3;
  static constexpr std::int64_t kAff = 4;

  std::map<std::string, std::int64_t> token_to_id;
  std::vector<std::string> id_to_token;

  Vocabulary() {
    for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"})
      push(t);
    push(kAffMarker);
  }

  std::int64_t push(const std::string& tok) {
    auto it = token_to_id.find(tok);
    if (it != token_to_id.end()) return it->second;
    const std::int64_t id = (std::int64_t)id_to_token.size();
    token_to_id[tok] = id;
    id_to_token.push_back(tok);
    return id;
  }

  std::int64_t size() const { return (std::int64_t)id_to_token.size(); }

  std::int64_t lookup(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? kUnk : it->second;
  }

  const std::string& token(std::int64_t id) const {
    if (id < 0 || id >= size()) throw ArgumentError("token id out of range");
    return id_to_token[(std::size_t)id];
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["tokens"] = id_to_token;
    return j;
  }

  static Vocabulary from_json(const nlohmann::ordered_json& j) {
    Vocabulary v;
    v.token_to_id.clear();
    v.id_to_token.clear();
    for (const auto& t : j.at("tokens")) v.push(t.get<std::string>());
    if (v.size() < 5 || v.id_to_token[(std::size_t)kAff] != kAffMarker)
      throw FormatError("vocabulary reserved ids corrupted");
    return v;
  }
};

struct TokenSequence {
  std::vector<std::int64_t> ids;
  std::optional<std::int64_t> aff_position;

  std::int64_t length() const { return (std::int64_t)ids.size(); }
};

namespace detail {

inline bool is_punct_token(char c) {
  return c == '.' || c == ',' || c == '?' || c == '!' || c == ';' || c == ':';
}

// Whitespace split with trailing punctuation broken out into its own token.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&]() {
    if (cur.empty()) return;
    std::string tail;
    while (!cur.empty() && is_punct_token(cur.back())) {
      tail.insert(tail.begin(), cur.back());
      cur.pop_back();
    }
    if (!cur.empty()) words.push_back(cur);
    for (char c : tail) words.push_back(std::string(1, c));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c)))
      flush();
    else
      cur.push_back(c);
  }
  flush();
  return words;
}

}  // namespace detail

// Builds a vocabulary over a corpus of strings (plus the reserved tokens).
inline Vocabulary build_vocabulary(const std::vector<std::string>& corpus) {
  Vocabulary v;
  for (const auto& text : corpus)
    for (const auto& w : detail::split_words(text)) v.push(w);
  return v;
}

// BOS + words + EOS; the literal marker maps to the reserved id and its
// position is recorded. Unknown words degrade to <unk>.
inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kBos);
  for (const auto& w : detail::split_words(text)) {
    const std::int64_t id = vocab.lookup(w);
    if (id == Vocabulary::kAff && !seq.aff_position)
      seq.aff_position = (std::int64_t)seq.ids.size();
    seq.ids.push_back(id);
  }
  seq.ids.push_back(Vocabulary::kEos);
  return seq;
}

// Inverse of tokenize up to canonical whitespace: words joined by single
// spaces, no space before punctuation.
inline std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  for (std::int64_t id : seq.ids) {
    if (id == Vocabulary::kBos || id == Vocabulary::kEos ||
        id == Vocabulary::kPad)
      continue;
    const std::string& tok = vocab.token(id);
    const bool punct = tok.size() == 1 && detail::is_punct_token(tok[0]);
    if (!out.empty() && !punct) out.push_back(' ');
    out += tok;
  }
  return out;
}

// Canonical whitespace form used by round-trip checks.
inline std::string canonical_text(const std::string& text) {
  std::string out;
  for (const auto& w : detail::split_words(text)) {
    const bool punct = w.size() == 1 && detail::is_punct_token(w[0]);
    if (!out.empty() && !punct) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace affordsplat::textmod
