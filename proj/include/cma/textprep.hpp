#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cma/error.hpp"

namespace cma {

/// Letter-trigram code space: alphabet {#, a-z, 0-9} in base 37.
inline constexpr std::uint32_t kAlphabetSize = 37;
inline constexpr std::uint32_t kTrigramDim = kAlphabetSize * kAlphabetSize * kAlphabetSize;  // 50653
/// Texts longer than this are truncated before encoding.
inline constexpr std::size_t kMaxTokens = 64;

using Tokens = std::vector<std::string>;

struct SparseEntry {
  std::uint32_t index;
  std::uint32_t count;
  friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

/// Sparse count vector, entries sorted by index, counts >= 1.
using SparseVector = std::vector<SparseEntry>;
using TriLetterVector = SparseVector;

/// One slot per token; slot t concatenates the trigram vectors of the n-word
/// window centred at t, the i-th window word offset by i * kTrigramDim.
struct WindowedSequence {
  std::size_t window_n = 1;
  std::vector<SparseVector> slots;
};

/// Lowercases, maps every byte outside [a-z0-9] to a space, collapses runs of
/// whitespace and trims.
inline std::string normalize(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (unsigned char c : raw) {
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    const bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
    if (!keep) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

/// Splits an already normalized string on single spaces.
inline Tokens split_tokens(std::string_view normalized) {
  Tokens out;
  std::size_t i = 0;
  while (i < normalized.size()) {
    std::size_t j = normalized.find(' ', i);
    if (j == std::string_view::npos) j = normalized.size();
    if (j > i) out.emplace_back(normalized.substr(i, j - i));
    i = j + 1;
  }
  return out;
}

/// normalize + split + truncate to kMaxTokens.
inline Tokens prepare(std::string_view raw) {
  Tokens t = split_tokens(normalize(raw));
  if (t.size() > kMaxTokens) t.resize(kMaxTokens);
  return t;
}

inline std::string join_tokens(const Tokens& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

inline std::uint32_t letter_code(char c) {
  if (c == '#') return 0;
  if (c >= 'a' && c <= 'z') return static_cast<std::uint32_t>(c - 'a' + 1);
  if (c >= '0' && c <= '9') return static_cast<std::uint32_t>(c - '0' + 27);
  throw EncodingError(std::string("character '") + c + "' outside [a-z0-9]; normalize first");
}

inline TriLetterVector tri_letters(std::string_view word) {
  if (word.empty()) throw EncodingError("empty word");
  std::vector<std::uint32_t> codes;
  codes.reserve(word.size() + 2);
  codes.push_back(0);
  for (char c : word) {
    if (c == '#') throw EncodingError("boundary marker inside word");
    codes.push_back(letter_code(c));
  }
  codes.push_back(0);

  std::vector<std::uint32_t> idx;
  idx.reserve(word.size());
  for (std::size_t i = 0; i + 2 < codes.size(); ++i)
    idx.push_back(codes[i] * kAlphabetSize * kAlphabetSize + codes[i + 1] * kAlphabetSize + codes[i + 2]);
  std::sort(idx.begin(), idx.end());

  TriLetterVector out;
  for (auto v : idx) {
    if (!out.empty() && out.back().index == v)
      ++out.back().count;
    else
      out.push_back({v, 1});
  }
  return out;
}

inline WindowedSequence window(const Tokens& tokens, std::size_t n) {
  if (n == 0 || n % 2 == 0) throw ConfigError("window size must be odd and >= 1");
  WindowedSequence seq;
  seq.window_n = n;
  std::vector<TriLetterVector> words;
  words.reserve(tokens.size());
  for (const auto& t : tokens) words.push_back(tri_letters(t));

  const auto half = static_cast<std::ptrdiff_t>(n / 2);
  const auto len = static_cast<std::ptrdiff_t>(tokens.size());
  seq.slots.resize(tokens.size());
  for (std::ptrdiff_t t = 0; t < len; ++t) {
    SparseVector& slot = seq.slots[static_cast<std::size_t>(t)];
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
      const std::ptrdiff_t pos = t - half + i;
      if (pos < 0 || pos >= len) continue;
      const auto offset = static_cast<std::uint32_t>(i) * kTrigramDim;
      for (const auto& e : words[static_cast<std::size_t>(pos)]) slot.push_back({e.index + offset, e.count});
    }
  }
  return seq;
}

/// Sum of counts; equals the word length for a tri-letter vector.
inline std::uint32_t total_count(const SparseVector& v) {
  std::uint32_t s = 0;
  for (const auto& e : v) s += e.count;
  return s;
}

}  // namespace cma
