#include "cma/textprep.hpp"

#include <gtest/gtest.h>

#include "cma/rng.hpp"

namespace cma {
namespace {

TEST(Normalize, StripsPunctuationAndCase) {
  EXPECT_EQ(normalize("Card-Printing,  Adelaide!!"), "card printing adelaide");
  EXPECT_EQ(normalize("ORAL   B brush"), "oral b brush");
  EXPECT_EQ(normalize(""), "");
  EXPECT_EQ(normalize("  \t--  "), "");
  EXPECT_EQ(normalize("caf\xc3\xa9 42"), "caf 42");
}

TEST(Normalize, IdempotentOnRandomInput) {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    const int len = rng.between(0, 40);
    for (int j = 0; j < len; ++j) s.push_back(static_cast<char>(rng.between(1, 255)));
    const auto once = normalize(s);
    EXPECT_EQ(normalize(once), once);
    for (char c : once) EXPECT_TRUE((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == ' ');
    EXPECT_EQ(once.find("  "), std::string::npos);
  }
}

TEST(TriLetters, BaseThirtySevenCodes) {
  auto v = tri_letters("cat");
  ASSERT_EQ(v.size(), 3u);
  // #ca = 0*1369 + 3*37 + 1, at# = 1*1369 + 20*37, cat = 3*1369 + 37 + 20
  EXPECT_EQ(v[0], (SparseEntry{112, 1}));
  EXPECT_EQ(v[1], (SparseEntry{2109, 1}));
  EXPECT_EQ(v[2], (SparseEntry{4164, 1}));

  auto a = tri_letters("a");
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0], (SparseEntry{37, 1}));

  EXPECT_EQ(tri_letters("z9")[0].index, 0u * 1369 + 26 * 37 + 36);
}

TEST(TriLetters, Multiplicity) {
  auto v = tri_letters("aaaa");
  EXPECT_EQ(total_count(v), 4u);
  const std::uint32_t aaa = 1 * 1369 + 1 * 37 + 1;
  bool found = false;
  for (const auto& e : v)
    if (e.index == aaa) {
      EXPECT_EQ(e.count, 2u);
      found = true;
    }
  EXPECT_TRUE(found);
}

TEST(TriLetters, RejectsOutsideAlphabet) {
  EXPECT_THROW(tri_letters("Cat"), EncodingError);
  EXPECT_THROW(tri_letters("a-b"), EncodingError);
  EXPECT_THROW(tri_letters(""), EncodingError);
  EXPECT_THROW(tri_letters("a#"), EncodingError);
}

TEST(TriLetters, TotalCountEqualsLengthAndIndicesInRange) {
  Rng rng(11);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
  for (int i = 0; i < 1000; ++i) {
    std::string w;
    const int len = rng.between(1, 30);
    for (int j = 0; j < len; ++j) w.push_back(alphabet[rng.below(alphabet.size())]);
    auto v = tri_letters(w);
    EXPECT_FALSE(v.empty());
    EXPECT_EQ(total_count(v), w.size());
    for (std::size_t j = 0; j < v.size(); ++j) {
      EXPECT_LT(v[j].index, kTrigramDim);
      EXPECT_GE(v[j].count, 1u);
      if (j > 0) {
        EXPECT_LT(v[j - 1].index, v[j].index);
      }
    }
  }
}

TEST(Window, PaddingAndOffsets) {
  auto s = window({"cat"}, 3);
  ASSERT_EQ(s.slots.size(), 1u);
  SparseVector expected;
  for (auto e : tri_letters("cat")) expected.push_back({e.index + kTrigramDim, e.count});
  EXPECT_EQ(s.slots[0], expected);

  auto per_word = window({"a", "b"}, 1);
  ASSERT_EQ(per_word.slots.size(), 2u);
  EXPECT_EQ(per_word.slots[0], tri_letters("a"));
  EXPECT_EQ(per_word.slots[1], tri_letters("b"));

  auto xyz = window({"x", "y", "z"}, 3);
  SparseVector mid;
  for (auto e : tri_letters("x")) mid.push_back(e);
  for (auto e : tri_letters("y")) mid.push_back({e.index + kTrigramDim, e.count});
  for (auto e : tri_letters("z")) mid.push_back({e.index + 2 * kTrigramDim, e.count});
  EXPECT_EQ(xyz.slots[1], mid);
}

TEST(Window, LengthMatchesTokens) {
  EXPECT_TRUE(window({}, 3).slots.empty());
  for (std::size_t n : {1u, 3u, 5u, 7u})
    for (std::size_t len = 1; len < 10; ++len) {
      Tokens t(len, "ab");
      EXPECT_EQ(window(t, n).slots.size(), len);
    }
  EXPECT_THROW(window({"a"}, 2), ConfigError);
}

TEST(Prepare, TruncatesLongTexts) {
  std::string raw;
  for (int i = 0; i < 100; ++i) raw += "w" + std::to_string(i) + " ";
  EXPECT_EQ(prepare(raw).size(), kMaxTokens);
}

}  // namespace
}  // namespace cma
