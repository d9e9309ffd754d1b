#include "cma/taxonomy.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "cma/corpus.hpp"

namespace cma {
namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.taxonomy_depth = 3;
  c.branching_factor = 4;
  c.num_queries = 1000;
  c.num_ads = 300;
  c.impression_count = 20000;
  return c;
}

TEST(Taxonomy, CompleteTreeCounts) {
  auto t = build_taxonomy(small_config());
  EXPECT_EQ(t.size(), 85u);
  EXPECT_EQ(t.leaves().size(), 64u);
  EXPECT_EQ(t.max_depth(), 3);
  for (auto leaf : t.leaves()) {
    EXPECT_EQ(t.depth(leaf), 3);
    EXPECT_FALSE(t.node(leaf).vocab.empty());
  }
}

TEST(Taxonomy, Deterministic) {
  EXPECT_EQ(build_taxonomy(small_config()).serialize(), build_taxonomy(small_config()).serialize());
  auto other = small_config();
  other.seed = 99;
  EXPECT_NE(build_taxonomy(other).serialize(), build_taxonomy(small_config()).serialize());
}

TEST(Taxonomy, DepthOne) {
  SynthConfig c;
  c.taxonomy_depth = 1;
  c.branching_factor = 2;
  auto t = build_taxonomy(c);
  ASSERT_EQ(t.leaves().size(), 2u);
  EXPECT_EQ(t.lca_depth(t.leaves()[0], t.leaves()[1]), 0);
}

TEST(Taxonomy, InvalidConfig) {
  SynthConfig c;
  c.branching_factor = 1;
  EXPECT_THROW(build_taxonomy(c), ConfigError);
  c = SynthConfig{};
  c.taxonomy_depth = 0;
  EXPECT_THROW(build_taxonomy(c), ConfigError);
}

TEST(Taxonomy, LcaDepth) {
  auto t = build_taxonomy(small_config());
  const auto& L = t.leaves();
  EXPECT_EQ(t.lca_depth(L[5], L[5]), 3);
  EXPECT_EQ(t.lca_depth(L[0], L[1]), 2);  // siblings
  EXPECT_EQ(t.lca_depth(L[0], L[4]), 1);  // same depth-1 subtree
  EXPECT_EQ(t.lca_depth(L[0], L[63]), 0);
  EXPECT_EQ(t.lca_depth(1, 1), 1);
  EXPECT_THROW(t.lca_depth(0, 1000), LookupError);
  for (CategoryId a = 0; a < t.size(); a += 3)
    for (CategoryId b = 0; b < t.size(); b += 5) {
      EXPECT_EQ(t.lca_depth(a, b), t.lca_depth(b, a));
      EXPECT_LE(t.lca_depth(a, b), std::min(t.depth(a), t.depth(b)));
    }
}

TEST(Taxonomy, NonSiblingVocabularyOverlapBelowHalf) {
  auto t = build_taxonomy(small_config());
  const auto& L = t.leaves();
  for (std::size_t i = 0; i < L.size(); ++i)
    for (std::size_t j = i + 1; j < L.size(); ++j) {
      if (t.lca_depth(L[i], L[j]) == t.max_depth() - 1) continue;
      auto a = t.effective_vocab(L[i]);
      auto b = t.effective_vocab(L[j]);
      std::set<std::string> sa(a.begin(), a.end());
      std::size_t shared = 0;
      for (const auto& w : std::set<std::string>(b.begin(), b.end())) shared += sa.count(w);
      EXPECT_LT(static_cast<double>(shared), 0.5 * static_cast<double>(sa.size()));
    }
}

TEST(Taxonomy, SerializeParseRoundTrip) {
  auto t = build_taxonomy(small_config());
  auto back = Taxonomy::parse(t.serialize());
  EXPECT_EQ(back.serialize(), t.serialize());
  EXPECT_THROW(Taxonomy::parse("0\t-\t0\t\n1\t5\t1\tx\n"), DataError);
}

TEST(Corpus, GroundTruthAndDeterminism) {
  auto cfg = small_config();
  auto t = build_taxonomy(cfg);
  auto c1 = generate_corpus(t, cfg);
  auto c2 = generate_corpus(t, cfg);
  EXPECT_EQ(c1.queries, c2.queries);
  EXPECT_EQ(c1.ads, c2.ads);
  EXPECT_EQ(c1.impressions, c2.impressions);
  for (const auto* docs : {&c1.queries, &c1.ads})
    for (const auto& d : *docs) {
      ASSERT_EQ(d.top_categories.size(), 3u);
      EXPECT_TRUE(t.is_leaf(d.top_category()));
      EXPECT_FALSE(d.text.empty());
      for (std::size_t i = 1; i < d.top_categories.size(); ++i)
        EXPECT_GE(d.top_categories[i - 1].confidence, d.top_categories[i].confidence);
      for (const auto& c : d.top_categories) {
        EXPECT_GE(c.confidence, 0.0);
        EXPECT_LE(c.confidence, 1.0);
      }
    }
  // Rank-1 is the generating leaf: every text token comes from its effective vocabulary or the stop list.
  for (const auto& q : c1.queries) {
    auto v = t.effective_vocab(q.top_category());
    std::set<std::string> allowed(v.begin(), v.end());
    allowed.insert(detail::stop_words().begin(), detail::stop_words().end());
    for (const auto& w : q.text) EXPECT_TRUE(allowed.count(w)) << w;
  }
}

TEST(Corpus, NoCrossCategoryImpressions) {
  auto cfg = small_config();
  cfg.cross_category_impression_rate = 0.0;
  auto t = build_taxonomy(cfg);
  auto c = generate_corpus(t, cfg);
  for (const auto& imp : c.impressions) EXPECT_EQ(c.query(imp.query_id).top_category(), c.ad(imp.ad_id).top_category());
}

TEST(Corpus, AllCrossCategoryImpressionsBinomialBound) {
  auto cfg = small_config();
  cfg.cross_category_impression_rate = 1.0;
  auto t = build_taxonomy(cfg);
  auto c = generate_corpus(t, cfg);
  std::size_t match = 0;
  for (const auto& imp : c.impressions) match += c.query(imp.query_id).top_category() == c.ad(imp.ad_id).top_category();
  const double n = static_cast<double>(c.impressions.size());
  const double p = 1.0 / (static_cast<double>(t.leaves().size()) - 1);
  EXPECT_LE(static_cast<double>(match) / n, p + 3 * std::sqrt(p * (1 - p) / n));
}

TEST(Corpus, ZipfHeadMass) {
  // Exact partial sums: H(10) / H(1000) for s = 1.
  double h10 = 0, h1000 = 0;
  for (int r = 1; r <= 1000; ++r) {
    h1000 += 1.0 / r;
    if (r <= 10) h10 += 1.0 / r;
  }
  ASSERT_GE(h10 / h1000, 0.25);

  auto cfg = small_config();
  cfg.impression_count = 100000;
  auto t = build_taxonomy(cfg);
  auto c = generate_corpus(t, cfg);
  std::map<std::string, int> freq;
  for (const auto& imp : c.impressions) ++freq[imp.query_id];
  std::vector<int> counts;
  for (auto& [_, n] : freq) counts.push_back(n);
  std::sort(counts.rbegin(), counts.rend());
  double top10 = 0;
  for (int i = 0; i < 10; ++i) top10 += counts[i];
  EXPECT_GE(top10 / static_cast<double>(c.impressions.size()), 0.25);

  // r-th most frequent within a factor of 3 of C r^-s.
  const double C = static_cast<double>(c.impressions.size()) / h1000;
  for (int r = 1; r <= 100; ++r) {
    const double expected = C / r;
    EXPECT_LE(counts[r - 1], 3 * expected) << r;
    EXPECT_GE(counts[r - 1], expected / 3) << r;
  }
}

TEST(Corpus, FileRoundTrip) {
  auto cfg = small_config();
  cfg.num_queries = 200;
  cfg.impression_count = 1000;
  auto t = build_taxonomy(cfg);
  auto c = generate_corpus(t, cfg);
  auto dir = std::filesystem::temp_directory_path() / "cma_corpus_roundtrip";
  std::filesystem::remove_all(dir);
  save_corpus(c, dir);
  auto back = load_corpus(dir);
  EXPECT_EQ(back.queries, c.queries);
  EXPECT_EQ(back.ads, c.ads);
  EXPECT_EQ(back.impressions, c.impressions);
  EXPECT_EQ(back.taxonomy.serialize(), c.taxonomy.serialize());
  std::filesystem::remove_all(dir);
}

TEST(Corpus, EmptyLeafVocabularyRejected) {
  auto cfg = small_config();
  auto t = build_taxonomy(cfg);
  auto nodes = t.nodes();
  nodes[t.leaves()[0]].vocab.clear();
  EXPECT_THROW(generate_corpus(Taxonomy(nodes), cfg), ConfigError);
}

}  // namespace
}  // namespace cma
