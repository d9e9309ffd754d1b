#include "cma/embed_index.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <thread>

namespace cma {
namespace {

const Corpus& corpus() {
  static const Corpus c = [] {
    SynthConfig cfg;
    cfg.num_queries = 600;
    cfg.num_ads = 250;
    cfg.impression_count = 1000;
    return generate_corpus(build_taxonomy(cfg), cfg);
  }();
  return c;
}

const FingerprintedModel& model() {
  static const FingerprintedModel m = [] {
    ClsmConfig c;
    c.conv_units = 24;
    c.semantic_dim = 12;
    c.seed = 9;
    return FingerprintedModel(ClsmModel::initialized(c));
  }();
  return m;
}

const EmbeddingIndex& index() {
  static const EmbeddingIndex ix = build_index(model(), corpus().ads).index;
  return ix;
}

TEST(Index, EmptyIndexIsHeaderOnly) {
  const auto built = build_index(model(), {});
  EXPECT_EQ(built.index.size(), 0u);
  const auto bytes = serialize_index(built.index);
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 8 + 32);
  EXPECT_EQ(bytes.substr(0, 4), "CMAX");
  EXPECT_EQ(parse_index(bytes), built.index);
}

TEST(Index, RebuildIsByteIdentical) {
  EXPECT_EQ(serialize_index(build_index(model(), corpus().ads).index), serialize_index(index()));
  EXPECT_EQ(parse_index(serialize_index(index())), index());
}

TEST(Index, RowsAreTitleEmbeddingsWithStoredNorms) {
  ASSERT_EQ(index().size(), corpus().ads.size());
  EXPECT_EQ(index().fingerprint(), model_fingerprint(model().model()));
  for (std::size_t i = 0; i < index().size(); ++i) {
    const auto& ad = corpus().ads[i];
    EXPECT_EQ(index().ids()[i], ad.id);
    const auto y = embed(model().model(), ad.title).y;
    double nn = 0;
    for (std::size_t l = 0; l < y.size(); ++l) {
      EXPECT_EQ(index().row(i)[l], static_cast<float>(y[l]));
      nn += y[l] * y[l];
    }
    EXPECT_NEAR(index().norm(i), std::sqrt(nn), 1e-6 * std::sqrt(nn));
  }
}

TEST(Index, EmptyTitleSkippedWithWarning) {
  auto ads = std::vector<Document>(corpus().ads.begin(), corpus().ads.begin() + 5);
  ads[2].title.clear();
  const auto built = build_index(model(), ads);
  EXPECT_EQ(built.index.size(), 4u);
  ASSERT_EQ(built.warnings.size(), 1u);
  EXPECT_NE(built.warnings[0].find(ads[2].id), std::string::npos);
  EXPECT_FALSE(built.index.find(ads[2].id).has_value());
}

TEST(Score, MatchesDirectRelevance) {
  const auto& c = corpus();
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const auto& q = c.queries[rng.below(c.queries.size())];
    std::vector<std::string> ids;
    for (int k = 0; k < 5; ++k) ids.push_back(c.ads[rng.below(c.ads.size())].id);
    const auto scores = score_candidates(index(), model(), q.text, ids);
    ASSERT_EQ(scores.size(), ids.size());
    for (const auto& s : scores) {
      ASSERT_TRUE(s.ok());
      EXPECT_NEAR(s.score, relevance(model().model(), q.text, c.ad(s.ad_id).title), 1e-6);
    }
  }
}

TEST(Score, OneEmbeddingPerCall) {
  std::vector<std::string> ids;
  for (const auto& a : corpus().ads) ids.push_back(a.id);
  const auto& ix = index();
  const auto before = embed_call_count();
  score_candidates(ix, model(), {"some", "query"}, ids);
  EXPECT_EQ(embed_call_count() - before, 1u);
}

TEST(Score, OutOfVocabularyQuery) {
  const std::vector<std::string> ids = {corpus().ads[0].id, corpus().ads[1].id};
  for (const auto& s : score_candidates(index(), model(), prepare("zzzqx vbnmt"), ids)) {
    ASSERT_TRUE(s.ok());
    EXPECT_TRUE(std::isfinite(s.score));
    EXPECT_GE(s.score, -1.0);
    EXPECT_LE(s.score, 1.0);
  }
}

TEST(Score, EmptyCandidatesAndUnknownIds) {
  EXPECT_TRUE(score_candidates(index(), model(), {"x"}, {}).empty());
  const auto r = score_candidates(index(), model(), {"x"}, {"nope", corpus().ads[0].id});
  ASSERT_EQ(r.size(), 2u);
  EXPECT_FALSE(r[0].ok());
  EXPECT_TRUE(r[1].ok());
}

TEST(Score, FingerprintMismatchIsHardError) {
  ClsmConfig c;
  c.conv_units = 24;
  c.semantic_dim = 12;
  c.seed = 10;
  const FingerprintedModel other(ClsmModel::initialized(c));
  EXPECT_THROW(score_candidates(index(), other, {"x"}, {corpus().ads[0].id}), DataError);
}

TEST(Score, ConcurrentCallsAgreeWithSerial) {
  const auto& c = corpus();
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 50; ++i) ids.push_back(c.ads[i].id);
  std::vector<std::vector<CandidateScore>> serial, parallel(40);
  for (std::size_t q = 0; q < 40; ++q) serial.push_back(score_candidates(index(), model(), c.queries[q].text, ids));
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < 4; ++w)
    workers.emplace_back([&, w] {
      for (std::size_t q = w; q < 40; q += 4) parallel[q] = score_candidates(index(), model(), c.queries[q].text, ids);
    });
  for (auto& t : workers) t.join();
  for (std::size_t q = 0; q < 40; ++q)
    for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(parallel[q][i].score, serial[q][i].score);
}

TEST(IndexFile, RejectsCorruptInput) {
  auto bytes = serialize_index(index());
  EXPECT_THROW(parse_index(bytes.substr(0, bytes.size() - 1)), DataError);
  EXPECT_THROW(parse_index(bytes + "x"), DataError);
  bytes[0] = 'X';
  EXPECT_THROW(parse_index(bytes), DataError);
}

}  // namespace
}  // namespace cma
