#include "cma/relevance.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

namespace cma {
namespace {

const Corpus& corpus() {
  static const Corpus c = [] {
    SynthConfig cfg;
    cfg.num_queries = 800;
    cfg.num_ads = 300;
    cfg.impression_count = 2000;
    return generate_corpus(build_taxonomy(cfg), cfg);
  }();
  return c;
}

const Taxonomy& tax() { return corpus().taxonomy; }

Document query(Tokens text, std::vector<CategoryId> cats) {
  Document d;
  d.id = "q";
  d.text = std::move(text);
  for (auto c : cats) d.top_categories.push_back({c, 0.5});
  return d;
}

Document ad(Tokens title, std::vector<CategoryId> cats) {
  Document d = query({}, std::move(cats));
  d.id = "a";
  d.kind = DocKind::ad;
  d.title = title;
  d.keyword = {title.front()};
  d.description = title;
  return d;
}

std::size_t index_of(FeatureVariant v, const std::string& name, FeatureOptions opt = {}) {
  const auto names = make_schema(v, tax(), opt).names;
  const auto it = std::find(names.begin(), names.end(), name);
  EXPECT_NE(it, names.end()) << name;
  return static_cast<std::size_t>(it - names.begin());
}

ClsmModel small_model() {
  ClsmConfig c;
  c.conv_units = 16;
  c.semantic_dim = 8;
  c.seed = 3;
  return ClsmModel::initialized(c);
}

TEST(Features, IdenticalQueryAndTitle) {
  const auto leaf = tax().leaves()[0];
  const auto x = extract_features(query({"card", "printing"}, {leaf}), ad({"card", "printing"}, {leaf}),
                                  FeatureVariant::no_cat, nullptr, tax());
  const auto v = FeatureVariant::no_cat;
  EXPECT_EQ(x[index_of(v, "title.token_jaccard")], 1.0);
  EXPECT_EQ(x[index_of(v, "title.query_coverage")], 1.0);
  EXPECT_EQ(x[index_of(v, "title.phrase_match")], 1.0);
  EXPECT_EQ(x[index_of(v, "title.trigram_jaccard")], 1.0);
  EXPECT_EQ(x[index_of(v, "title.token_overlap")], 2.0);
  EXPECT_EQ(x[index_of(v, "title.length_ratio")], 1.0);
  EXPECT_EQ(x[index_of(v, "title.present")], 1.0);
  EXPECT_EQ(x[index_of(v, "anchors.present")], 0.0);
  EXPECT_EQ(x[index_of(v, "keyword.query_coverage")], 0.5);
}

TEST(Features, CategoryJaccardOfTopKSets) {
  const auto& l = tax().leaves();
  const auto x = extract_features(query({"a"}, {l[0], l[1]}), ad({"b"}, {l[1], l[2]}), FeatureVariant::derived,
                                  nullptr, tax());
  EXPECT_DOUBLE_EQ(x[index_of(FeatureVariant::derived, "category_jaccard")], 1.0 / 3.0);
  EXPECT_EQ(x[index_of(FeatureVariant::derived, "category_overlap")], 1.0);
}

TEST(Features, DisjointTextAndCategories) {
  const auto& l = tax().leaves();
  FeatureOptions opt{.derived_lca_depth = true};
  // First and last leaves sit under different depth-1 nodes.
  ASSERT_EQ(tax().lca_depth(l.front(), l.back()), 0);
  const auto x = extract_features(query({"zz", "yy"}, {l.front()}), ad({"ab", "cd"}, {l.back()}),
                                  FeatureVariant::derived, nullptr, tax(), opt);
  for (auto c : kAdComponents)
    for (auto m : {"token_overlap", "token_jaccard", "trigram_jaccard", "query_coverage", "phrase_match"})
      EXPECT_EQ(x[index_of(FeatureVariant::derived, std::string(c) + "." + m, opt)], 0.0) << c << "." << m;
  EXPECT_EQ(x[index_of(FeatureVariant::derived, "category_overlap", opt)], 0.0);
  EXPECT_EQ(x[index_of(FeatureVariant::derived, "category_jaccard", opt)], 0.0);
  EXPECT_EQ(x[index_of(FeatureVariant::derived, "category_lca_depth", opt)], 0.0);
}

TEST(Features, LcaDepthFlagIsOffByDefault) {
  const auto names = make_schema(FeatureVariant::derived, tax()).names;
  EXPECT_EQ(std::count(names.begin(), names.end(), "category_lca_depth"), 0);
  EXPECT_EQ(make_schema(FeatureVariant::derived, tax(), {.derived_lca_depth = true}).dimension(), names.size() + 1);
}

TEST(Features, BinaryOneHots) {
  const auto& l = tax().leaves();
  const auto x = extract_features(query({"a"}, {l[5]}), ad({"b"}, {l[9]}), FeatureVariant::binary, nullptr, tax());
  const std::size_t base = make_schema(FeatureVariant::no_cat, tax()).dimension();
  ASSERT_EQ(x.size(), base + 2 * l.size());
  for (std::size_t i = 0; i < l.size(); ++i) {
    EXPECT_EQ(x[base + i], i == 5 ? 1.0 : 0.0);
    EXPECT_EQ(x[base + l.size() + i], i == 9 ? 1.0 : 0.0);
  }
}

TEST(Features, NoCatBlockIdenticalAcrossVariants) {
  const auto& c = corpus();
  const auto model = small_model();
  const auto nocat = make_schema(FeatureVariant::no_cat, tax()).names;
  for (auto v : kAllVariants) {
    const auto names = make_schema(v, tax()).names;
    ASSERT_GE(names.size(), nocat.size());
    EXPECT_TRUE(std::equal(nocat.begin(), nocat.end(), names.begin()));
  }
  Rng rng(2);
  for (int i = 0; i < 300; ++i) {
    const auto& q = c.queries[rng.below(c.queries.size())];
    const auto& a = c.ads[rng.below(c.ads.size())];
    const auto base = extract_features(q, a, FeatureVariant::no_cat, nullptr, tax());
    for (auto v : kAllVariants) {
      const auto x = extract_features(q, a, v, v == FeatureVariant::cma ? &model : nullptr, tax());
      ASSERT_EQ(x.size(), make_schema(v, tax()).dimension());
      for (std::size_t j = 0; j < base.size(); ++j) EXPECT_EQ(std::memcmp(&x[j], &base[j], sizeof(double)), 0);
      for (double f : x) EXPECT_TRUE(std::isfinite(f));
      EXPECT_EQ(x, extract_features(q, a, v, v == FeatureVariant::cma ? &model : nullptr, tax()));
    }
  }
}

TEST(Features, CmaFeatureEqualsRelevance) {
  const auto& c = corpus();
  const auto model = small_model();
  for (std::size_t i = 0; i < 100; ++i) {
    const auto& q = c.queries[i];
    const auto& a = c.ads[i];
    const auto x = extract_features(q, a, FeatureVariant::cma, &model, tax());
    EXPECT_EQ(x.back(), relevance(model, q.text, a.title));
  }
}

TEST(Features, ModelPresenceMustMatchVariant) {
  const auto model = small_model();
  const auto& q = corpus().queries[0];
  const auto& a = corpus().ads[0];
  EXPECT_THROW(extract_features(q, a, FeatureVariant::cma, nullptr, tax()), FeatureError);
  EXPECT_THROW(extract_features(q, a, FeatureVariant::derived, &model, tax()), FeatureError);
}

TEST(Labels, Binarize) {
  EXPECT_EQ(binarize(RelevanceLabel::bad), 0);
  EXPECT_EQ(binarize(RelevanceLabel::fair), 0);
  EXPECT_EQ(binarize(RelevanceLabel::good), 1);
  EXPECT_EQ(binarize(RelevanceLabel::excellent), 1);
  EXPECT_EQ(binarize(RelevanceLabel::perfect), 1);
  for (auto name : kLabelNames) EXPECT_EQ(to_string(parse_label(name)), name);
  EXPECT_THROW(parse_label("great"), DataError);
}

TEST(Labels, Rubric) {
  const auto& t = tax();
  const auto& l = t.leaves();
  // With branching 4, leaves 0-3 are siblings, 0 and 4 share a depth-1 node,
  // and 0 and the last leaf share only the root.
  ASSERT_EQ(t.lca_depth(l[0], l[1]), 2);
  ASSERT_EQ(t.lca_depth(l[0], l[4]), 1);
  EXPECT_EQ(label_synthetic_relevance(query({"a", "b"}, {l[0]}), ad({"a", "b"}, {l[0]}), t), RelevanceLabel::perfect);
  EXPECT_EQ(label_synthetic_relevance(query({"a", "b"}, {l[0]}), ad({"c", "d"}, {l[0]}), t), RelevanceLabel::excellent);
  EXPECT_EQ(label_synthetic_relevance(query({"a"}, {l[0]}), ad({"a"}, {l[1]}), t), RelevanceLabel::good);
  EXPECT_EQ(label_synthetic_relevance(query({"a"}, {l[0]}), ad({"a"}, {l[4]}), t), RelevanceLabel::fair);
  EXPECT_EQ(label_synthetic_relevance(query({"a"}, {l[0]}), ad({"a"}, {l.back()}), t), RelevanceLabel::bad);
}

TEST(LabeledPairs, SampleIsDeterministicDistinctAndQuerySplit) {
  RelevanceSampleConfig cfg;
  cfg.num_pairs = 1500;
  const auto a = sample_relevance_pairs(corpus(), cfg);
  EXPECT_EQ(a, sample_relevance_pairs(corpus(), cfg));
  ASSERT_EQ(a.size(), 1500u);
  std::set<std::pair<std::string, std::string>> seen;
  std::set<std::string> train_q, eval_q;
  std::array<int, 5> by_label{};
  for (const auto& p : a) {
    EXPECT_TRUE(seen.emplace(p.query_id, p.ad_id).second);
    (p.eval ? eval_q : train_q).insert(p.query_id);
    EXPECT_EQ(p.label, label_synthetic_relevance(corpus().query(p.query_id), corpus().ad(p.ad_id), tax()));
    by_label[static_cast<std::size_t>(p.label)]++;
  }
  for (const auto& q : eval_q) EXPECT_FALSE(train_q.count(q));
  // Perfect needs a same-leaf title sharing half the query's words, which
  // independent sampling rarely produces.
  for (auto l : {RelevanceLabel::bad, RelevanceLabel::fair, RelevanceLabel::good, RelevanceLabel::excellent})
    EXPECT_GT(by_label[static_cast<std::size_t>(l)], 0);
  const double eval_share = static_cast<double>(std::count_if(a.begin(), a.end(), [](auto& p) { return p.eval; })) / a.size();
  EXPECT_NEAR(eval_share, 0.5, 0.1);
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

TEST(Files, LabeledPairsAndFeatureMatrixRoundTrip) {
  RelevanceSampleConfig cfg;
  cfg.num_pairs = 200;
  const auto pairs = sample_relevance_pairs(corpus(), cfg);
  EXPECT_EQ(parse_labeled_pairs(lines_of(serialize_labeled_pairs(pairs))), pairs);
  const auto model = small_model();
  const auto m = build_feature_matrix(corpus(), pairs, FeatureVariant::cma, &model);
  const auto back = parse_feature_matrix(lines_of(serialize_feature_matrix(m)));
  EXPECT_EQ(back.names, m.names);
  EXPECT_EQ(back.rows, m.rows);
  EXPECT_THROW(parse_labeled_pairs({"q\ta\tgood\tholdout"}), DataError);
}

TEST(Variants, NamesRoundTrip) {
  for (auto v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_EQ(display_name(FeatureVariant::cma), "Relevance-CMA");
  EXPECT_THROW(parse_variant("bogus"), ConfigError);
}

}  // namespace
}  // namespace cma
