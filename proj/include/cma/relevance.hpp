#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "cma/clsm.hpp"
#include "cma/corpus.hpp"
#include "cma/error.hpp"
#include "cma/rng.hpp"
#include "cma/taxonomy.hpp"
#include "cma/textprep.hpp"

namespace cma {

enum class RelevanceLabel { bad, fair, good, excellent, perfect };

inline constexpr std::array<std::string_view, 5> kLabelNames = {"bad", "fair", "good", "excellent", "perfect"};

inline std::string_view to_string(RelevanceLabel l) { return kLabelNames[static_cast<std::size_t>(l)]; }

inline RelevanceLabel parse_label(std::string_view s) {
  for (std::size_t i = 0; i < kLabelNames.size(); ++i)
    if (kLabelNames[i] == s) return static_cast<RelevanceLabel>(i);
  throw DataError("unknown relevance label " + std::string(s));
}

/// bad, fair -> 0; good, excellent, perfect -> 1.
inline int binarize(RelevanceLabel l) { return l >= RelevanceLabel::good ? 1 : 0; }

enum class FeatureVariant { no_cat, binary, derived, cma };

inline constexpr std::array<FeatureVariant, 4> kAllVariants = {FeatureVariant::no_cat, FeatureVariant::binary,
                                                               FeatureVariant::derived, FeatureVariant::cma};

inline std::string_view to_string(FeatureVariant v) {
  switch (v) {
    case FeatureVariant::no_cat: return "nocat";
    case FeatureVariant::binary: return "binary";
    case FeatureVariant::derived: return "derived";
    case FeatureVariant::cma: return "cma";
  }
  return "?";
}

inline std::string_view display_name(FeatureVariant v) {
  switch (v) {
    case FeatureVariant::no_cat: return "Relevance-NoCat";
    case FeatureVariant::binary: return "Relevance-Binary";
    case FeatureVariant::derived: return "Relevance-Derived";
    case FeatureVariant::cma: return "Relevance-CMA";
  }
  return "?";
}

inline FeatureVariant parse_variant(std::string_view s) {
  for (auto v : kAllVariants)
    if (to_string(v) == s) return v;
  throw ConfigError("unknown feature variant " + std::string(s));
}

struct FeatureOptions {
  /// Adds lca_depth(rank-1 ids) / taxonomy depth to the Derived block.
  bool derived_lca_depth = false;
};

inline constexpr std::array<std::string_view, 5> kAdComponents = {"keyword", "title", "description", "display_url",
                                                                  "anchors"};
inline constexpr std::array<std::string_view, 6> kLexicalMetrics = {
    "token_overlap", "token_jaccard", "trigram_jaccard", "length_ratio", "query_coverage", "phrase_match"};

struct FeatureSchema {
  FeatureVariant variant = FeatureVariant::no_cat;
  std::vector<std::string> names;
  std::size_t dimension() const { return names.size(); }
};

/// Lexical block (6 metrics x 5 components, then 5 presence flags), followed
/// by the variant's category features.
inline FeatureSchema make_schema(FeatureVariant v, const Taxonomy& t, const FeatureOptions& opt = {}) {
  FeatureSchema s;
  s.variant = v;
  for (auto c : kAdComponents)
    for (auto m : kLexicalMetrics) s.names.push_back(std::string(c) + "." + std::string(m));
  for (auto c : kAdComponents) s.names.push_back(std::string(c) + ".present");
  switch (v) {
    case FeatureVariant::no_cat: break;
    case FeatureVariant::binary:
      for (std::size_t i = 0; i < t.leaves().size(); ++i) s.names.push_back("query_cat." + std::to_string(t.leaves()[i]));
      for (std::size_t i = 0; i < t.leaves().size(); ++i) s.names.push_back("ad_cat." + std::to_string(t.leaves()[i]));
      break;
    case FeatureVariant::derived:
      s.names.push_back("category_overlap");
      s.names.push_back("category_jaccard");
      if (opt.derived_lca_depth) s.names.push_back("category_lca_depth");
      break;
    case FeatureVariant::cma: s.names.push_back("cma_score"); break;
  }
  return s;
}

namespace detail {

inline Tokens component_tokens(const Document& ad, std::size_t c) {
  switch (c) {
    case 0: return ad.keyword;
    case 1: return ad.title;
    case 2: return ad.description;
    case 3: return ad.display_url;
    default: {
      Tokens all;
      for (const auto& a : ad.anchors) all.insert(all.end(), a.begin(), a.end());
      return all;
    }
  }
}

inline std::set<std::uint32_t> trigram_set(const Tokens& t) {
  std::set<std::uint32_t> s;
  for (const auto& w : t)
    for (auto e : tri_letters(w)) s.insert(e.index);
  return s;
}

template <typename T>
double jaccard(const std::set<T>& a, const std::set<T>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

inline bool contains_phrase(const Tokens& hay, const Tokens& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

inline void lexical_block(const Tokens& query, const Tokens& comp, double* out) {
  if (comp.empty() || query.empty()) {
    std::fill(out, out + kLexicalMetrics.size(), 0.0);
    return;
  }
  const std::set<std::string> qs(query.begin(), query.end()), cs(comp.begin(), comp.end());
  std::size_t overlap = 0;
  for (const auto& w : qs) overlap += cs.count(w);
  std::size_t covered = 0;
  for (const auto& w : query) covered += cs.count(w);
  out[0] = static_cast<double>(overlap);
  out[1] = jaccard(qs, cs);
  out[2] = jaccard(trigram_set(query), trigram_set(comp));
  out[3] = static_cast<double>(std::min(query.size(), comp.size())) / static_cast<double>(std::max(query.size(), comp.size()));
  out[4] = static_cast<double>(covered) / static_cast<double>(query.size());
  out[5] = contains_phrase(comp, query) ? 1.0 : 0.0;
}

}  // namespace detail

/// Feature vector for one (query, ad) pair under `variant`. The CMA model must
/// be given exactly when the variant is CMA.
inline std::vector<double> extract_features(const Document& query, const Document& ad, FeatureVariant variant,
                                            const ClsmModel* cma, const Taxonomy& t, const FeatureOptions& opt = {}) {
  if ((variant == FeatureVariant::cma) != (cma != nullptr))
    throw FeatureError("a CMA model is required for, and only for, the CMA variant");
  constexpr std::size_t kMetrics = kLexicalMetrics.size();
  std::vector<double> x(kAdComponents.size() * (kMetrics + 1), 0.0);
  for (std::size_t c = 0; c < kAdComponents.size(); ++c) {
    const Tokens comp = detail::component_tokens(ad, c);
    detail::lexical_block(query.text, comp, &x[c * kMetrics]);
    x[kAdComponents.size() * kMetrics + c] = comp.empty() ? 0.0 : 1.0;
  }
  switch (variant) {
    case FeatureVariant::no_cat: break;
    case FeatureVariant::binary: {
      const std::size_t L = t.leaves().size();
      const std::size_t base = x.size();
      x.resize(base + 2 * L, 0.0);
      x[base + t.leaf_index(query.top_category())] = 1.0;
      x[base + L + t.leaf_index(ad.top_category())] = 1.0;
      break;
    }
    case FeatureVariant::derived: {
      std::set<CategoryId> qa, aa;
      for (const auto& c : query.top_categories) qa.insert(c.id);
      for (const auto& c : ad.top_categories) aa.insert(c.id);
      const double j = detail::jaccard(qa, aa);
      x.push_back(j > 0 ? 1.0 : 0.0);
      x.push_back(j);
      if (opt.derived_lca_depth)
        x.push_back(static_cast<double>(t.lca_depth(query.top_category(), ad.top_category())) / t.max_depth());
      break;
    }
    case FeatureVariant::cma: x.push_back(relevance(*cma, query.text, ad.title)); break;
  }
  return x;
}

/// Ground-truth rubric on rank-1 categories: perfect = same leaf and title
/// token Jaccard >= 0.5; excellent = same leaf; good = siblings; fair = same
/// depth-1 subtree; bad otherwise.
inline RelevanceLabel label_synthetic_relevance(const Document& query, const Document& ad, const Taxonomy& t) {
  const CategoryId q = query.top_category(), a = ad.top_category();
  if (q == a) {
    const std::set<std::string> qs(query.text.begin(), query.text.end()), as(ad.title.begin(), ad.title.end());
    return detail::jaccard(qs, as) >= 0.5 ? RelevanceLabel::perfect : RelevanceLabel::excellent;
  }
  const int lca = t.lca_depth(q, a);
  const int leaf_depth = std::min(t.depth(q), t.depth(a));
  if (lca == leaf_depth - 1 && t.depth(q) == t.depth(a)) return RelevanceLabel::good;
  if (lca >= 1) return RelevanceLabel::fair;
  return RelevanceLabel::bad;
}

// ---------------------------------------------------------------------------
// Labelled relevance pairs

struct LabeledPair {
  std::string query_id;
  std::string ad_id;
  RelevanceLabel label = RelevanceLabel::bad;
  bool eval = false;
  friend bool operator==(const LabeledPair&, const LabeledPair&) = default;
};

struct RelevanceSampleConfig {
  int num_pairs = 8000;
  double eval_fraction = 0.5;
  /// Target mix of ad relations to the query's leaf: same leaf, sibling leaf,
  /// same depth-1 subtree, unrelated. Classes that do not exist in the
  /// taxonomy fall through to unrelated.
  std::array<double, 4> relation_mix = {0.3, 0.2, 0.2, 0.3};
  std::uint64_t seed = 11;
};

/// Stratified (query, ad) sample labelled with the synthetic rubric; the
/// train/eval assignment is by query.
inline std::vector<LabeledPair> sample_relevance_pairs(const Corpus& corpus, const RelevanceSampleConfig& config) {
  if (config.num_pairs < 1) throw ConfigError("num_pairs must be positive");
  if (!(config.eval_fraction > 0 && config.eval_fraction < 1)) throw ConfigError("eval_fraction must lie in (0,1)");
  const Taxonomy& t = corpus.taxonomy;
  const auto& leaves = t.leaves();
  std::vector<std::vector<std::size_t>> ads_by_leaf(leaves.size());
  for (std::size_t i = 0; i < corpus.ads.size(); ++i) ads_by_leaf[t.leaf_index(corpus.ads[i].top_category())].push_back(i);

  // Leaves grouped by relation class for each leaf.
  const int leaf_depth = t.max_depth();
  auto relation = [&](CategoryId a, CategoryId b) {
    if (a == b) return 0;
    const int lca = t.lca_depth(a, b);
    if (lca == leaf_depth - 1) return 1;
    if (lca >= 1) return 2;
    return 3;
  };

  Rng rng(derive_seed(config.seed, "relevance-pairs"));
  std::vector<LabeledPair> out;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::unordered_set<std::string> eval_queries, train_queries;
  double mix_total = 0;
  for (double w : config.relation_mix) mix_total += w;
  int attempts = 0;
  while (static_cast<int>(out.size()) < config.num_pairs) {
    if (++attempts > config.num_pairs * 50) throw DataError("could not sample enough distinct relevance pairs");
    const std::size_t qi = rng.below(corpus.queries.size());
    const Document& q = corpus.queries[qi];
    const CategoryId qleaf = q.top_category();
    double u = rng.uniform01() * mix_total;
    int cls = 0;
    while (cls < 3 && u >= config.relation_mix[static_cast<std::size_t>(cls)]) u -= config.relation_mix[static_cast<std::size_t>(cls++)];
    std::vector<std::size_t> candidates;
    for (int c = cls; c <= 3 && candidates.empty(); ++c)
      for (std::size_t li = 0; li < leaves.size(); ++li)
        if (relation(qleaf, leaves[li]) == c && !ads_by_leaf[li].empty()) candidates.push_back(li);
    if (candidates.empty()) continue;
    const auto& pool = ads_by_leaf[candidates[rng.below(candidates.size())]];
    const std::size_t ai = pool[rng.below(pool.size())];
    if (!seen.emplace(qi, ai).second) continue;
    const Document& a = corpus.ads[ai];
    bool is_eval;
    if (eval_queries.count(q.id)) is_eval = true;
    else if (train_queries.count(q.id)) is_eval = false;
    else {
      is_eval = rng.bernoulli(config.eval_fraction);
      (is_eval ? eval_queries : train_queries).insert(q.id);
    }
    out.push_back({q.id, a.id, label_synthetic_relevance(q, a, t), is_eval});
  }
  return out;
}

inline std::string serialize_labeled_pairs(const std::vector<LabeledPair>& pairs) {
  std::string s;
  for (const auto& p : pairs)
    s += p.query_id + '\t' + p.ad_id + '\t' + std::string(to_string(p.label)) + '\t' + (p.eval ? "eval" : "train") + '\n';
  return s;
}

inline std::vector<LabeledPair> parse_labeled_pairs(const std::vector<std::string>& lines) {
  std::vector<LabeledPair> out;
  for (const auto& l : lines) {
    const auto cols = split_tabs(l);
    if (cols.size() != 4 || (cols[3] != "train" && cols[3] != "eval")) throw DataError("bad labelled pair line: " + l);
    out.push_back({cols[0], cols[1], parse_label(cols[2]), cols[3] == "eval"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature matrix files: header row of names, then one tab-separated row per
// pair. Labels live in a parallel file, one 0/1 label per line.

struct FeatureMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
};

inline FeatureMatrix build_feature_matrix(const Corpus& corpus, const std::vector<LabeledPair>& pairs,
                                          FeatureVariant variant, const ClsmModel* cma, const FeatureOptions& opt = {}) {
  FeatureMatrix m;
  m.names = make_schema(variant, corpus.taxonomy, opt).names;
  for (const auto& p : pairs)
    m.rows.push_back(extract_features(corpus.query(p.query_id), corpus.ad(p.ad_id), variant, cma, corpus.taxonomy, opt));
  return m;
}

inline std::string serialize_feature_matrix(const FeatureMatrix& m) {
  std::string s;
  for (std::size_t i = 0; i < m.names.size(); ++i) s += (i ? "\t" : "") + m.names[i];
  s += '\n';
  char buf[40];
  for (const auto& row : m.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.17g", i ? "\t" : "", row[i]);
      s += buf;
    }
    s += '\n';
  }
  return s;
}

inline FeatureMatrix parse_feature_matrix(const std::vector<std::string>& lines) {
  if (lines.empty()) throw DataError("feature matrix without header");
  FeatureMatrix m;
  m.names = split_tabs(lines[0]);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    auto cols = split_tabs(lines[r]);
    if (cols.size() != m.names.size()) throw FeatureError("row " + std::to_string(r) + " has the wrong width");
    std::vector<double> row;
    for (const auto& c : cols) {
      try {
        row.push_back(std::stod(c));
      } catch (const std::logic_error&) {
        throw DataError("bad feature value " + c);
      }
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

}  // namespace cma
