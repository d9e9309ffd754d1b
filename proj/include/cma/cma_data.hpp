#pragma once

#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cma/clsm.hpp"
#include "cma/corpus.hpp"
#include "cma/error.hpp"
#include "cma/rng.hpp"

namespace cma {

struct CmaDataConfig {
  double delta = 0.5;
  double noise_fraction = 0.0;
  double eval_holdout_fraction = 0.005;
  std::uint64_t seed = 3;
};

inline void validate(const CmaDataConfig& c) {
  if (!(c.noise_fraction >= 0 && c.noise_fraction <= 0.5)) throw ConfigError("noise fraction must lie in [0, 0.5]");
  if (!(c.eval_holdout_fraction > 0 && c.eval_holdout_fraction < 1)) throw ConfigError("holdout must lie in (0, 1)");
  if (!std::isfinite(c.delta)) throw ConfigError("delta must be finite");
}

struct PairRow {
  std::string query_id;
  std::string ad_id;
  int label = 0;
  bool is_noise = false;
  friend bool operator==(const PairRow&, const PairRow&) = default;
};

struct PairSet {
  std::vector<PairRow> rows;
  std::size_t count_label(int label) const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.label == label;
    return n;
  }
  friend bool operator==(const PairSet&, const PairSet&) = default;
};

/// 1 when the rank-1 categories are the same node. Ancestor/descendant pairs do
/// not count.
inline double g_top_match(const Document& query, const Document& ad) {
  return query.top_category() == ad.top_category() ? 1.0 : 0.0;
}

using CategorySimilarity = std::function<double(const Document&, const Document&)>;

/// Similarity 1 - (leaf depth - lca depth)/leaf depth. Available as a
/// drop-in `g`; the default pipeline uses g_top_match.
inline CategorySimilarity lca_similarity(const Taxonomy& t) {
  return [&t](const Document& q, const Document& a) {
    const CategoryId x = q.top_category(), y = a.top_category();
    const int d = std::max(t.depth(x), t.depth(y));
    return d == 0 ? 1.0 : static_cast<double>(t.lca_depth(x, y)) / d;
  };
}

/// Impressed pairs with g > delta, labelled 1, in first-impression order.
inline PairSet build_positive_set(const std::vector<Impression>& impressions, const Corpus& corpus,
                                  const CmaDataConfig& config, const CategorySimilarity& g = g_top_match) {
  PairSet out;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& imp : impressions) {
    if (g(corpus.query(imp.query_id), corpus.ad(imp.ad_id)) <= config.delta) continue;
    if (seen.emplace(imp.query_id, imp.ad_id).second) out.rows.push_back({imp.query_id, imp.ad_id, 1, false});
  }
  return out;
}

/// Distinct impressed pairs whose rank-1 categories differ, in first-impression
/// order, skipping queries in `exclude`.
inline std::vector<std::pair<std::string, std::string>> mismatched_pairs(
    const std::vector<Impression>& impressions, const Corpus& corpus,
    const std::unordered_set<std::string>* exclude = nullptr) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& imp : impressions) {
    if (exclude && exclude->count(imp.query_id)) continue;
    if (g_top_match(corpus.query(imp.query_id), corpus.ad(imp.ad_id)) != 0.0) continue;
    if (seen.emplace(imp.query_id, imp.ad_id).second) out.emplace_back(imp.query_id, imp.ad_id);
  }
  return out;
}

inline std::size_t noise_count(std::size_t positives, double f) {
  return static_cast<std::size_t>(std::llround(f / (1.0 - f) * static_cast<double>(positives)));
}

/// Appends round(f/(1-f) |D+|) mismatched impressed pairs as noisy positives.
/// The candidate pool is shuffled by `seed` alone, so for f1 < f2 the f1
/// output is a prefix-subset of the f2 output.
inline PairSet inject_noise(const PairSet& d_plus, const std::vector<Impression>& impressions, const Corpus& corpus,
                            double f, std::uint64_t seed,
                            const std::unordered_set<std::string>* exclude_queries = nullptr) {
  if (!(f >= 0 && f <= 0.5)) throw ConfigError("noise fraction must lie in [0, 0.5]");
  PairSet out = d_plus;
  if (f == 0) return out;
  const std::size_t positives = d_plus.count_label(1);
  const std::size_t needed =
      static_cast<std::size_t>(std::ceil(f / (1.0 - f) * static_cast<double>(positives) - 1e-9));
  auto pool = mismatched_pairs(impressions, corpus, exclude_queries);
  if (pool.size() < needed)
    throw DataError("noise pool has " + std::to_string(pool.size()) + " mismatched pairs, need " +
                    std::to_string(needed));
  Rng rng(derive_seed(seed, "noise"));
  rng.shuffle(pool);
  const std::size_t n = std::min(noise_count(positives, f), pool.size());
  for (std::size_t i = 0; i < n; ++i) out.rows.push_back({pool[i].first, pool[i].second, 1, true});
  return out;
}

struct Split {
  PairSet train;
  PairSet eval;
};

/// Query-disjoint split. Eval takes whole queries until it holds the holdout
/// share of label-1 rows, then gains label-0 rows: mismatched impressed pairs
/// of eval queries, up to one per eval positive.
inline Split split(const PairSet& pairs, const std::vector<Impression>& impressions, const Corpus& corpus,
                   const CmaDataConfig& config) {
  validate(config);
  if (pairs.rows.size() < 200) throw DataError("split needs at least 200 pairs");
  std::vector<std::string> queries;
  std::unordered_map<std::string, std::size_t> positives_per_query;
  for (const auto& r : pairs.rows) {
    auto [it, inserted] = positives_per_query.try_emplace(r.query_id, 0);
    if (inserted) queries.push_back(r.query_id);
    it->second += r.label == 1;
  }
  Rng rng(derive_seed(config.seed, "split"));
  rng.shuffle(queries);
  const double target = config.eval_holdout_fraction * static_cast<double>(pairs.count_label(1));
  std::unordered_set<std::string> eval_queries;
  std::size_t eval_pos = 0;
  for (const auto& q : queries) {
    if (static_cast<double>(eval_pos) >= target) break;
    eval_queries.insert(q);
    eval_pos += positives_per_query[q];
  }

  Split s;
  for (const auto& r : pairs.rows) (eval_queries.count(r.query_id) ? s.eval : s.train).rows.push_back(r);

  std::vector<std::pair<std::string, std::string>> negatives;
  for (const auto& p : mismatched_pairs(impressions, corpus))
    if (eval_queries.count(p.first)) negatives.push_back(p);
  const auto pick = rng.sample_without_replacement(negatives.size(), s.eval.count_label(1));
  std::vector<std::size_t> ordered(pick.begin(), pick.end());
  std::sort(ordered.begin(), ordered.end());
  for (auto i : ordered) s.eval.rows.push_back({negatives[i].first, negatives[i].second, 0, false});
  return s;
}

inline std::unordered_set<std::string> query_ids(const PairSet& p) {
  std::unordered_set<std::string> q;
  for (const auto& r : p.rows) q.insert(r.query_id);
  return q;
}

/// (query text, ad title) for every label-1 row.
inline std::vector<TextPair> positive_text_pairs(const PairSet& p, const Corpus& corpus) {
  std::vector<TextPair> out;
  for (const auto& r : p.rows)
    if (r.label == 1) out.push_back({corpus.query(r.query_id).text, corpus.ad(r.ad_id).title});
  return out;
}

inline std::string serialize_pairs(const PairSet& p) {
  std::string s;
  for (const auto& r : p.rows)
    s += r.query_id + '\t' + r.ad_id + '\t' + std::to_string(r.label) + '\t' + (r.is_noise ? "1" : "0") + '\n';
  return s;
}

inline PairSet parse_pairs(const std::vector<std::string>& lines) {
  PairSet p;
  for (const auto& l : lines) {
    const auto f = split_tabs(l);
    if (f.size() != 4 || (f[2] != "0" && f[2] != "1") || (f[3] != "0" && f[3] != "1"))
      throw DataError("bad pair line: " + l);
    p.rows.push_back({f[0], f[1], f[2] == "1" ? 1 : 0, f[3] == "1"});
  }
  return p;
}

}  // namespace cma
