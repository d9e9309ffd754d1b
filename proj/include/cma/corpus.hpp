#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cma/error.hpp"
#include "cma/rng.hpp"
#include "cma/sha256.hpp"
#include "cma/taxonomy.hpp"
#include "cma/textprep.hpp"

namespace cma {

enum class DocKind { query, ad };

struct ScoredCategory {
  CategoryId id = 0;
  double confidence = 0;
  friend bool operator==(const ScoredCategory&, const ScoredCategory&) = default;
};

/// A query or an ad. For ads `text` is the title; the other components are
/// filled only for ads.
struct Document {
  std::string id;
  DocKind kind = DocKind::query;
  Tokens text;
  Tokens keyword;
  Tokens title;
  Tokens description;
  Tokens display_url;
  std::vector<Tokens> anchors;
  std::vector<ScoredCategory> top_categories;  // confidence descending

  CategoryId top_category() const {
    if (top_categories.empty()) throw DataError("document " + id + " has no categories");
    return top_categories.front().id;
  }
  friend bool operator==(const Document&, const Document&) = default;
};

struct Impression {
  std::string query_id;
  std::string ad_id;
  bool clicked = false;
  friend bool operator==(const Impression&, const Impression&) = default;
};

class Corpus {
 public:
  Taxonomy taxonomy;
  std::vector<Document> queries;
  std::vector<Document> ads;
  std::vector<Impression> impressions;

  void reindex() {
    query_pos_.clear();
    ad_pos_.clear();
    for (std::size_t i = 0; i < queries.size(); ++i) query_pos_.emplace(queries[i].id, i);
    for (std::size_t i = 0; i < ads.size(); ++i) ad_pos_.emplace(ads[i].id, i);
  }

  const Document& query(const std::string& id) const { return lookup(query_pos_, queries, id, "query"); }
  const Document& ad(const std::string& id) const { return lookup(ad_pos_, ads, id, "ad"); }
  bool has_query(const std::string& id) const { return query_pos_.count(id) != 0; }
  bool has_ad(const std::string& id) const { return ad_pos_.count(id) != 0; }

 private:
  static const Document& lookup(const std::unordered_map<std::string, std::size_t>& pos,
                                const std::vector<Document>& docs, const std::string& id, const char* what) {
    auto it = pos.find(id);
    if (it == pos.end()) throw LookupError(std::string("unknown ") + what + " id " + id);
    return docs[it->second];
  }

  std::unordered_map<std::string, std::size_t> query_pos_;
  std::unordered_map<std::string, std::size_t> ad_pos_;
};

namespace detail {

inline std::string make_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06zu", prefix, i);
  return buf;
}

inline double round6(double x) { return std::round(x * 1e6) / 1e6; }

// Draws one token for a text generated from `leaf`.
class TokenSampler {
 public:
  TokenSampler(const Taxonomy& t, const SynthConfig& c) : tax_(t), cfg_(c) {}

  std::string draw(CategoryId leaf, Rng& rng) const {
    const double u = rng.uniform01();
    if (u < cfg_.stop_word_prob) return pick(stop_words(), rng);
    std::vector<CategoryId> ancestors;
    for (CategoryId cur = leaf; *tax_.node(cur).parent != tax_.root();) {
      cur = *tax_.node(cur).parent;
      if (!tax_.node(cur).vocab.empty()) ancestors.push_back(cur);
    }
    if (u < cfg_.stop_word_prob + cfg_.leaf_word_prob || ancestors.empty()) return pick(tax_.node(leaf).vocab, rng);
    return pick(tax_.node(ancestors[rng.below(ancestors.size())]).vocab, rng);
  }

  Tokens draw_many(CategoryId leaf, int n, Rng& rng) const {
    Tokens t;
    for (int i = 0; i < n; ++i) t.push_back(draw(leaf, rng));
    return t;
  }

 private:
  static std::string pick(const Tokens& v, Rng& rng) { return v[rng.below(v.size())]; }
  const Taxonomy& tax_;
  const SynthConfig& cfg_;
};

// Rank 1 is the generating leaf with confidence in [0.5, 1); the remaining
// k-1 are distinct other leaves with strictly decreasing confidences.
inline std::vector<ScoredCategory> draw_categories(const Taxonomy& t, CategoryId leaf, int k, Rng& rng) {
  std::vector<ScoredCategory> cats;
  double conf = round6(rng.uniform(0.5, 1.0));
  cats.push_back({leaf, conf});
  const auto& leaves = t.leaves();
  while (static_cast<int>(cats.size()) < k) {
    CategoryId c = leaves[rng.below(leaves.size())];
    bool dup = false;
    for (const auto& e : cats) dup = dup || e.id == c;
    if (dup) continue;
    conf = round6(conf * rng.uniform(0.2, 0.9));
    if (conf <= 0) conf = 1e-6;
    cats.push_back({c, std::min(conf, cats.back().confidence)});
  }
  return cats;
}

}  // namespace detail

/// Zipf weights r^-s for ranks 1..n, normalized.
inline std::vector<double> zipf_weights(std::size_t n, double s) {
  std::vector<double> w(n);
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) total += (w[r] = std::pow(static_cast<double>(r + 1), -s));
  for (auto& x : w) x /= total;
  return w;
}

inline Corpus generate_corpus(const Taxonomy& t, const SynthConfig& config) {
  validate(config);
  for (CategoryId leaf : t.leaves())
    if (t.node(leaf).vocab.empty()) throw ConfigError("leaf " + std::to_string(leaf) + " has an empty vocabulary");
  if (config.num_ads < static_cast<int>(t.leaves().size()))
    throw ConfigError("num_ads must be at least the number of leaves");
  if (config.top_k > static_cast<int>(t.leaves().size())) throw ConfigError("top_k exceeds leaf count");

  Corpus c;
  c.taxonomy = t;
  const detail::TokenSampler sampler(t, config);
  const auto& leaves = t.leaves();

  Rng qrng(derive_seed(config.seed, "queries"));
  for (int i = 0; i < config.num_queries; ++i) {
    Document q;
    q.id = detail::make_id('q', static_cast<std::size_t>(i));
    q.kind = DocKind::query;
    const CategoryId leaf = leaves[qrng.below(leaves.size())];
    q.text = sampler.draw_many(leaf, qrng.between(2, 4), qrng);
    q.top_categories = detail::draw_categories(t, leaf, config.top_k, qrng);
    c.queries.push_back(std::move(q));
  }

  Rng arng(derive_seed(config.seed, "ads"));
  std::vector<std::vector<std::size_t>> ads_by_leaf(leaves.size());
  for (int i = 0; i < config.num_ads; ++i) {
    Document a;
    a.id = detail::make_id('a', static_cast<std::size_t>(i));
    a.kind = DocKind::ad;
    // The first |leaves| ads cover every leaf once.
    const std::size_t li = i < static_cast<int>(leaves.size()) ? static_cast<std::size_t>(i) : arng.below(leaves.size());
    const CategoryId leaf = leaves[li];
    a.title = sampler.draw_many(leaf, arng.between(3, 6), arng);
    const int kw_len = arng.between(1, std::min<int>(3, static_cast<int>(a.title.size())));
    const int kw_start = arng.between(0, static_cast<int>(a.title.size()) - kw_len);
    a.keyword.assign(a.title.begin() + kw_start, a.title.begin() + kw_start + kw_len);
    a.description = a.title;
    for (const auto& w : sampler.draw_many(leaf, arng.between(3, 6), arng)) a.description.push_back(w);
    std::string url;
    for (const auto& w : a.title) url += w;
    a.display_url = {url};
    const int anchors = arng.between(0, 3);
    for (int k = 0; k < anchors; ++k) a.anchors.push_back(sampler.draw_many(leaf, arng.between(1, 3), arng));
    a.text = a.title;
    a.top_categories = detail::draw_categories(t, leaf, config.top_k, arng);
    ads_by_leaf[li].push_back(c.ads.size());
    c.ads.push_back(std::move(a));
  }

  // Inverse-CDF sampling over the Zipf law; query i has rank i+1.
  const auto w = zipf_weights(c.queries.size(), config.query_zipf_exponent);
  std::vector<double> cdf(w.size());
  double acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) cdf[i] = (acc += w[i]);
  cdf.back() = 1.0;

  Rng irng(derive_seed(config.seed, "impressions"));
  for (int i = 0; i < config.impression_count; ++i) {
    const double u = irng.uniform01();
    const std::size_t qi = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    const Document& q = c.queries[std::min(qi, cdf.size() - 1)];
    const std::size_t qleaf = t.leaf_index(q.top_category());
    std::size_t aleaf = qleaf;
    const bool cross = irng.bernoulli(config.cross_category_impression_rate);
    if (cross) {
      aleaf = irng.below(leaves.size() - 1);
      if (aleaf >= qleaf) ++aleaf;
    }
    const auto& pool = ads_by_leaf[aleaf];
    const Document& a = c.ads[pool[irng.below(pool.size())]];
    const bool clicked = irng.bernoulli(cross ? config.click_prob_cross : config.click_prob_same);
    c.impressions.push_back({q.id, a.id, clicked});
  }
  c.reindex();
  return c;
}

// ---------------------------------------------------------------------------
// Corpus files. One record per line, tab-separated key=value fields. Token
// fields hold normalized space-joined text; anchors are '|'-separated phrases;
// categories are space-separated id:confidence pairs.

namespace detail {

inline std::string format_categories(const std::vector<ScoredCategory>& cats) {
  std::string s;
  char buf[64];
  for (std::size_t i = 0; i < cats.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%u:%.6f", i ? " " : "", cats[i].id, cats[i].confidence);
    s += buf;
  }
  return s;
}

inline std::vector<ScoredCategory> parse_categories(const std::string& s) {
  std::vector<ScoredCategory> out;
  for (const auto& item : split_tokens(s)) {
    auto colon = item.find(':');
    if (colon == std::string::npos) throw DataError("bad category entry " + item);
    try {
      out.push_back({static_cast<CategoryId>(std::stoul(item.substr(0, colon))), std::stod(item.substr(colon + 1))});
    } catch (const std::logic_error&) {
      throw DataError("bad category entry " + item);
    }
  }
  return out;
}

inline std::vector<std::pair<std::string, std::string>> split_fields(const std::string& line) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t i = 0;
  while (i <= line.size()) {
    std::size_t j = line.find('\t', i);
    if (j == std::string::npos) j = line.size();
    std::string f = line.substr(i, j - i);
    auto eq = f.find('=');
    if (eq == std::string::npos) throw DataError("field without '=': " + f);
    out.emplace_back(f.substr(0, eq), f.substr(eq + 1));
    i = j + 1;
  }
  return out;
}

}  // namespace detail

inline std::string serialize_document(const Document& d) {
  std::string s = "id=" + d.id + "\tkind=" + (d.kind == DocKind::query ? "query" : "ad") + "\ttext=" + join_tokens(d.text);
  if (d.kind == DocKind::ad) {
    s += "\tkeyword=" + join_tokens(d.keyword);
    s += "\ttitle=" + join_tokens(d.title);
    s += "\tdescription=" + join_tokens(d.description);
    s += "\tdisplay_url=" + join_tokens(d.display_url);
    s += "\tanchors=";
    for (std::size_t i = 0; i < d.anchors.size(); ++i) s += (i ? "|" : "") + join_tokens(d.anchors[i]);
  }
  s += "\tcategories=" + detail::format_categories(d.top_categories);
  return s;
}

inline Document parse_document(const std::string& line) {
  Document d;
  bool has_id = false;
  for (const auto& [k, v] : detail::split_fields(line)) {
    if (k == "id") {
      d.id = v;
      has_id = true;
    } else if (k == "kind") {
      if (v == "query") d.kind = DocKind::query;
      else if (v == "ad") d.kind = DocKind::ad;
      else throw DataError("unknown document kind " + v);
    } else if (k == "text") d.text = split_tokens(v);
    else if (k == "keyword") d.keyword = split_tokens(v);
    else if (k == "title") d.title = split_tokens(v);
    else if (k == "description") d.description = split_tokens(v);
    else if (k == "display_url") d.display_url = split_tokens(v);
    else if (k == "anchors") {
      std::size_t i = 0;
      while (i < v.size()) {
        std::size_t j = v.find('|', i);
        if (j == std::string::npos) j = v.size();
        d.anchors.push_back(split_tokens(v.substr(i, j - i)));
        i = j + 1;
      }
    } else if (k == "categories") d.top_categories = detail::parse_categories(v);
    else throw DataError("unknown document field " + k);
  }
  if (!has_id) throw DataError("document without id");
  return d;
}

inline std::string serialize_impressions(const std::vector<Impression>& imps) {
  std::string s;
  for (const auto& i : imps) s += i.query_id + '\t' + i.ad_id + '\t' + (i.clicked ? "1" : "0") + '\n';
  return s;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t i = 0;
  while (true) {
    const std::size_t j = line.find('\t', i);
    cols.push_back(line.substr(i, j == std::string::npos ? std::string::npos : j - i));
    if (j == std::string::npos) break;
    i = j + 1;
  }
  return cols;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::istringstream in(read_file_bytes(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

struct CorpusFiles {
  static constexpr const char* taxonomy = "taxonomy.tsv";
  static constexpr const char* queries = "queries.txt";
  static constexpr const char* ads = "ads.txt";
  static constexpr const char* impressions = "impressions.tsv";
};

inline void save_corpus(const Corpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / CorpusFiles::taxonomy, c.taxonomy.serialize());
  std::string q, a;
  for (const auto& d : c.queries) q += serialize_document(d) + '\n';
  for (const auto& d : c.ads) a += serialize_document(d) + '\n';
  write_text_file(dir / CorpusFiles::queries, q);
  write_text_file(dir / CorpusFiles::ads, a);
  write_text_file(dir / CorpusFiles::impressions, serialize_impressions(c.impressions));
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.taxonomy = Taxonomy::parse(read_file_bytes(dir / CorpusFiles::taxonomy));
  for (const auto& l : read_lines(dir / CorpusFiles::queries)) c.queries.push_back(parse_document(l));
  for (const auto& l : read_lines(dir / CorpusFiles::ads)) c.ads.push_back(parse_document(l));
  for (const auto& l : read_lines(dir / CorpusFiles::impressions)) {
    auto t1 = l.find('\t'), t2 = l.rfind('\t');
    if (t1 == std::string::npos || t1 == t2) throw DataError("bad impression line: " + l);
    const std::string clicked = l.substr(t2 + 1);
    if (clicked != "0" && clicked != "1") throw DataError("clicked must be 0 or 1: " + l);
    c.impressions.push_back({l.substr(0, t1), l.substr(t1 + 1, t2 - t1 - 1), clicked == "1"});
  }
  c.reindex();
  for (const auto& imp : c.impressions) {
    c.query(imp.query_id);
    c.ad(imp.ad_id);
  }
  return c;
}

}  // namespace cma
