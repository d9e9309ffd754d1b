#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "cma/error.hpp"
#include "cma/rng.hpp"
#include "cma/textprep.hpp"

namespace cma {

using CategoryId = std::uint32_t;

/// Generator settings for the synthetic taxonomy and corpus.
struct SynthConfig {
  std::uint64_t seed = 17;
  int taxonomy_depth = 3;
  int branching_factor = 4;
  int leaf_vocab_size = 40;
  /// Words owned by each non-root internal node; leaves inherit them.
  int internal_vocab_size = 10;
  int num_queries = 20000;
  int num_ads = 6000;
  double query_zipf_exponent = 1.0;
  int impression_count = 49000;
  int top_k = 3;
  double cross_category_impression_rate = 0.3;
  /// Token source mixture for generated text: leaf-own words, shared stop
  /// words, and the remainder split evenly across non-root ancestors.
  double leaf_word_prob = 0.6;
  double stop_word_prob = 0.1;
  double click_prob_same = 0.1;
  double click_prob_cross = 0.02;
};

struct CategoryNode {
  CategoryId id = 0;
  std::optional<CategoryId> parent;
  int depth = 0;
  Tokens vocab;
  std::vector<CategoryId> children;
};

class Taxonomy {
 public:
  Taxonomy() = default;
  explicit Taxonomy(std::vector<CategoryNode> nodes) : nodes_(std::move(nodes)) { index(); }

  const std::vector<CategoryNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  CategoryId root() const { return 0; }
  const std::vector<CategoryId>& leaves() const { return leaves_; }
  int max_depth() const { return max_depth_; }

  const CategoryNode& node(CategoryId id) const {
    if (id >= nodes_.size()) throw LookupError("unknown category id " + std::to_string(id));
    return nodes_[id];
  }
  int depth(CategoryId id) const { return node(id).depth; }
  bool is_leaf(CategoryId id) const { return node(id).children.empty(); }

  /// Position of a leaf within leaves(); used for one-hot encodings.
  std::size_t leaf_index(CategoryId id) const {
    if (!is_leaf(id)) throw LookupError("category " + std::to_string(id) + " is not a leaf");
    return leaf_pos_[id];
  }

  CategoryId ancestor_at_depth(CategoryId id, int d) const {
    CategoryId cur = id;
    while (node(cur).depth > d) cur = *nodes_[cur].parent;
    return cur;
  }

  /// Depth of the deepest common ancestor.
  int lca_depth(CategoryId a, CategoryId b) const {
    int da = depth(a), db = depth(b);
    while (da > db) {
      a = *nodes_[a].parent;
      --da;
    }
    while (db > da) {
      b = *nodes_[b].parent;
      --db;
    }
    while (a != b) {
      a = *nodes_[a].parent;
      b = *nodes_[b].parent;
      --da;
    }
    return da;
  }

  /// Own words of the leaf followed by those of its non-root ancestors.
  Tokens effective_vocab(CategoryId leaf) const {
    Tokens v = node(leaf).vocab;
    for (CategoryId cur = leaf; nodes_[cur].parent && *nodes_[cur].parent != root();) {
      cur = *nodes_[cur].parent;
      v.insert(v.end(), nodes_[cur].vocab.begin(), nodes_[cur].vocab.end());
    }
    return v;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& n : nodes_) {
      out += std::to_string(n.id);
      out += '\t';
      out += n.parent ? std::to_string(*n.parent) : std::string("-");
      out += '\t';
      out += std::to_string(n.depth);
      out += '\t';
      out += join_tokens(n.vocab);
      out += '\n';
    }
    return out;
  }

  static Taxonomy parse(const std::string& text) {
    std::vector<CategoryNode> nodes;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::size_t i = 0;
      for (int k = 0; k < 3; ++k) {
        std::size_t j = line.find('\t', i);
        if (j == std::string::npos) throw DataError("taxonomy line needs 4 tab-separated fields: " + line);
        f.push_back(line.substr(i, j - i));
        i = j + 1;
      }
      f.push_back(line.substr(i));
      CategoryNode n;
      try {
        n.id = static_cast<CategoryId>(std::stoul(f[0]));
        if (f[1] != "-") n.parent = static_cast<CategoryId>(std::stoul(f[1]));
        n.depth = std::stoi(f[2]);
      } catch (const std::logic_error&) {
        throw DataError("malformed taxonomy line: " + line);
      }
      n.vocab = split_tokens(f[3]);
      if (n.id != nodes.size()) throw DataError("taxonomy ids must be dense and ordered");
      nodes.push_back(std::move(n));
    }
    return Taxonomy(std::move(nodes));
  }

 private:
  void index() {
    if (nodes_.empty()) throw DataError("empty taxonomy");
    leaves_.clear();
    max_depth_ = 0;
    for (auto& n : nodes_) n.children.clear();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      if (n.id != i) throw DataError("taxonomy ids must be dense");
      if (i == 0) {
        if (n.parent || n.depth != 0) throw DataError("node 0 must be the root at depth 0");
        continue;
      }
      if (!n.parent) throw DataError("multiple roots");
      // Parents precede children, so the structure is acyclic.
      if (*n.parent >= i) throw DataError("parent must precede child");
      if (n.depth != nodes_[*n.parent].depth + 1) throw DataError("inconsistent depth at node " + std::to_string(i));
      nodes_[*n.parent].children.push_back(n.id);
    }
    leaf_pos_.assign(nodes_.size(), 0);
    for (const auto& n : nodes_) {
      max_depth_ = std::max(max_depth_, n.depth);
      if (n.children.empty()) {
        leaf_pos_[n.id] = leaves_.size();
        leaves_.push_back(n.id);
      }
    }
    if (leaves_.size() < 2) throw DataError("taxonomy needs at least 2 leaves");
  }

  std::vector<CategoryNode> nodes_;
  std::vector<CategoryId> leaves_;
  std::vector<std::size_t> leaf_pos_;
  int max_depth_ = 0;
};

inline int lca_depth(const Taxonomy& t, CategoryId a, CategoryId b) { return t.lca_depth(a, b); }

namespace detail {

inline const Tokens& stop_words() {
  static const Tokens kStop = {"best", "buy", "cheap", "online", "free", "new", "top", "sale", "near", "me",
                               "for", "the", "and", "with", "in", "of", "to", "deals", "shop", "2024"};
  return kStop;
}

// Pronounceable pseudo-word of 2-4 consonant-vowel syllables.
inline std::string pseudo_word(Rng& rng) {
  static constexpr char kCons[] = "bcdfghjklmnprstvwz";
  static constexpr char kVow[] = "aeiou";
  std::string w;
  const int syllables = rng.between(2, 4);
  for (int s = 0; s < syllables; ++s) {
    w.push_back(kCons[rng.below(sizeof(kCons) - 1)]);
    w.push_back(kVow[rng.below(sizeof(kVow) - 1)]);
  }
  if (rng.bernoulli(0.3)) w.push_back(kCons[rng.below(sizeof(kCons) - 1)]);
  return w;
}

}  // namespace detail

inline void validate(const SynthConfig& c) {
  if (c.taxonomy_depth < 1) throw ConfigError("taxonomy_depth must be >= 1");
  if (c.branching_factor < 2) throw ConfigError("branching_factor must be >= 2");
  if (c.leaf_vocab_size < 1) throw ConfigError("leaf_vocab_size must be positive");
  if (c.internal_vocab_size < 0) throw ConfigError("internal_vocab_size must be non-negative");
  if (c.num_queries < 1 || c.num_ads < 1 || c.impression_count < 1) throw ConfigError("counts must be positive");
  if (!(c.query_zipf_exponent > 0)) throw ConfigError("query_zipf_exponent must be > 0");
  if (c.top_k < 1) throw ConfigError("top_k must be >= 1");
  if (!(c.cross_category_impression_rate >= 0 && c.cross_category_impression_rate <= 1))
    throw ConfigError("cross_category_impression_rate must lie in [0,1]");
  if (!(c.leaf_word_prob >= 0 && c.stop_word_prob >= 0 && c.leaf_word_prob + c.stop_word_prob <= 1))
    throw ConfigError("token mixture probabilities must be non-negative and sum to <= 1");
  if (c.taxonomy_depth > 12) throw ConfigError("taxonomy_depth too large");
  double leaves = std::pow(static_cast<double>(c.branching_factor), c.taxonomy_depth);
  if (leaves > 1e6) throw ConfigError("taxonomy too large");
  // Non-sibling leaves share only ancestors at depth <= depth-2.
  const double shared = static_cast<double>(c.internal_vocab_size) * std::max(0, c.taxonomy_depth - 2);
  const double total = c.leaf_vocab_size + static_cast<double>(c.internal_vocab_size) * (c.taxonomy_depth - 1);
  if (shared >= 0.5 * total) throw ConfigError("internal vocabularies too large relative to leaf vocabularies");
}

/// Complete tree, breadth-first ids, root 0. Vocabularies are unique pseudo
/// words drawn from the seed in node order.
inline Taxonomy build_taxonomy(const SynthConfig& config) {
  validate(config);
  Rng rng(derive_seed(config.seed, "taxonomy"));
  std::unordered_set<std::string> used(detail::stop_words().begin(), detail::stop_words().end());
  auto fresh_words = [&](int count) {
    Tokens out;
    while (static_cast<int>(out.size()) < count) {
      std::string w = detail::pseudo_word(rng);
      if (used.insert(w).second) out.push_back(std::move(w));
    }
    return out;
  };

  std::vector<CategoryNode> nodes;
  nodes.push_back(CategoryNode{0, std::nullopt, 0, {}, {}});
  std::size_t level_begin = 0, level_end = 1;
  for (int d = 1; d <= config.taxonomy_depth; ++d) {
    const bool leaf_level = d == config.taxonomy_depth;
    for (std::size_t p = level_begin; p < level_end; ++p) {
      for (int b = 0; b < config.branching_factor; ++b) {
        CategoryNode n;
        n.id = static_cast<CategoryId>(nodes.size());
        n.parent = static_cast<CategoryId>(p);
        n.depth = d;
        n.vocab = fresh_words(leaf_level ? config.leaf_vocab_size : config.internal_vocab_size);
        nodes.push_back(std::move(n));
      }
    }
    level_begin = level_end;
    level_end = nodes.size();
  }
  return Taxonomy(std::move(nodes));
}

}  // namespace cma
