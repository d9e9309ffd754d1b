#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cma/error.hpp"

namespace cma {

struct GbdtConfig {
  int num_trees = 200;
  int max_depth = 3;
  double learning_rate = 0.1;
  int min_samples_leaf = 20;
  double lambda = 1.0;
  std::uint64_t seed = 0;  // training is fully deterministic; kept for provenance
  friend bool operator==(const GbdtConfig&, const GbdtConfig&) = default;
};

inline void validate(const GbdtConfig& c) {
  if (c.num_trees < 0) throw ConfigError("num_trees must be >= 0");
  if (c.max_depth < 1) throw ConfigError("max_depth must be >= 1");
  if (!(c.learning_rate > 0)) throw ConfigError("gbdt learning_rate must be > 0");
  if (c.min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be >= 1");
  if (!(c.lambda >= 0)) throw ConfigError("lambda must be >= 0");
}

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1;
  int right = -1;
  double value = 0;
  bool is_leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Binary regression tree, root at index 0. x[feature] < threshold goes left.
struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }

  int depth(int i = 0) const {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    return n.is_leaf() ? 0 : 1 + std::max(depth(n.left), depth(n.right));
  }

  /// Same splits, ignoring leaf values.
  bool same_structure(const RegressionTree& o) const {
    if (nodes.size() != o.nodes.size()) return false;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto &a = nodes[i], &b = o.nodes[i];
      if (a.feature != b.feature || a.left != b.left || a.right != b.right) return false;
      if (!a.is_leaf() && a.threshold != b.threshold) return false;
    }
    return true;
  }
  /// Renumbers nodes in pre-order (node, left subtree, right subtree), the
  /// order the model file uses.
  void canonicalize() {
    std::vector<TreeNode> out;
    out.reserve(nodes.size());
    auto visit = [&](auto&& self, int i) -> int {
      const int id = static_cast<int>(out.size());
      out.push_back(nodes[static_cast<std::size_t>(i)]);
      if (!out.back().is_leaf()) {
        const int l = self(self, nodes[static_cast<std::size_t>(i)].left);
        const int r = self(self, nodes[static_cast<std::size_t>(i)].right);
        out[static_cast<std::size_t>(id)].left = l;
        out[static_cast<std::size_t>(id)].right = r;
      }
      return id;
    };
    visit(visit, 0);
    nodes = std::move(out);
  }

  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

struct GbdtModel {
  GbdtConfig config;
  std::size_t num_features = 0;
  double base_score = 0;
  std::vector<RegressionTree> trees;
  /// Set when training saw a single class and returned a base-score-only model.
  bool degenerate = false;
  friend bool operator==(const GbdtModel&, const GbdtModel&) = default;
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double gbdt_margin(const GbdtModel& m, std::span<const double> x) {
  if (x.size() != m.num_features)
    throw FeatureError("expected " + std::to_string(m.num_features) + " features, got " + std::to_string(x.size()));
  double s = 0;
  for (const auto& t : m.trees) s += t.predict(x);
  return m.base_score + m.config.learning_rate * s;
}

inline double gbdt_predict(const GbdtModel& m, std::span<const double> x) { return sigmoid(gbdt_margin(m, x)); }

namespace detail {

struct SplitCandidate {
  double gain = 0;
  int feature = -1;
  double threshold = 0;
};

inline double leaf_value(double g, double h, double lambda) { return -g / (h + lambda); }
inline double score(double g, double h, double lambda) { return g * g / (h + lambda); }

}  // namespace detail

/// Logistic-loss boosting. Each round fits a tree level by level with exact
/// greedy split search over presorted features; gain is
/// GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l), leaves take Newton values
/// -G/(H+l). Ties go to the lowest feature index, then the lowest threshold.
inline GbdtModel gbdt_train(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                            const GbdtConfig& config) {
  validate(config);
  if (X.size() != y.size()) throw DataError("feature and label counts differ");
  if (X.size() < 2 * static_cast<std::size_t>(config.min_samples_leaf))
    throw DataError("need at least 2 * min_samples_leaf training rows");
  const std::size_t n = X.size(), F = X.front().size();
  for (const auto& row : X)
    if (row.size() != F) throw FeatureError("ragged feature matrix");
  std::size_t positives = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw DataError("labels must be 0 or 1");
    positives += static_cast<std::size_t>(v);
  }

  GbdtModel model;
  model.config = config;
  model.num_features = F;
  const double rate = std::clamp(static_cast<double>(positives) / static_cast<double>(n), 1e-9, 1 - 1e-9);
  model.base_score = std::log(rate / (1 - rate));
  if (positives == 0 || positives == n) {
    model.degenerate = true;
    return model;
  }

  std::vector<std::vector<std::uint32_t>> sorted(F);
  for (std::size_t f = 0; f < F; ++f) {
    auto& idx = sorted[f];
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0u);
    std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) { return X[a][f] < X[b][f]; });
  }

  const double lambda = config.lambda;
  const auto min_leaf = static_cast<std::size_t>(config.min_samples_leaf);
  std::vector<double> margin(n, model.base_score), g(n), h(n);
  std::vector<int> node_of(n);

  for (int round = 0; round < config.num_trees; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(margin[i]);
      g[i] = p - y[i];
      h[i] = p * (1 - p);
    }
    RegressionTree tree;
    tree.nodes.push_back({});
    std::fill(node_of.begin(), node_of.end(), 0);
    std::vector<int> frontier = {0};

    for (int depth = 0; depth < config.max_depth && !frontier.empty(); ++depth) {
      // Per-frontier-node totals.
      std::vector<int> slot(tree.nodes.size(), -1);
      for (std::size_t s = 0; s < frontier.size(); ++s) slot[static_cast<std::size_t>(frontier[s])] = static_cast<int>(s);
      const std::size_t m = frontier.size();
      std::vector<double> G(m, 0), H(m, 0);
      std::vector<std::size_t> C(m, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const int s = node_of[i] >= 0 ? slot[static_cast<std::size_t>(node_of[i])] : -1;
        if (s < 0) continue;
        G[static_cast<std::size_t>(s)] += g[i];
        H[static_cast<std::size_t>(s)] += h[i];
        ++C[static_cast<std::size_t>(s)];
      }
      std::vector<detail::SplitCandidate> best(m);
      std::vector<double> gl(m), hl(m), last(m);
      std::vector<std::size_t> cl(m);
      for (std::size_t f = 0; f < F; ++f) {
        std::fill(gl.begin(), gl.end(), 0.0);
        std::fill(hl.begin(), hl.end(), 0.0);
        std::fill(cl.begin(), cl.end(), 0);
        for (std::uint32_t i : sorted[f]) {
          const int s0 = node_of[i] >= 0 ? slot[static_cast<std::size_t>(node_of[i])] : -1;
          if (s0 < 0) continue;
          const auto s = static_cast<std::size_t>(s0);
          const double v = X[i][f];
          // Candidate boundary between the previous value and this one.
          if (cl[s] >= min_leaf && C[s] - cl[s] >= min_leaf && v > last[s]) {
            const double gain = detail::score(gl[s], hl[s], lambda) +
                                detail::score(G[s] - gl[s], H[s] - hl[s], lambda) - detail::score(G[s], H[s], lambda);
            if (gain > best[s].gain + 1e-12) {
              double thr = last[s] + (v - last[s]) / 2;
              if (!(thr > last[s])) thr = v;
              best[s] = {gain, static_cast<int>(f), thr};
            }
          }
          gl[s] += g[i];
          hl[s] += h[i];
          ++cl[s];
          last[s] = v;
        }
      }
      std::vector<int> next;
      for (std::size_t s = 0; s < m; ++s) {
        const int id = frontier[s];
        if (best[s].feature < 0) {
          tree.nodes[static_cast<std::size_t>(id)].value = detail::leaf_value(G[s], H[s], lambda);
          continue;
        }
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        tree.nodes.push_back({});
        auto& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = best[s].feature;
        node.threshold = best[s].threshold;
        node.left = left;
        node.right = left + 1;
        next.push_back(left);
        next.push_back(left + 1);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const int id = node_of[i];
        if (id < 0) continue;
        const auto& node = tree.nodes[static_cast<std::size_t>(id)];
        if (node.is_leaf()) {
          node_of[i] = -1;  // settled
          continue;
        }
        node_of[i] = X[i][static_cast<std::size_t>(node.feature)] < node.threshold ? node.left : node.right;
      }
      frontier = std::move(next);
    }
    // Remaining frontier nodes become leaves at max depth.
    if (!frontier.empty()) {
      std::vector<double> G(tree.nodes.size(), 0), H(tree.nodes.size(), 0);
      for (std::size_t i = 0; i < n; ++i)
        if (node_of[i] >= 0) {
          G[static_cast<std::size_t>(node_of[i])] += g[i];
          H[static_cast<std::size_t>(node_of[i])] += h[i];
        }
      for (int id : frontier)
        tree.nodes[static_cast<std::size_t>(id)].value =
            detail::leaf_value(G[static_cast<std::size_t>(id)], H[static_cast<std::size_t>(id)], lambda);
    }
    for (std::size_t i = 0; i < n; ++i) margin[i] += config.learning_rate * tree.predict(X[i]);
    tree.canonicalize();
    model.trees.push_back(std::move(tree));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Model file: line-oriented header, then one s-expression per tree:
//   (split <feature> <threshold> <left> <right>) | (leaf <value>)
// Reals are printed with 17 significant digits so a reload is exact.

namespace detail {

inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_node(const RegressionTree& t, int i, std::string& out) {
  const auto& n = t.nodes[static_cast<std::size_t>(i)];
  if (n.is_leaf()) {
    out += "(leaf " + fmt_real(n.value) + ")";
    return;
  }
  out += "(split " + std::to_string(n.feature) + " " + fmt_real(n.threshold) + " ";
  write_node(t, n.left, out);
  out += " ";
  write_node(t, n.right, out);
  out += ")";
}

class SexprReader {
 public:
  explicit SexprReader(const std::string& s) : s_(s) {}

  int read_node(RegressionTree& t) {
    expect('(');
    const std::string kind = word();
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.push_back({});
    if (kind == "leaf") {
      t.nodes[static_cast<std::size_t>(id)].value = real();
    } else if (kind == "split") {
      const int f = static_cast<int>(real());
      const double thr = real();
      const int l = read_node(t);
      const int r = read_node(t);
      auto& n = t.nodes[static_cast<std::size_t>(id)];
      n.feature = f;
      n.threshold = thr;
      n.left = l;
      n.right = r;
    } else {
      throw DataError("unknown tree node kind " + kind);
    }
    expect(')');
    return id;
  }

 private:
  void skip() {
    while (p_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[p_]))) ++p_;
  }
  void expect(char c) {
    skip();
    if (p_ >= s_.size() || s_[p_] != c) throw DataError(std::string("malformed tree: expected '") + c + "'");
    ++p_;
  }
  std::string word() {
    skip();
    const std::size_t b = p_;
    while (p_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[p_])) && s_[p_] != '(' && s_[p_] != ')') ++p_;
    if (b == p_) throw DataError("malformed tree: expected token");
    return s_.substr(b, p_ - b);
  }
  double real() {
    const std::string w = word();
    try {
      return std::stod(w);
    } catch (const std::logic_error&) {
      throw DataError("malformed number " + w);
    }
  }
  const std::string& s_;
  std::size_t p_ = 0;
};

}  // namespace detail

inline std::string serialize_gbdt(const GbdtModel& m) {
  std::string out = "gbdt 1\n";
  out += "num_features " + std::to_string(m.num_features) + "\n";
  out += "base_score " + detail::fmt_real(m.base_score) + "\n";
  out += "learning_rate " + detail::fmt_real(m.config.learning_rate) + "\n";
  out += "max_depth " + std::to_string(m.config.max_depth) + "\n";
  out += "min_samples_leaf " + std::to_string(m.config.min_samples_leaf) + "\n";
  out += "lambda " + detail::fmt_real(m.config.lambda) + "\n";
  out += "seed " + std::to_string(m.config.seed) + "\n";
  out += "degenerate " + std::string(m.degenerate ? "1" : "0") + "\n";
  out += "num_trees " + std::to_string(m.trees.size()) + "\n";
  for (const auto& t : m.trees) {
    detail::write_node(t, 0, out);
    out += "\n";
  }
  return out;
}

inline GbdtModel parse_gbdt(const std::string& text) {
  std::istringstream in(text);
  GbdtModel m;
  auto field = [&](const char* key) {
    std::string k, v;
    if (!(in >> k >> v) || k != key) throw DataError(std::string("gbdt model file: expected ") + key);
    return v;
  };
  try {
    if (field("gbdt") != "1") throw DataError("unsupported gbdt model version");
    m.num_features = std::stoul(field("num_features"));
    m.base_score = std::stod(field("base_score"));
    m.config.learning_rate = std::stod(field("learning_rate"));
    m.config.max_depth = std::stoi(field("max_depth"));
    m.config.min_samples_leaf = std::stoi(field("min_samples_leaf"));
    m.config.lambda = std::stod(field("lambda"));
    m.config.seed = std::stoull(field("seed"));
    m.degenerate = field("degenerate") == "1";
    m.config.num_trees = std::stoi(field("num_trees"));
  } catch (const std::logic_error&) {
    throw DataError("malformed gbdt model header");
  }
  std::string line;
  std::getline(in, line);
  for (int i = 0; i < m.config.num_trees; ++i) {
    if (!std::getline(in, line)) throw DataError("gbdt model file truncated");
    RegressionTree t;
    detail::SexprReader(line).read_node(t);
    for (const auto& n : t.nodes)
      if (!n.is_leaf() && (n.feature < 0 || static_cast<std::size_t>(n.feature) >= m.num_features))
        throw DataError("tree references unknown feature");
    m.trees.push_back(std::move(t));
  }
  return m;
}

}  // namespace cma
