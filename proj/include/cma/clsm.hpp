#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cma/error.hpp"
#include "cma/rng.hpp"
#include "cma/sha256.hpp"
#include "cma/textprep.hpp"

namespace cma {

struct ClsmConfig {
  std::uint32_t trigram_dim = kTrigramDim;
  std::uint32_t window_n = 3;
  std::uint32_t conv_units = 128;
  std::uint32_t semantic_dim = 64;
  double gamma = 10.0;
  int negatives = 4;
  double learning_rate = 0.05;
  int epochs = 5;
  int minibatch_size = 256;
  bool use_bias = true;
  std::uint64_t seed = 1;
};

inline void validate(const ClsmConfig& c) {
  if (c.trigram_dim != kTrigramDim) throw ConfigError("trigram_dim must be " + std::to_string(kTrigramDim));
  if (c.window_n == 0 || c.window_n % 2 == 0) throw ConfigError("window_n must be odd");
  if (c.conv_units == 0 || c.semantic_dim == 0) throw ConfigError("layer sizes must be positive");
  if (!(c.gamma > 0) || !std::isfinite(c.gamma)) throw ConfigError("gamma must be > 0");
  if (c.negatives < 1) throw ConfigError("negatives must be >= 1");
  if (!(c.learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (c.minibatch_size <= c.negatives) throw ConfigError("minibatch_size must exceed the number of negatives");
}

/// Convolution + max-pool + semantic layer weights.
///
/// `conv` is stored column-major (one contiguous run of K weights per input
/// coordinate) so a sparse input touches only the columns it names. The model
/// file stores it row-major as K x (window_n * trigram_dim).
template <typename Real>
class BasicClsmModel {
 public:
  ClsmConfig config;
  std::vector<Real> conv;       // [input_dim][K]
  std::vector<Real> conv_bias;  // [K]
  std::vector<Real> sem;        // [L][K]
  std::vector<Real> sem_bias;   // [L]

  BasicClsmModel() = default;
  explicit BasicClsmModel(const ClsmConfig& c)
      : config(c),
        conv(static_cast<std::size_t>(c.window_n) * c.trigram_dim * c.conv_units, Real(0)),
        conv_bias(c.conv_units, Real(0)),
        sem(static_cast<std::size_t>(c.semantic_dim) * c.conv_units, Real(0)),
        sem_bias(c.semantic_dim, Real(0)) {}

  std::size_t units() const { return config.conv_units; }
  std::size_t dim() const { return config.semantic_dim; }
  std::size_t input_dim() const { return static_cast<std::size_t>(config.window_n) * config.trigram_dim; }

  Real& wc(std::size_t k, std::size_t col) { return conv[col * units() + k]; }
  Real wc(std::size_t k, std::size_t col) const { return conv[col * units() + k]; }
  Real& ws(std::size_t l, std::size_t k) { return sem[l * units() + k]; }
  Real ws(std::size_t l, std::size_t k) const { return sem[l * units() + k]; }

  /// Glorot-uniform weights in [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero biases.
  static BasicClsmModel initialized(const ClsmConfig& c) {
    validate(c);
    BasicClsmModel m(c);
    Rng rng(derive_seed(c.seed, "clsm-init"));
    const double s_conv = std::sqrt(6.0 / static_cast<double>(m.input_dim() + m.units()));
    for (auto& w : m.conv) w = static_cast<Real>(rng.uniform(-s_conv, s_conv));
    const double s_sem = std::sqrt(6.0 / static_cast<double>(m.units() + m.dim()));
    for (auto& w : m.sem) w = static_cast<Real>(rng.uniform(-s_sem, s_sem));
    return m;
  }

  template <typename Other>
  BasicClsmModel<Other> cast() const {
    BasicClsmModel<Other> o;
    o.config = config;
    o.conv.assign(conv.begin(), conv.end());
    o.conv_bias.assign(conv_bias.begin(), conv_bias.end());
    o.sem.assign(sem.begin(), sem.end());
    o.sem_bias.assign(sem_bias.begin(), sem_bias.end());
    return o;
  }

  bool operator==(const BasicClsmModel& o) const {
    return conv == o.conv && conv_bias == o.conv_bias && sem == o.sem && sem_bias == o.sem_bias &&
           config.window_n == o.config.window_n && config.gamma == o.config.gamma;
  }
};

using ClsmModel = BasicClsmModel<float>;

struct Embedding {
  std::vector<double> y;
};

namespace detail {
inline std::atomic<std::uint64_t>& embed_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}
}  // namespace detail

/// Number of text forward passes since process start; instrumentation only.
inline std::uint64_t embed_call_count() { return detail::embed_counter().load(std::memory_order_relaxed); }

/// Pooled and output activations of one text, kept for backprop.
struct TextActivations {
  std::vector<double> pooled;
  std::vector<std::uint32_t> argmax;  // winning position per unit; lowest index on ties
  std::vector<double> y;
};

/// Per-position convolution outputs h_t = tanh(Wc x_t + bc).
template <typename Real>
std::vector<std::vector<double>> conv_activations(const BasicClsmModel<Real>& m, const WindowedSequence& seq) {
  const std::size_t K = m.units();
  std::vector<std::vector<double>> h(seq.slots.size(), std::vector<double>(K));
  for (std::size_t t = 0; t < seq.slots.size(); ++t) {
    auto& z = h[t];
    for (std::size_t k = 0; k < K; ++k) z[k] = m.conv_bias[k];
    for (const auto& e : seq.slots[t]) {
      if (e.index >= m.input_dim()) throw EncodingError("input index outside model input space");
      const Real* col = &m.conv[static_cast<std::size_t>(e.index) * K];
      const double cnt = e.count;
      for (std::size_t k = 0; k < K; ++k) z[k] += cnt * col[k];
    }
    for (auto& v : z) v = std::tanh(v);
  }
  return h;
}

template <typename Real>
TextActivations forward(const BasicClsmModel<Real>& m, const WindowedSequence& seq) {
  if (seq.slots.empty()) throw EmbeddingError("empty token list");
  if (seq.window_n != m.config.window_n) throw EmbeddingError("window size does not match model");
  detail::embed_counter().fetch_add(1, std::memory_order_relaxed);
  const std::size_t K = m.units(), L = m.dim();
  TextActivations a;
  a.pooled.assign(K, 0.0);
  a.argmax.assign(K, 0);
  std::vector<double> z(K);
  for (std::size_t t = 0; t < seq.slots.size(); ++t) {
    for (std::size_t k = 0; k < K; ++k) z[k] = m.conv_bias[k];
    for (const auto& e : seq.slots[t]) {
      if (e.index >= m.input_dim()) throw EncodingError("input index outside model input space");
      const Real* col = &m.conv[static_cast<std::size_t>(e.index) * K];
      const double cnt = e.count;
      for (std::size_t k = 0; k < K; ++k) z[k] += cnt * col[k];
    }
    for (std::size_t k = 0; k < K; ++k) {
      const double h = std::tanh(z[k]);
      if (t == 0 || h > a.pooled[k]) {
        a.pooled[k] = h;
        a.argmax[k] = static_cast<std::uint32_t>(t);
      }
    }
  }
  a.y.assign(L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    double s = m.sem_bias[l];
    const Real* row = &m.sem[l * K];
    for (std::size_t k = 0; k < K; ++k) s += row[k] * a.pooled[k];
    a.y[l] = std::tanh(s);
  }
  return a;
}

template <typename Real>
Embedding embed(const BasicClsmModel<Real>& m, const Tokens& tokens) {
  if (tokens.empty()) throw EmbeddingError("empty token list");
  const Tokens* use = &tokens;
  Tokens truncated;
  if (tokens.size() > kMaxTokens) {
    truncated.assign(tokens.begin(), tokens.begin() + kMaxTokens);
    use = &truncated;
  }
  return Embedding{forward(m, window(*use, m.config.window_n)).y};
}

/// Cosine similarity; 0 when either vector is zero.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 0.0;
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

template <typename Real>
double relevance(const BasicClsmModel<Real>& m, const Tokens& query, const Tokens& doc) {
  if (query.empty() || doc.empty()) throw EmbeddingError("relevance needs nonempty texts");
  return cosine(embed(m, query).y, embed(m, doc).y);
}

/// Softmax posterior of the positive among {positive} and negatives, smoothed by gamma.
inline double posterior(double positive, std::span<const double> negatives, double gamma) {
  double mx = gamma * positive;
  for (double r : negatives) mx = std::max(mx, gamma * r);
  double denom = std::exp(gamma * positive - mx);
  const double num = denom;
  for (double r : negatives) denom += std::exp(gamma * r - mx);
  return num / denom;
}

/// Gradient with the shapes of the model. The convolution block is kept
/// sparse: only columns touched by some input are materialized.
class ClsmGradient {
 public:
  ClsmGradient(std::size_t K, std::size_t L) : K_(K), conv_bias(K, 0.0), sem(L * K, 0.0), sem_bias(L, 0.0) {}

  std::size_t units() const { return K_; }

  std::span<double> conv_column(std::uint32_t col) {
    auto [it, inserted] = pos_.try_emplace(col, cols_.size());
    if (inserted) {
      cols_.push_back(col);
      conv_.resize(conv_.size() + K_, 0.0);
    }
    return {conv_.data() + it->second * K_, K_};
  }

  /// Zero for untouched columns.
  double conv_at(std::size_t k, std::uint32_t col) const {
    auto it = pos_.find(col);
    return it == pos_.end() ? 0.0 : conv_[it->second * K_ + k];
  }

  std::vector<std::uint32_t> touched_columns() const {
    auto c = cols_;
    std::sort(c.begin(), c.end());
    return c;
  }

  void clear_conv() {
    pos_.clear();
    cols_.clear();
    conv_.clear();
  }

 private:
  std::size_t K_;
  std::unordered_map<std::uint32_t, std::size_t> pos_;
  std::vector<std::uint32_t> cols_;
  std::vector<double> conv_;

 public:
  std::vector<double> conv_bias;
  std::vector<double> sem;
  std::vector<double> sem_bias;
};

template <typename Real>
void backward(const BasicClsmModel<Real>& m, const WindowedSequence& seq, const TextActivations& a,
              std::span<const double> dy, ClsmGradient& g) {
  const std::size_t K = m.units(), L = m.dim();
  std::vector<double> dv(K, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    const double dz = dy[l] * (1.0 - a.y[l] * a.y[l]);
    if (dz == 0) continue;
    if (m.config.use_bias) g.sem_bias[l] += dz;
    double* grow = &g.sem[l * K];
    const Real* wrow = &m.sem[l * K];
    for (std::size_t k = 0; k < K; ++k) {
      grow[k] += dz * a.pooled[k];
      dv[k] += dz * wrow[k];
    }
  }
  // Max-pool routes each unit's gradient to its winning position only.
  std::vector<double> dz_conv(K);
  for (std::size_t k = 0; k < K; ++k) dz_conv[k] = dv[k] * (1.0 - a.pooled[k] * a.pooled[k]);
  if (m.config.use_bias)
    for (std::size_t k = 0; k < K; ++k) g.conv_bias[k] += dz_conv[k];
  for (std::size_t t = 0; t < seq.slots.size(); ++t) {
    bool wins = false;
    for (std::size_t k = 0; k < K && !wins; ++k) wins = a.argmax[k] == t && dz_conv[k] != 0;
    if (!wins) continue;
    for (const auto& e : seq.slots[t]) {
      auto col = g.conv_column(e.index);
      const double cnt = e.count;
      for (std::size_t k = 0; k < K; ++k)
        if (a.argmax[k] == t) col[k] += cnt * dz_conv[k];
    }
  }
}

/// One training example over a pool of texts: indices into that pool.
struct PoolExample {
  std::size_t query;
  std::size_t positive;
  std::vector<std::size_t> negatives;
};

namespace detail {

// d cos(a,b) / da, accumulated into out with the given scale.
inline void add_cosine_grad(std::span<const double> a, std::span<const double> b, double scale, std::span<double> out) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return;
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double c = ab / (na * nb);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += scale * (b[i] / (na * nb) - c * a[i] / aa);
}

}  // namespace detail

/// Summed -log posterior over the examples; fills `grad` when given.
template <typename Real>
double pool_loss(const BasicClsmModel<Real>& m, std::span<const WindowedSequence* const> texts,
                 std::span<const PoolExample> examples, ClsmGradient* grad) {
  const double gamma = m.config.gamma;
  std::vector<TextActivations> acts(texts.size());
  std::vector<char> needed(texts.size(), 0);
  for (const auto& ex : examples) {
    needed[ex.query] = needed[ex.positive] = 1;
    for (auto j : ex.negatives) needed[j] = 1;
  }
  for (std::size_t i = 0; i < texts.size(); ++i)
    if (needed[i]) acts[i] = forward(m, *texts[i]);

  const std::size_t L = m.dim();
  std::vector<std::vector<double>> dy;
  if (grad) dy.assign(texts.size(), std::vector<double>(L, 0.0));

  double loss = 0;
  std::vector<double> scores;
  for (const auto& ex : examples) {
    const auto& yq = acts[ex.query].y;
    scores.clear();
    scores.push_back(cosine(yq, acts[ex.positive].y));
    for (auto j : ex.negatives) scores.push_back(cosine(yq, acts[j].y));
    double mx = -std::numeric_limits<double>::infinity();
    for (double s : scores) mx = std::max(mx, gamma * s);
    double denom = 0;
    for (double s : scores) denom += std::exp(gamma * s - mx);
    loss += -(gamma * scores[0] - mx) + std::log(denom);
    if (!grad) continue;
    // dL/dR_i = gamma * (P_i - [i is positive]).
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double p = std::exp(gamma * scores[i] - mx) / denom;
      const double dr = gamma * (p - (i == 0 ? 1.0 : 0.0));
      const std::size_t d = i == 0 ? ex.positive : ex.negatives[i - 1];
      detail::add_cosine_grad(yq, acts[d].y, dr, dy[ex.query]);
      detail::add_cosine_grad(acts[d].y, yq, dr, dy[d]);
    }
  }
  if (grad)
    for (std::size_t i = 0; i < texts.size(); ++i)
      if (needed[i]) backward(m, *texts[i], acts[i], dy[i], *grad);
  return loss;
}

struct TrainingExample {
  Tokens query;
  Tokens positive;
  std::vector<Tokens> negatives;
};

namespace detail {

struct PreparedBatch {
  std::vector<WindowedSequence> seqs;
  std::vector<PoolExample> examples;
};

inline PreparedBatch prepare_batch(const std::vector<TrainingExample>& batch, std::size_t n) {
  PreparedBatch p;
  auto add = [&](const Tokens& t) {
    if (t.empty()) throw EmbeddingError("empty token list in batch");
    Tokens use(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(std::min(t.size(), kMaxTokens)));
    p.seqs.push_back(window(use, n));
    return p.seqs.size() - 1;
  };
  for (const auto& ex : batch) {
    PoolExample pe;
    pe.query = add(ex.query);
    pe.positive = add(ex.positive);
    for (const auto& neg : ex.negatives) pe.negatives.push_back(add(neg));
    p.examples.push_back(std::move(pe));
  }
  return p;
}

inline std::vector<const WindowedSequence*> pointers(const std::vector<WindowedSequence>& v) {
  std::vector<const WindowedSequence*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

}  // namespace detail

/// Exact gradient of the summed batch loss.
template <typename Real>
ClsmGradient grad(const BasicClsmModel<Real>& m, const std::vector<TrainingExample>& batch, double* loss = nullptr) {
  if (batch.empty()) throw TrainingError("empty batch");
  auto prepared = detail::prepare_batch(batch, m.config.window_n);
  ClsmGradient g(m.units(), m.dim());
  const auto ptrs = detail::pointers(prepared.seqs);
  const double l = pool_loss<Real>(m, ptrs, prepared.examples, &g);
  if (loss) *loss = l;
  return g;
}

template <typename Real>
double batch_loss(const BasicClsmModel<Real>& m, const std::vector<TrainingExample>& batch) {
  auto prepared = detail::prepare_batch(batch, m.config.window_n);
  const auto ptrs = detail::pointers(prepared.seqs);
  return pool_loss<Real>(m, ptrs, prepared.examples, nullptr);
}

template <typename Real>
void apply_sgd(BasicClsmModel<Real>& m, const ClsmGradient& g, double step) {
  const std::size_t K = m.units();
  for (auto col : g.touched_columns()) {
    Real* w = &m.conv[static_cast<std::size_t>(col) * K];
    for (std::size_t k = 0; k < K; ++k) w[k] = static_cast<Real>(w[k] - step * g.conv_at(k, col));
  }
  for (std::size_t i = 0; i < m.sem.size(); ++i) m.sem[i] = static_cast<Real>(m.sem[i] - step * g.sem[i]);
  if (m.config.use_bias) {
    for (std::size_t k = 0; k < K; ++k) m.conv_bias[k] = static_cast<Real>(m.conv_bias[k] - step * g.conv_bias[k]);
    for (std::size_t l = 0; l < m.dim(); ++l) m.sem_bias[l] = static_cast<Real>(m.sem_bias[l] - step * g.sem_bias[l]);
  }
}

// ---------------------------------------------------------------------------
// Training

struct TextPair {
  Tokens query;
  Tokens doc;
};

struct TrainResult {
  ClsmModel model;
  std::vector<double> epoch_loss;  // mean loss per pair, measured before each minibatch update
};

namespace detail {

// Minibatch ranges over n items: floor(n/B) batches, the last absorbing the remainder.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t b) {
  std::vector<std::pair<std::size_t, std::size_t>> r;
  const std::size_t count = n / b;
  for (std::size_t i = 0; i < count; ++i) r.emplace_back(i * b, i + 1 == count ? n : (i + 1) * b);
  return r;
}

// J distinct in-batch indices other than `self`.
inline std::vector<std::size_t> sample_negatives(Rng& rng, std::size_t batch, std::size_t self, int j) {
  std::vector<std::size_t> out;
  while (static_cast<int>(out.size()) < j) {
    std::size_t c = rng.below(batch - 1);
    if (c >= self) ++c;
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  return out;
}

class PairPool {
 public:
  PairPool(const std::vector<TextPair>& pairs, std::size_t n) {
    queries_.reserve(pairs.size());
    docs_.reserve(pairs.size());
    for (const auto& p : pairs) {
      if (p.query.empty() || p.doc.empty()) throw TrainingError("training pair with empty text");
      queries_.push_back(window(truncate(p.query), n));
      docs_.push_back(window(truncate(p.doc), n));
    }
  }
  const WindowedSequence& query(std::size_t i) const { return queries_[i]; }
  const WindowedSequence& doc(std::size_t i) const { return docs_[i]; }

 private:
  static Tokens truncate(const Tokens& t) {
    return Tokens(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(std::min(t.size(), kMaxTokens)));
  }
  std::vector<WindowedSequence> queries_, docs_;
};

// Runs one pass over `order`; updates the model when `step` > 0. Returns mean loss.
template <typename Real>
double run_epoch(BasicClsmModel<Real>& m, const PairPool& pool, const std::vector<std::size_t>& order, Rng& rng,
                 bool update) {
  const auto& c = m.config;
  double total = 0;
  std::vector<const WindowedSequence*> texts;
  std::vector<PoolExample> examples;
  ClsmGradient g(m.units(), m.dim());
  for (auto [lo, hi] : batch_ranges(order.size(), static_cast<std::size_t>(c.minibatch_size))) {
    const std::size_t b = hi - lo;
    texts.clear();
    examples.clear();
    for (std::size_t i = lo; i < hi; ++i) texts.push_back(&pool.query(order[i]));
    for (std::size_t i = lo; i < hi; ++i) texts.push_back(&pool.doc(order[i]));
    for (std::size_t i = 0; i < b; ++i) {
      PoolExample ex{i, b + i, {}};
      for (auto j : sample_negatives(rng, b, i, c.negatives)) ex.negatives.push_back(b + j);
      examples.push_back(std::move(ex));
    }
    if (update) {
      g.clear_conv();
      std::fill(g.conv_bias.begin(), g.conv_bias.end(), 0.0);
      std::fill(g.sem.begin(), g.sem.end(), 0.0);
      std::fill(g.sem_bias.begin(), g.sem_bias.end(), 0.0);
      total += pool_loss<Real>(m, texts, examples, &g);
      apply_sgd(m, g, c.learning_rate / static_cast<double>(b));
    } else {
      total += pool_loss<Real>(m, texts, examples, nullptr);
    }
  }
  return order.empty() ? 0.0 : total / static_cast<double>(order.size());
}

}  // namespace detail

/// Minibatch SGD on -log posterior with in-batch negatives. The step applied
/// per minibatch is learning_rate times the batch-mean gradient.
inline TrainResult train(const std::vector<TextPair>& pairs, const ClsmConfig& config) {
  validate(config);
  if (pairs.size() < static_cast<std::size_t>(config.minibatch_size))
    throw TrainingError("need at least minibatch_size (" + std::to_string(config.minibatch_size) + ") pairs, got " +
                        std::to_string(pairs.size()));
  TrainResult r{ClsmModel::initialized(config), {}};
  const detail::PairPool pool(pairs, config.window_n);
  Rng rng(derive_seed(config.seed, "clsm-train"));
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int e = 0; e < config.epochs; ++e) {
    rng.shuffle(order);
    r.epoch_loss.push_back(detail::run_epoch(r.model, pool, order, rng, true));
  }
  return r;
}

/// Mean loss over seeded minibatches without updating the model.
template <typename Real>
double evaluate_loss(const BasicClsmModel<Real>& m, const std::vector<TextPair>& pairs, std::uint64_t seed) {
  const detail::PairPool pool(pairs, m.config.window_n);
  Rng rng(seed);
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  auto copy = m;
  return detail::run_epoch(copy, pool, order, rng, false);
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckOptions {
  /// Random untouched convolution coordinates added to the checked set.
  std::size_t untouched_samples = 64;
  std::uint64_t seed = 7;
  /// Parameters are drawn uniformly from [-scale, scale]. Glorot init over the
  /// full trigram fan-in leaves |y| near 1e-3, where the cosine's curvature
  /// swamps central differences; the check runs at a generic point instead.
  double param_scale = 0.5;
  /// Test hook applied to the analytic gradient before comparison.
  std::function<void(ClsmGradient&)> tamper;
};

/// Max relative error |a - n| / max(|a|, |n|, 1e-6) between the analytic
/// gradient and central differences, over every dense parameter, every
/// touched convolution weight, and a seeded sample of untouched ones.
inline double grad_check(const ClsmConfig& config, const std::vector<TrainingExample>& sample, double epsilon,
                         const GradCheckOptions& opt = {}) {
  if (config.conv_units > 8 || config.semantic_dim > 4) throw ConfigError("grad_check requires K <= 8 and L <= 4");
  BasicClsmModel<double> m(config);
  {
    Rng init(derive_seed(config.seed, "grad-check"));
    auto fill = [&](std::vector<double>& v) {
      for (auto& w : v) w = init.uniform(-opt.param_scale, opt.param_scale);
    };
    fill(m.conv);
    fill(m.sem);
    if (config.use_bias) {
      fill(m.conv_bias);
      fill(m.sem_bias);
    }
  }
  ClsmGradient g = grad(m, sample);
  if (opt.tamper) opt.tamper(g);

  double worst = 0;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + epsilon;
    const double up = batch_loss(m, sample);
    param = saved - epsilon;
    const double down = batch_loss(m, sample);
    param = saved;
    const double numeric = (up - down) / (2 * epsilon);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  };

  const std::size_t K = m.units();
  for (auto col : g.touched_columns())
    for (std::size_t k = 0; k < K; ++k) check(m.wc(k, col), g.conv_at(k, col));
  Rng rng(opt.seed);
  for (std::size_t i = 0; i < opt.untouched_samples; ++i) {
    const auto col = static_cast<std::uint32_t>(rng.below(m.input_dim()));
    const auto k = rng.below(K);
    check(m.wc(k, col), g.conv_at(k, col));
  }
  if (config.use_bias) {
    for (std::size_t k = 0; k < K; ++k) check(m.conv_bias[k], g.conv_bias[k]);
    for (std::size_t l = 0; l < m.dim(); ++l) check(m.sem_bias[l], g.sem_bias[l]);
  }
  for (std::size_t i = 0; i < m.sem.size(); ++i) check(m.sem[i], g.sem[i]);
  return worst;
}

/// Random alphanumeric token list of 1..max_tokens words.
inline Tokens random_tokens(Rng& rng, int max_tokens = 4, int max_len = 8) {
  static constexpr std::string_view kChars = "abcdefghijklmnopqrstuvwxyz0123456789";
  Tokens t(static_cast<std::size_t>(rng.between(1, max_tokens)));
  for (auto& w : t) {
    const int len = rng.between(1, max_len);
    for (int i = 0; i < len; ++i) w.push_back(kChars[rng.below(kChars.size())]);
  }
  return t;
}

struct GradCheckSuiteResult {
  double max_relative_error = 0;
  std::vector<double> per_sample;
};

/// Runs grad_check for seeds base_seed .. base_seed+samples-1, each on its
/// own parameter point and a batch of random texts.
inline GradCheckSuiteResult grad_check_suite(ClsmConfig config, int samples, double epsilon, std::uint64_t base_seed,
                                             int batch = 2) {
  GradCheckSuiteResult r;
  for (int s = 0; s < samples; ++s) {
    config.seed = base_seed + static_cast<std::uint64_t>(s);
    Rng rng(derive_seed(config.seed, "grad-check-sample"));
    std::vector<TrainingExample> sample;
    for (int b = 0; b < batch; ++b) {
      TrainingExample ex{random_tokens(rng), random_tokens(rng), {}};
      for (int j = 0; j < config.negatives; ++j) ex.negatives.push_back(random_tokens(rng));
      sample.push_back(std::move(ex));
    }
    GradCheckOptions opt;
    opt.seed = config.seed;
    const double e = grad_check(config, sample, epsilon, opt);
    r.per_sample.push_back(e);
    r.max_relative_error = std::max(r.max_relative_error, e);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Model file: "CMA1", u32 version, u32 K, u32 L, u32 n, u32 trigram_dim,
// f64 gamma, then little-endian f32 blocks Wc (row-major K x n*trigram_dim),
// bc, Ws (row-major L x K), bs.

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}
inline void put_f64(std::string& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(out, v);
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : b_(bytes) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw DataError("truncated binary file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_++])) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  double f64() {
    const std::uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_model(const ClsmModel& m) {
  std::string out;
  const std::size_t K = m.units(), L = m.dim(), D = m.input_dim();
  out.reserve(32 + 4 * (K * D + K + L * K + L));
  out += "CMA1";
  detail::put_u32(out, kModelFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(K));
  detail::put_u32(out, static_cast<std::uint32_t>(L));
  detail::put_u32(out, m.config.window_n);
  detail::put_u32(out, m.config.trigram_dim);
  detail::put_f64(out, m.config.gamma);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t col = 0; col < D; ++col) detail::put_f32(out, m.wc(k, col));
  for (float v : m.conv_bias) detail::put_f32(out, v);
  for (float v : m.sem) detail::put_f32(out, v);
  for (float v : m.sem_bias) detail::put_f32(out, v);
  return out;
}

/// Header fields override `base`; training-only settings keep base values.
inline ClsmModel parse_model(std::string_view bytes, ClsmConfig base = {}) {
  detail::ByteReader r(bytes);
  if (r.bytes(4) != "CMA1") throw DataError("not a CMA model file (bad magic)");
  if (r.u32() != kModelFormatVersion) throw DataError("unsupported model file version");
  base.conv_units = r.u32();
  base.semantic_dim = r.u32();
  base.window_n = r.u32();
  base.trigram_dim = r.u32();
  base.gamma = r.f64();
  if (base.trigram_dim != kTrigramDim || base.window_n % 2 == 0 || base.conv_units == 0 || base.semantic_dim == 0 ||
      base.conv_units > 65536 || base.semantic_dim > 65536 || base.window_n > 15)
    throw DataError("model header has invalid dimensions");
  ClsmModel m(base);
  const std::size_t K = m.units(), D = m.input_dim();
  r.need(4 * (K * D + K + m.sem.size() + m.dim()));
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t col = 0; col < D; ++col) m.wc(k, col) = r.f32();
  for (auto& v : m.conv_bias) v = r.f32();
  for (auto& v : m.sem) v = r.f32();
  for (auto& v : m.sem_bias) v = r.f32();
  if (!r.done()) throw DataError("trailing bytes in model file");
  return m;
}

inline Digest model_fingerprint(const ClsmModel& m) { return sha256(serialize_model(m)); }

}  // namespace cma
