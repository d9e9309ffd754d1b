#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cma/auc.hpp"
#include "cma/clsm.hpp"
#include "cma/cma_data.hpp"
#include "cma/corpus.hpp"
#include "cma/gbdt.hpp"
#include "cma/relevance.hpp"

namespace cma {

struct ReportRow {
  std::string setting;
  double auc = 0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  double wall_time_seconds = 0;
  std::string status = "ok";  // "ok" or the error message
  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct ExperimentReport {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<ReportRow> rows;
  friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;

  const ReportRow& row(const std::string& setting) const {
    for (const auto& r : rows)
      if (r.setting == setting) return r;
    throw LookupError("no report row " + setting);
  }
};

namespace detail {
inline std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}
}  // namespace detail

/// Tab-separated report: "# key=value" metadata lines, a header, one row per
/// setting. Wall time is optional so deterministic artifacts can omit it.
inline std::string serialize_report(const ExperimentReport& r, bool include_timing) {
  std::string s;
  for (const auto& [k, v] : r.metadata) s += "# " + k + "=" + detail::one_line(v) + "\n";
  s += include_timing ? "setting\tauc\tn_pos\tn_neg\twall_time_seconds\tstatus\n" : "setting\tauc\tn_pos\tn_neg\tstatus\n";
  for (const auto& row : r.rows) {
    s += row.setting + "\t" + detail::fmt_real(row.auc) + "\t" + std::to_string(row.n_pos) + "\t" +
         std::to_string(row.n_neg) + "\t";
    if (include_timing) s += detail::fmt_real(row.wall_time_seconds) + "\t";
    s += detail::one_line(row.status) + "\n";
  }
  return s;
}

inline ExperimentReport parse_report(const std::string& text) {
  ExperimentReport r;
  std::istringstream in(text);
  std::string line;
  bool header = false, timing = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("bad report metadata line");
      r.metadata.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
      continue;
    }
    const auto cols = split_tabs(line);
    if (!header) {
      header = true;
      timing = cols.size() == 6;
      continue;
    }
    if (cols.size() != (timing ? 6u : 5u)) throw DataError("bad report row: " + line);
    ReportRow row;
    try {
      row.setting = cols[0];
      row.auc = std::stod(cols[1]);
      row.n_pos = std::stoul(cols[2]);
      row.n_neg = std::stoul(cols[3]);
      if (timing) row.wall_time_seconds = std::stod(cols[4]);
    } catch (const std::logic_error&) {
      throw DataError("bad report row: " + line);
    }
    row.status = cols.back();
    r.rows.push_back(std::move(row));
  }
  return r;
}

/// Human-readable summary, one line per row.
inline std::string summarize_report(const ExperimentReport& r, const std::string& title, bool include_timing = false) {
  std::string s = title + "\n";
  char buf[512];
  for (const auto& row : r.rows) {
    if (row.status == "ok")
      std::snprintf(buf, sizeof buf, "  %-20s AUC-ROC %.4f  (pos %zu, neg %zu)", row.setting.c_str(), row.auc,
                    row.n_pos, row.n_neg);
    else
      std::snprintf(buf, sizeof buf, "  %-20s FAILED: %s", row.setting.c_str(), row.status.c_str());
    s += buf;
    if (include_timing) {
      std::snprintf(buf, sizeof buf, "  %.1fs", row.wall_time_seconds);
      s += buf;
    }
    s += "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------

/// CMA scores over an eval pair set, with the category relation of each pair.
struct CmaEvaluation {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<int> lca_depths;
  double auc = 0;

  /// Mean score over pairs whose rank-1 categories have the given lca depth
  /// and are distinct leaves.
  double mean_score_at_lca(int depth, std::size_t* count = nullptr) const {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (lca_depths[i] == depth && labels[i] == 0) {
        s += scores[i];
        ++n;
      }
    if (count) *count = n;
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

inline CmaEvaluation evaluate_cma(const ClsmModel& model, const PairSet& eval, const Corpus& corpus) {
  CmaEvaluation e;
  for (const auto& r : eval.rows) {
    const Document& q = corpus.query(r.query_id);
    const Document& a = corpus.ad(r.ad_id);
    e.scores.push_back(relevance(model, q.text, a.title));
    e.labels.push_back(r.label);
    e.lca_depths.push_back(corpus.taxonomy.lca_depth(q.top_category(), a.top_category()));
  }
  e.auc = auc_roc(e.scores, e.labels);
  return e;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs jobs[i] for every i on up to `threads` workers; results land by index.
template <typename Job>
void run_indexed(std::size_t n, int threads, Job job) {
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) job(i);
    });
  for (auto& t : pool) t.join();
}

inline std::string fraction_label(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "noise=%.2f", f);
  return buf;
}

}  // namespace detail

struct NoiseSweepOptions {
  int threads = 1;
  /// Receives each trained model with its fraction; may be empty.
  std::function<void(double, const ClsmModel&)> on_model;
};

/// One CMA per noise fraction, trained on nested noisy positive sets and
/// scored on a single clean query-disjoint eval split.
inline ExperimentReport run_noise_sweep(const Corpus& corpus, const std::vector<double>& fractions,
                                        const ClsmConfig& clsm_config, const CmaDataConfig& data_config,
                                        const NoiseSweepOptions& opt = {}) {
  validate(data_config);
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] >= 0 && fractions[i] <= 0.5)) throw ConfigError("noise fractions must lie in [0, 0.5]");
    if (i && fractions[i] < fractions[i - 1]) throw ConfigError("noise fractions must be sorted ascending");
  }
  const PairSet d_plus = build_positive_set(corpus.impressions, corpus, data_config);
  const Split clean = split(d_plus, corpus.impressions, corpus, data_config);
  const auto eval_queries = query_ids(clean.eval);

  ExperimentReport report;
  report.metadata = {{"experiment", "noise-sweep"},
                     {"data_seed", std::to_string(data_config.seed)},
                     {"clsm_seed", std::to_string(clsm_config.seed)},
                     {"delta", detail::fmt_real(data_config.delta)},
                     {"eval_holdout_fraction", detail::fmt_real(data_config.eval_holdout_fraction)},
                     {"train_positives_clean", std::to_string(clean.train.count_label(1))}};
  report.rows.resize(fractions.size());
  detail::run_indexed(fractions.size(), opt.threads, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    ReportRow& row = report.rows[i];
    row.setting = detail::fraction_label(fractions[i]);
    try {
      const PairSet noisy = inject_noise(clean.train, corpus.impressions, corpus, fractions[i], data_config.seed, &eval_queries);
      const auto result = train(positive_text_pairs(noisy, corpus), clsm_config);
      const auto ev = evaluate_cma(result.model, clean.eval, corpus);
      row.auc = ev.auc;
      row.n_pos = clean.eval.count_label(1);
      row.n_neg = clean.eval.count_label(0);
      if (opt.on_model) opt.on_model(fractions[i], result.model);
    } catch (const Error& e) {
      row.auc = std::nan("");
      row.status = e.what();
    }
    row.wall_time_seconds = detail::seconds_since(t0);
  });
  return report;
}

/// AUC of a trained relevance model over a feature matrix.
inline double evaluate_relevance(const GbdtModel& model, const FeatureMatrix& m, const std::vector<int>& labels) {
  std::vector<double> scores;
  scores.reserve(m.rows.size());
  for (const auto& row : m.rows) scores.push_back(gbdt_predict(model, row));
  return auc_roc(scores, labels);
}

inline std::vector<int> binary_labels(const std::vector<LabeledPair>& pairs) {
  std::vector<int> y;
  for (const auto& p : pairs) y.push_back(binarize(p.label));
  return y;
}

inline std::pair<std::vector<LabeledPair>, std::vector<LabeledPair>> split_labeled(const std::vector<LabeledPair>& pairs) {
  std::vector<LabeledPair> train, eval;
  for (const auto& p : pairs) (p.eval ? eval : train).push_back(p);
  return {std::move(train), std::move(eval)};
}

/// Trains one GBDT per feature representation on the same train/eval pairs.
inline ExperimentReport run_feature_comparison(const Corpus& corpus, const std::vector<LabeledPair>& labeled,
                                               const ClsmModel& cma, const GbdtConfig& gbdt_config,
                                               const FeatureOptions& opt = {}) {
  const auto [train_pairs, eval_pairs] = split_labeled(labeled);
  const auto y_train = binary_labels(train_pairs);
  const auto y_eval = binary_labels(eval_pairs);
  ExperimentReport report;
  report.metadata = {{"experiment", "compare-features"},
                     {"train_pairs", std::to_string(train_pairs.size())},
                     {"eval_pairs", std::to_string(eval_pairs.size())},
                     {"num_trees", std::to_string(gbdt_config.num_trees)},
                     {"max_depth", std::to_string(gbdt_config.max_depth)}};
  for (auto v : kAllVariants) {
    const auto t0 = std::chrono::steady_clock::now();
    ReportRow row;
    row.setting = std::string(display_name(v));
    try {
      const ClsmModel* model = v == FeatureVariant::cma ? &cma : nullptr;
      const auto x_train = build_feature_matrix(corpus, train_pairs, v, model, opt);
      const auto x_eval = build_feature_matrix(corpus, eval_pairs, v, model, opt);
      const auto gbdt = gbdt_train(x_train.rows, y_train, gbdt_config);
      row.auc = evaluate_relevance(gbdt, x_eval, y_eval);
      for (int l : y_eval) (l ? row.n_pos : row.n_neg)++;
    } catch (const Error& e) {
      row.auc = std::nan("");
      row.status = e.what();
    }
    row.wall_time_seconds = detail::seconds_since(t0);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace cma
