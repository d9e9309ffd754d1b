#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cma/config.hpp"
#include "cma/corpus.hpp"
#include "cma/embed_index.hpp"
#include "cma/eval.hpp"

namespace cma {

namespace fs = std::filesystem;

inline constexpr const char* kResolvedConfigFile = "config.txt";

/// File I/O for one stage. Reads are limited to the declared inputs and
/// every write is recorded as an output.
class StageContext {
 public:
  explicit StageContext(const std::vector<fs::path>& inputs) {
    for (const auto& p : inputs) declared_.insert(key(p));
  }

  std::string read(const fs::path& p) {
    require(p);
    return read_file_bytes(p);
  }
  std::vector<std::string> lines(const fs::path& p) {
    require(p);
    return read_lines(p);
  }
  Corpus corpus(const fs::path& dir) {
    for (const char* f : {CorpusFiles::taxonomy, CorpusFiles::queries, CorpusFiles::ads, CorpusFiles::impressions})
      require(dir / f);
    return load_corpus(dir);
  }
  void write(const fs::path& p, const std::string& bytes) {
    write_text_file(p, bytes);
    if (std::find(outputs_.begin(), outputs_.end(), p) == outputs_.end()) outputs_.push_back(p);
  }
  const std::vector<fs::path>& outputs() const { return outputs_; }

 private:
  static std::string key(const fs::path& p) { return p.lexically_normal().generic_string(); }
  void require(const fs::path& p) const {
    if (!declared_.count(key(p))) throw Error(ErrorKind::internal, "stage read undeclared input " + p.string());
  }
  std::set<std::string> declared_;
  std::vector<fs::path> outputs_;
};

struct StageReport {
  std::string name;
  bool cache_hit = false;
  double wall_time_seconds = 0;
  std::vector<fs::path> outputs;
};

struct Manifest {
  std::string stage;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
  std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256
  double wall_time_seconds = 0;
  bool cache_hit = false;
};

inline std::string serialize_manifest(const Manifest& m) {
  std::string s = "stage\t" + m.stage + "\nconfig_hash\t" + m.config_hash + "\n";
  for (const auto& [p, h] : m.inputs) s += "input\t" + p + "\t" + h + "\n";
  for (const auto& [p, h] : m.outputs) s += "output\t" + p + "\t" + h + "\n";
  s += "wall_time_seconds\t" + detail::fmt_real(m.wall_time_seconds) + "\n";
  s += std::string("cache_hit\t") + (m.cache_hit ? "true" : "false") + "\n";
  return s;
}

inline Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto f = split_tabs(line);
    if (f.size() == 2 && f[0] == "stage") m.stage = f[1];
    else if (f.size() == 2 && f[0] == "config_hash") m.config_hash = f[1];
    else if (f.size() == 3 && f[0] == "input") m.inputs.emplace_back(f[1], f[2]);
    else if (f.size() == 3 && f[0] == "output") m.outputs.emplace_back(f[1], f[2]);
    else if (f.size() == 2 && f[0] == "wall_time_seconds") m.wall_time_seconds = std::stod(f[1]);
    else if (f.size() == 2 && f[0] == "cache_hit") m.cache_hit = f[1] == "true";
    else if (!line.empty()) throw DataError("bad manifest line: " + line);
  }
  return m;
}

struct StageSpec {
  std::string name;
  fs::path manifest;
  std::vector<fs::path> inputs;
  std::string config_hash;
  std::string resolved_config;
};

namespace detail {

inline std::vector<std::pair<std::string, std::string>> hash_files(const std::vector<fs::path>& files) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& p : files) {
    if (!fs::is_regular_file(p)) throw DataError("missing input " + p.string());
    out.emplace_back(p.generic_string(), to_hex(sha256_file(p)));
  }
  return out;
}

inline bool outputs_intact(const Manifest& m) {
  for (const auto& [p, h] : m.outputs)
    if (!fs::is_regular_file(p) || to_hex(sha256_file(p)) != h) return false;
  return !m.outputs.empty();
}

}  // namespace detail

/// Runs `body` unless a manifest shows identical inputs, config hash and
/// intact outputs. The manifest and resolved config are rewritten either way.
inline StageReport run_stage(const StageSpec& spec, const std::function<void(StageContext&)>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Manifest m{spec.name, spec.config_hash, detail::hash_files(spec.inputs), {}, 0, false};
  if (fs::is_regular_file(spec.manifest)) {
    try {
      const Manifest old = parse_manifest(read_file_bytes(spec.manifest));
      if (old.stage == m.stage && old.config_hash == m.config_hash && old.inputs == m.inputs && detail::outputs_intact(old)) {
        m.outputs = old.outputs;
        m.cache_hit = true;
      }
    } catch (const DataError&) {
    }
  }
  StageReport r{spec.name, m.cache_hit, 0, {}};
  if (!m.cache_hit) {
    StageContext ctx(spec.inputs);
    body(ctx);
    m.outputs = detail::hash_files(ctx.outputs());
  }
  std::set<fs::path> dirs{spec.manifest.parent_path()};
  for (const auto& [p, h] : m.outputs) {
    r.outputs.emplace_back(p);
    dirs.insert(fs::path(p).parent_path());
  }
  for (const auto& d : dirs) write_text_file(d / kResolvedConfigFile, spec.resolved_config);
  r.wall_time_seconds = m.wall_time_seconds = detail::seconds_since(t0);
  write_text_file(spec.manifest, serialize_manifest(m));
  return r;
}

// ---------------------------------------------------------------------------
// Stages. Each takes explicit paths so it can run alone from the CLI.

inline std::vector<fs::path> corpus_files(const fs::path& dir) {
  return {dir / CorpusFiles::taxonomy, dir / CorpusFiles::queries, dir / CorpusFiles::ads, dir / CorpusFiles::impressions};
}

inline constexpr const char* kRelevancePairsFile = "relevance_pairs.tsv";

/// Corpus plus the labelled relevance pairs.
inline StageReport stage_synth(const PipelineConfig& c, const fs::path& out_dir) {
  StageSpec spec{"synth", out_dir / "synth.manifest.tsv", {}, section_hash(c, {"synth", "relevance"}), resolved_text(c)};
  return run_stage(spec, [&](StageContext& ctx) {
    const Taxonomy t = build_taxonomy(c.synth);
    const Corpus corpus = generate_corpus(t, c.synth);
    ctx.write(out_dir / CorpusFiles::taxonomy, corpus.taxonomy.serialize());
    std::string q, a;
    for (const auto& d : corpus.queries) q += serialize_document(d) + '\n';
    for (const auto& d : corpus.ads) a += serialize_document(d) + '\n';
    ctx.write(out_dir / CorpusFiles::queries, q);
    ctx.write(out_dir / CorpusFiles::ads, a);
    ctx.write(out_dir / CorpusFiles::impressions, serialize_impressions(corpus.impressions));
    ctx.write(out_dir / kRelevancePairsFile, serialize_labeled_pairs(sample_relevance_pairs(corpus, c.relevance)));
  });
}

/// train.tsv holds the (possibly noisy) training positives, eval.tsv the
/// clean balanced eval split.
inline StageReport stage_build_pairs(const PipelineConfig& c, const fs::path& corpus_dir, const fs::path& out_dir) {
  StageSpec spec{"build-pairs", out_dir / "build-pairs.manifest.tsv", corpus_files(corpus_dir),
                 section_hash(c, {"cma_data"}), resolved_text(c)};
  return run_stage(spec, [&](StageContext& ctx) {
    const Corpus corpus = ctx.corpus(corpus_dir);
    const PairSet d_plus = build_positive_set(corpus.impressions, corpus, c.data);
    const Split s = split(d_plus, corpus.impressions, corpus, c.data);
    const auto eval_queries = query_ids(s.eval);
    const PairSet train =
        inject_noise(s.train, corpus.impressions, corpus, c.data.noise_fraction, c.data.seed, &eval_queries);
    ctx.write(out_dir / "train.tsv", serialize_pairs(train));
    ctx.write(out_dir / "eval.tsv", serialize_pairs(s.eval));
  });
}

inline ExperimentReport cma_eval_report(const ClsmModel& model, const PairSet& eval, const Corpus& corpus) {
  const auto ev = evaluate_cma(model, eval, corpus);
  std::size_t n_sib = 0, n_far = 0;
  const int sibling_depth = corpus.taxonomy.max_depth() - 1;
  const double sib = ev.mean_score_at_lca(sibling_depth, &n_sib);
  const double far = ev.mean_score_at_lca(0, &n_far);
  ExperimentReport r;
  r.metadata = {{"experiment", "cma-eval"},
                {"sibling_mean_score", detail::fmt_real(sib)},
                {"sibling_pairs", std::to_string(n_sib)},
                {"far_mean_score", detail::fmt_real(far)},
                {"far_pairs", std::to_string(n_far)}};
  r.rows.push_back({"cma", ev.auc, eval.count_label(1), eval.count_label(0), 0, "ok"});
  return r;
}

inline StageReport stage_train_cma(const PipelineConfig& c, const fs::path& corpus_dir, const fs::path& pairs_dir,
                                   const fs::path& out_dir) {
  auto inputs = corpus_files(corpus_dir);
  inputs.push_back(pairs_dir / "train.tsv");
  inputs.push_back(pairs_dir / "eval.tsv");
  StageSpec spec{"train-cma", out_dir / "train-cma.manifest.tsv", inputs, section_hash(c, {"clsm"}), resolved_text(c)};
  return run_stage(spec, [&](StageContext& ctx) {
    const Corpus corpus = ctx.corpus(corpus_dir);
    const PairSet train_pairs = parse_pairs(ctx.lines(pairs_dir / "train.tsv"));
    const PairSet eval_pairs = parse_pairs(ctx.lines(pairs_dir / "eval.tsv"));
    const auto result = train(positive_text_pairs(train_pairs, corpus), c.clsm);
    ctx.write(out_dir / "model.bin", serialize_model(result.model));
    std::string loss = "epoch\tmean_loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
      loss += std::to_string(e + 1) + "\t" + detail::fmt_real(result.epoch_loss[e]) + "\n";
    ctx.write(out_dir / "loss.tsv", loss);
    ctx.write(out_dir / "eval_report.tsv", serialize_report(cma_eval_report(result.model, eval_pairs, corpus), false));
  });
}

inline StageReport stage_export_index(const PipelineConfig& c, const fs::path& model_path, const fs::path& corpus_dir,
                                      const fs::path& out_path) {
  const fs::path ads = corpus_dir / CorpusFiles::ads;
  StageSpec spec{"export-index", out_path.parent_path() / "export-index.manifest.tsv", {model_path, ads},
                 section_hash(c, {}), resolved_text(c)};
  return run_stage(spec, [&](StageContext& ctx) {
    const FingerprintedModel fm(parse_model(ctx.read(model_path), c.clsm));
    std::vector<Document> docs;
    for (const auto& l : ctx.lines(ads)) docs.push_back(parse_document(l));
    const auto built = build_index(fm, docs);
    ctx.write(out_path, serialize_index(built.index));
    std::string warnings;
    for (const auto& w : built.warnings) warnings += w + "\n";
    ctx.write(out_path.parent_path() / "warnings.txt", warnings);
  });
}

struct FeatureFiles {
  fs::path train, eval, train_labels, eval_labels;
};

inline FeatureFiles feature_files(const fs::path& dir, FeatureVariant v) {
  const std::string n(to_string(v));
  return {dir / (n + ".train.tsv"), dir / (n + ".eval.tsv"), dir / (n + ".train.labels.tsv"),
          dir / (n + ".eval.labels.tsv")};
}

inline std::string serialize_labels(const std::vector<int>& y) {
  std::string s;
  for (int v : y) s += std::to_string(v) + "\n";
  return s;
}

inline std::vector<int> parse_labels(const std::vector<std::string>& lines) {
  std::vector<int> y;
  for (const auto& l : lines) {
    if (l != "0" && l != "1") throw DataError("label must be 0 or 1: " + l);
    y.push_back(l == "1");
  }
  return y;
}

/// `model_path` is read only for the cma variant.
inline StageReport stage_features(const PipelineConfig& c, FeatureVariant v, const fs::path& corpus_dir,
                                  const fs::path& pairs_path, const fs::path& model_path, const fs::path& out_dir) {
  auto inputs = corpus_files(corpus_dir);
  inputs.push_back(pairs_path);
  if (v == FeatureVariant::cma) inputs.push_back(model_path);
  StageSpec spec{"features-" + std::string(to_string(v)), out_dir / ("features-" + std::string(to_string(v)) + ".manifest.tsv"),
                 inputs, section_hash(c, {"relevance"}), resolved_text(c)};
  return run_stage(spec, [&](StageContext& ctx) {
    const Corpus corpus = ctx.corpus(corpus_dir);
    const auto [train_pairs, eval_pairs] = split_labeled(parse_labeled_pairs(ctx.lines(pairs_path)));
    std::optional<ClsmModel> model;
    if (v == FeatureVariant::cma) model = parse_model(ctx.read(model_path), c.clsm);
    const ClsmModel* mp = model ? &*model : nullptr;
    const auto files = feature_files(out_dir, v);
    ctx.write(files.train, serialize_feature_matrix(build_feature_matrix(corpus, train_pairs, v, mp, c.features)));
    ctx.write(files.eval, serialize_feature_matrix(build_feature_matrix(corpus, eval_pairs, v, mp, c.features)));
    ctx.write(files.train_labels, serialize_labels(binary_labels(train_pairs)));
    ctx.write(files.eval_labels, serialize_labels(binary_labels(eval_pairs)));
  });
}

inline StageReport stage_train_rel(const PipelineConfig& c, const fs::path& features, const fs::path& labels,
                                   const fs::path& out_path) {
  StageSpec spec{"train-rel", fs::path(out_path.string() + ".manifest.tsv"), {features, labels},
                 section_hash(c, {"gbdt"}), resolved_text(c)};
  return run_stage(spec, [&](StageContext& ctx) {
    const auto x = parse_feature_matrix(ctx.lines(features));
    const auto y = parse_labels(ctx.lines(labels));
    if (x.rows.size() != y.size()) throw DataError("feature and label files differ in length");
    ctx.write(out_path, serialize_gbdt(gbdt_train(x.rows, y, c.gbdt)));
  });
}

/// Evaluates the four trained relevance models on their eval matrices.
inline StageReport stage_compare(const PipelineConfig& c, const fs::path& features_dir, const fs::path& models_dir,
                                 const fs::path& out_dir) {
  std::vector<fs::path> inputs;
  for (auto v : kAllVariants) {
    const auto f = feature_files(features_dir, v);
    inputs.push_back(models_dir / (std::string(to_string(v)) + ".gbdt"));
    inputs.push_back(f.eval);
    inputs.push_back(f.eval_labels);
  }
  StageSpec spec{"compare-features", out_dir / "compare-features.manifest.tsv", inputs, section_hash(c, {}),
                 resolved_text(c)};
  return run_stage(spec, [&](StageContext& ctx) {
    ExperimentReport report;
    report.metadata = {{"experiment", "compare-features"}, {"config_hash", config_hash(c)}};
    for (auto v : kAllVariants) {
      const auto f = feature_files(features_dir, v);
      ReportRow row;
      row.setting = std::string(display_name(v));
      try {
        const auto model = parse_gbdt(ctx.read(models_dir / (std::string(to_string(v)) + ".gbdt")));
        const auto x = parse_feature_matrix(ctx.lines(f.eval));
        const auto y = parse_labels(ctx.lines(f.eval_labels));
        if (x.rows.size() != y.size()) throw DataError("feature and label files differ in length");
        row.auc = evaluate_relevance(model, x, y);
        for (int l : y) (l ? row.n_pos : row.n_neg)++;
      } catch (const DataError& e) {
        row.auc = std::nan("");
        row.status = e.what();
      }
      report.rows.push_back(row);
    }
    ctx.write(out_dir / "compare_features.tsv", serialize_report(report, false));
    ctx.write(out_dir / "summary.txt", summarize_report(report, "Relevance AUC-ROC by feature representation"));
  });
}

/// One CMA per configured noise fraction, scored on a shared clean split.
inline StageReport stage_noise_sweep(const PipelineConfig& c, const fs::path& corpus_dir, const fs::path& out_path,
                                     int threads) {
  StageSpec spec{"noise-sweep", fs::path(out_path.string() + ".manifest.tsv"), corpus_files(corpus_dir),
                 section_hash(c, {"cma_data", "clsm", "sweep"}), resolved_text(c)};
  return run_stage(spec, [&](StageContext& ctx) {
    const Corpus corpus = ctx.corpus(corpus_dir);
    NoiseSweepOptions opt;
    opt.threads = threads;
    auto report = run_noise_sweep(corpus, c.sweep_fractions, c.clsm, c.data, opt);
    report.metadata.emplace_back("config_hash", config_hash(c));
    ctx.write(out_path, serialize_report(report, false));
    ctx.write(fs::path(out_path).replace_extension(".summary.txt"),
              summarize_report(report, "CMA AUC-ROC by noise fraction", true));
  });
}

/// In-memory four-way comparison from a corpus, labelled pairs and a CMA.
inline StageReport stage_compare_standalone(const PipelineConfig& c, const fs::path& corpus_dir,
                                            const fs::path& pairs_path, const fs::path& model_path,
                                            const fs::path& out_path) {
  auto inputs = corpus_files(corpus_dir);
  inputs.push_back(pairs_path);
  inputs.push_back(model_path);
  StageSpec spec{"compare-features", fs::path(out_path.string() + ".manifest.tsv"), inputs,
                 section_hash(c, {"gbdt", "relevance"}), resolved_text(c)};
  return run_stage(spec, [&](StageContext& ctx) {
    const Corpus corpus = ctx.corpus(corpus_dir);
    const auto pairs = parse_labeled_pairs(ctx.lines(pairs_path));
    const auto model = parse_model(ctx.read(model_path), c.clsm);
    auto report = run_feature_comparison(corpus, pairs, model, c.gbdt, c.features);
    report.metadata.emplace_back("config_hash", config_hash(c));
    ctx.write(out_path, serialize_report(report, false));
    ctx.write(fs::path(out_path).replace_extension(".summary.txt"),
              summarize_report(report, "Relevance AUC-ROC by feature representation", true));
  });
}

inline std::string serialize_scores(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += detail::fmt_real(x) + "\n";
  return s;
}

inline std::vector<double> parse_scores(const std::vector<std::string>& lines) {
  std::vector<double> v;
  for (const auto& l : lines) {
    std::size_t used = 0;
    double x = 0;
    try {
      x = std::stod(l, &used);
    } catch (const std::logic_error&) {
      throw DataError("bad score line: " + l);
    }
    if (used != l.size()) throw DataError("bad score line: " + l);
    v.push_back(x);
  }
  return v;
}

inline StageReport stage_predict_rel(const PipelineConfig& c, const fs::path& model_path, const fs::path& features,
                                     const fs::path& out_path) {
  StageSpec spec{"predict-rel", fs::path(out_path.string() + ".manifest.tsv"), {model_path, features},
                 section_hash(c, {}), resolved_text(c)};
  return run_stage(spec, [&](StageContext& ctx) {
    const auto model = parse_gbdt(ctx.read(model_path));
    const auto x = parse_feature_matrix(ctx.lines(features));
    std::vector<double> p;
    for (const auto& row : x.rows) p.push_back(gbdt_predict(model, row));
    ctx.write(out_path, serialize_scores(p));
  });
}

/// Query file lines are "query_id<TAB>text"; candidate lines are
/// "query_id<TAB>ad_id". Output lines are "query_id<TAB>ad_id<TAB>score" or
/// "query_id<TAB>ad_id<TAB>ERROR<TAB>message".
inline std::string score_files(const EmbeddingIndex& ix, const FingerprintedModel& fm,
                               const std::vector<std::string>& query_lines,
                               const std::vector<std::string>& candidate_lines) {
  std::map<std::string, std::string> queries;
  std::vector<std::string> order;
  for (const auto& l : query_lines) {
    const auto f = split_tabs(l);
    if (f.size() != 2) throw DataError("bad query line: " + l);
    if (!queries.emplace(f[0], f[1]).second) throw DataError("duplicate query id " + f[0]);
    order.push_back(f[0]);
  }
  std::map<std::string, std::vector<std::string>> candidates;
  for (const auto& l : candidate_lines) {
    const auto f = split_tabs(l);
    if (f.size() != 2) throw DataError("bad candidate line: " + l);
    if (!queries.count(f[0])) throw DataError("candidate for unknown query " + f[0]);
    candidates[f[0]].push_back(f[1]);
  }
  std::string out;
  for (const auto& qid : order) {
    const Tokens q = prepare(queries[qid]);
    for (const auto& c : score_candidates(ix, fm, q, candidates[qid]))
      out += qid + "\t" + c.ad_id + "\t" + (c.ok() ? detail::fmt_real(c.score) : "ERROR\t" + c.error) + "\n";
  }
  return out;
}

inline StageReport stage_score(const PipelineConfig& c, const fs::path& index_path, const fs::path& model_path,
                               const fs::path& queries, const fs::path& candidates, const fs::path& out_path) {
  StageSpec spec{"score", fs::path(out_path.string() + ".manifest.tsv"), {index_path, model_path, queries, candidates},
                 section_hash(c, {}), resolved_text(c)};
  return run_stage(spec, [&](StageContext& ctx) {
    const auto ix = parse_index(ctx.read(index_path));
    const FingerprintedModel fm(parse_model(ctx.read(model_path), c.clsm));
    ctx.write(out_path, score_files(ix, fm, ctx.lines(queries), ctx.lines(candidates)));
  });
}

/// Directory layout of a pipeline work dir.
struct WorkLayout {
  fs::path root;
  fs::path corpus() const { return root / "synth"; }
  fs::path relevance_pairs() const { return corpus() / kRelevancePairsFile; }
  fs::path pairs() const { return root / "pairs"; }
  fs::path cma() const { return root / "cma"; }
  fs::path model() const { return cma() / "model.bin"; }
  fs::path index() const { return root / "index" / "ads.cmax"; }
  fs::path features() const { return root / "features"; }
  fs::path relevance() const { return root / "relevance"; }
  fs::path report() const { return root / "report"; }
};

/// synth, build-pairs, train-cma, export-index, features and train-rel per
/// variant, then compare-features.
inline std::vector<StageReport> run_pipeline(const PipelineConfig& c,
                                             const std::function<void(const StageReport&)>& on_stage = {}) {
  const WorkLayout w{c.work_dir};
  std::vector<StageReport> out;
  auto note = [&](StageReport r) {
    if (on_stage) on_stage(r);
    out.push_back(std::move(r));
  };
  note(stage_synth(c, w.corpus()));
  note(stage_build_pairs(c, w.corpus(), w.pairs()));
  note(stage_train_cma(c, w.corpus(), w.pairs(), w.cma()));
  note(stage_export_index(c, w.model(), w.corpus(), w.index()));
  for (auto v : kAllVariants) note(stage_features(c, v, w.corpus(), w.relevance_pairs(), w.model(), w.features()));
  for (auto v : kAllVariants) {
    const auto f = feature_files(w.features(), v);
    note(stage_train_rel(c, f.train, f.train_labels, w.relevance() / (std::string(to_string(v)) + ".gbdt")));
  }
  note(stage_compare(c, w.features(), w.relevance(), w.report()));
  return out;
}

}  // namespace cma
