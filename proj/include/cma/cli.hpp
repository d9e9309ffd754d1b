#pragma once

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cma/pipeline.hpp"

namespace cma {

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::validation:
      return 1;
    case ErrorKind::data:
      return 2;
    case ErrorKind::internal:
      return 3;
  }
  return 3;
}

namespace detail {

struct CliState {
  std::string config = "default";
  std::string work_dir;
  int threads = 1;
  std::ostream* out = &std::cout;

  PipelineConfig resolved() const {
    PipelineConfig c = load_config(config);
    if (!work_dir.empty()) c.work_dir = work_dir;
    return c;
  }
};

inline fs::path or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

inline void print_stage(std::ostream& out, const StageReport& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2fs", r.wall_time_seconds);
  out << r.name << ": " << (r.cache_hit ? "cache hit" : "done") << " (" << buf << ")\n";
  for (const auto& p : r.outputs) out << "  " << p.generic_string() << "\n";
}

}  // namespace detail

/// Parses arguments and runs one subcommand. Exit status: 0 success,
/// 1 invalid arguments or config, 2 bad input data, 3 internal error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Category Match Approximator toolkit", "cma"};
  app.require_subcommand(1);
  app.fallthrough();
  detail::CliState st;
  st.out = &out;
  app.add_option("--config", st.config, "Config file, or 'default' for built-in settings")->capture_default_str();
  app.add_option("--work-dir", st.work_dir,
                 std::string("Work directory (default: [paths] work_dir, then $") + kWorkDirEnv + ", then " +
                     kDefaultWorkDir + ")");
  app.add_option("--threads", st.threads, "Worker threads for parallel stages")->check(CLI::Range(1, 256))->capture_default_str();

  std::function<void()> action;
  auto on = [&](CLI::App* sub, std::function<void()> f) { sub->callback([&action, f] { action = f; }); };

  // synth
  std::string out_dir;
  auto* synth = app.add_subcommand("synth", "Generate the taxonomy, corpus and labelled relevance pairs");
  synth->add_option("--out-dir", out_dir, "Output directory (default: <work>/synth)");
  on(synth, [&] {
    const auto c = st.resolved();
    detail::print_stage(out, stage_synth(c, detail::or_default(out_dir, WorkLayout{c.work_dir}.corpus())));
  });

  // build-pairs
  std::string corpus_dir, pairs_out;
  std::optional<double> delta, noise;
  std::optional<std::uint64_t> seed;
  auto* bp = app.add_subcommand("build-pairs", "Build category-match training and eval pairs");
  bp->add_option("--corpus", corpus_dir, "Corpus directory (default: <work>/synth)");
  bp->add_option("--delta", delta, "Positive threshold on category similarity");
  bp->add_option("--noise", noise, "Noisy share of training positives, in [0, 0.5]");
  bp->add_option("--seed", seed, "Sampling seed");
  bp->add_option("--out", pairs_out, "Output directory for train.tsv and eval.tsv (default: <work>/pairs)");
  on(bp, [&] {
    auto c = st.resolved();
    if (delta) c.data.delta = *delta;
    if (noise) c.data.noise_fraction = *noise;
    if (seed) c.data.seed = *seed;
    validate(c);
    const WorkLayout w{c.work_dir};
    detail::print_stage(out, stage_build_pairs(c, detail::or_default(corpus_dir, w.corpus()),
                                               detail::or_default(pairs_out, w.pairs())));
  });

  // train-cma
  std::string pairs_dir, cma_out;
  std::optional<int> epochs;
  auto* tc = app.add_subcommand("train-cma", "Train the category match approximator");
  tc->add_option("--corpus", corpus_dir, "Corpus directory (default: <work>/synth)");
  tc->add_option("--pairs", pairs_dir, "Pair directory (default: <work>/pairs)");
  tc->add_option("--epochs", epochs, "Training epochs");
  tc->add_option("--seed", seed, "Initialization and shuffling seed");
  tc->add_option("--out", cma_out, "Output directory (default: <work>/cma)");
  on(tc, [&] {
    auto c = st.resolved();
    if (epochs) c.clsm.epochs = *epochs;
    if (seed) c.clsm.seed = *seed;
    validate(c);
    const WorkLayout w{c.work_dir};
    detail::print_stage(out, stage_train_cma(c, detail::or_default(corpus_dir, w.corpus()),
                                             detail::or_default(pairs_dir, w.pairs()), detail::or_default(cma_out, w.cma())));
  });

  // grad-check
  int gc_samples = 20;
  double gc_eps = 1e-4, gc_tol = 1e-3;
  std::uint64_t gc_seed = 1;
  std::uint32_t gc_k = 4, gc_l = 3, gc_n = 3;
  bool gc_no_bias = false;
  auto* gc = app.add_subcommand("grad-check", "Compare analytic gradients with central differences");
  gc->add_option("--samples", gc_samples, "Seeded samples")->check(CLI::PositiveNumber)->capture_default_str();
  gc->add_option("--epsilon", gc_eps, "Finite-difference step")->check(CLI::PositiveNumber)->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "Maximum allowed relative error")->capture_default_str();
  gc->add_option("--seed", gc_seed, "First sample seed")->capture_default_str();
  gc->add_option("--units", gc_k, "Convolution units K")->capture_default_str();
  gc->add_option("--dim", gc_l, "Semantic dimension L")->capture_default_str();
  gc->add_option("--window", gc_n, "Word window n")->capture_default_str();
  gc->add_flag("--no-bias", gc_no_bias, "Check a model without bias terms");
  on(gc, [&] {
    ClsmConfig cc = st.resolved().clsm;
    cc.conv_units = gc_k;
    cc.semantic_dim = gc_l;
    cc.window_n = gc_n;
    cc.use_bias = !gc_no_bias;
    validate(cc);
    const auto r = grad_check_suite(cc, gc_samples, gc_eps, gc_seed);
    out << "max relative error " << detail::fmt_real(r.max_relative_error) << " over " << gc_samples << " samples\n";
    if (!(r.max_relative_error < gc_tol))
      throw Error(ErrorKind::internal, "gradient check exceeded tolerance " + detail::fmt_real(gc_tol));
  });

  // export-index
  std::string model_path, index_path;
  auto* ei = app.add_subcommand("export-index", "Precompute ad-title embeddings");
  ei->add_option("--model", model_path, "Model file (default: <work>/cma/model.bin)");
  ei->add_option("--corpus", corpus_dir, "Corpus directory (default: <work>/synth)");
  ei->add_option("--out", index_path, "Index file (default: <work>/index/ads.cmax)");
  on(ei, [&] {
    const auto c = st.resolved();
    const WorkLayout w{c.work_dir};
    detail::print_stage(out, stage_export_index(c, detail::or_default(model_path, w.model()),
                                                detail::or_default(corpus_dir, w.corpus()),
                                                detail::or_default(index_path, w.index())));
  });

  // score
  std::string queries_path, candidates_path, score_out;
  auto* sc = app.add_subcommand("score", "Score query-ad candidates against an index");
  sc->add_option("--index", index_path, "Index file")->required();
  sc->add_option("--model", model_path, "Model file")->required();
  sc->add_option("--queries", queries_path, "Lines of query_id<TAB>text")->required();
  sc->add_option("--candidates", candidates_path, "Lines of query_id<TAB>ad_id")->required();
  sc->add_option("--out", score_out, "Output file (default: standard output)");
  on(sc, [&] {
    const auto c = st.resolved();
    if (!score_out.empty()) {
      detail::print_stage(out, stage_score(c, index_path, model_path, queries_path, candidates_path, score_out));
      return;
    }
    const auto ix = parse_index(read_file_bytes(index_path));
    const FingerprintedModel fm(parse_model(read_file_bytes(model_path), c.clsm));
    out << score_files(ix, fm, read_lines(queries_path), read_lines(candidates_path));
  });

  // features
  std::string variant_name, labeled_path, features_out;
  auto* fe = app.add_subcommand("features", "Extract relevance feature matrices for one representation");
  fe->add_option("--variant", variant_name, "nocat, binary, derived or cma")
      ->required()
      ->check(CLI::IsMember({"nocat", "binary", "derived", "cma"}));
  fe->add_option("--corpus", corpus_dir, "Corpus directory (default: <work>/synth)");
  fe->add_option("--pairs", labeled_path, "Labelled pairs (default: <work>/synth/relevance_pairs.tsv)");
  fe->add_option("--model", model_path, "CMA model, cma variant only (default: <work>/cma/model.bin)");
  fe->add_option("--out-dir", features_out, "Output directory (default: <work>/features)");
  on(fe, [&] {
    const auto c = st.resolved();
    const WorkLayout w{c.work_dir};
    detail::print_stage(out, stage_features(c, parse_variant(variant_name), detail::or_default(corpus_dir, w.corpus()),
                                            detail::or_default(labeled_path, w.relevance_pairs()),
                                            detail::or_default(model_path, w.model()),
                                            detail::or_default(features_out, w.features())));
  });

  // train-rel
  std::string features_path, labels_path, rel_out;
  auto* tr = app.add_subcommand("train-rel", "Train a boosted-tree relevance classifier");
  tr->add_option("--variant", variant_name, "Take default paths for this representation")
      ->check(CLI::IsMember({"nocat", "binary", "derived", "cma"}));
  tr->add_option("--features", features_path, "Feature matrix");
  tr->add_option("--labels", labels_path, "Parallel labels file");
  tr->add_option("--out", rel_out, "Model file");
  on(tr, [&] {
    const auto c = st.resolved();
    const WorkLayout w{c.work_dir};
    if (variant_name.empty() && (features_path.empty() || labels_path.empty() || rel_out.empty()))
      throw ConfigError("train-rel needs --variant or all of --features, --labels and --out");
    const auto v = variant_name.empty() ? FeatureVariant::no_cat : parse_variant(variant_name);
    const auto f = feature_files(w.features(), v);
    detail::print_stage(out, stage_train_rel(c, detail::or_default(features_path, f.train),
                                             detail::or_default(labels_path, f.train_labels),
                                             detail::or_default(rel_out, w.relevance() / (variant_name + ".gbdt"))));
  });

  // predict-rel
  std::string pred_out;
  auto* pr = app.add_subcommand("predict-rel", "Predict relevance probabilities for a feature matrix");
  pr->add_option("--model", model_path, "Relevance model file")->required();
  pr->add_option("--features", features_path, "Feature matrix")->required();
  pr->add_option("--out", pred_out, "Output file, one probability per line")->required();
  on(pr, [&] {
    detail::print_stage(out, stage_predict_rel(st.resolved(), model_path, features_path, pred_out));
  });

  // eval-auc
  std::string scores_path;
  auto* ea = app.add_subcommand("eval-auc", "AUC-ROC of a score file against a label file");
  ea->add_option("--scores", scores_path, "One score per line")->required();
  ea->add_option("--labels", labels_path, "One 0/1 label per line")->required();
  on(ea, [&] {
    const auto s = parse_scores(read_lines(scores_path));
    const auto y = parse_labels(read_lines(labels_path));
    out << "auc\t" << detail::fmt_real(auc_roc(s, y)) << "\n";
  });

  // noise-sweep
  std::string fractions, report_out;
  auto* ns = app.add_subcommand("noise-sweep", "Retrain the CMA at each noise fraction and report AUC-ROC");
  ns->add_option("--corpus", corpus_dir, "Corpus directory (default: <work>/synth)");
  ns->add_option("--fractions", fractions, "Comma-separated noise fractions (default: [sweep] fractions)");
  ns->add_option("--out", report_out, "Report file (default: <work>/report/noise_sweep.tsv)");
  on(ns, [&] {
    auto c = st.resolved();
    if (!fractions.empty()) c.sweep_fractions = detail::parse_real_list(fractions);
    validate(c);
    const WorkLayout w{c.work_dir};
    detail::print_stage(out, stage_noise_sweep(c, detail::or_default(corpus_dir, w.corpus()),
                                               detail::or_default(report_out, w.report() / "noise_sweep.tsv"), st.threads));
  });

  // compare-features
  auto* cf = app.add_subcommand("compare-features", "Train and compare the four relevance feature representations");
  cf->add_option("--corpus", corpus_dir, "Corpus directory (default: <work>/synth)");
  cf->add_option("--pairs", labeled_path, "Labelled pairs (default: <work>/synth/relevance_pairs.tsv)");
  cf->add_option("--model", model_path, "CMA model (default: <work>/cma/model.bin)");
  cf->add_option("--out", report_out, "Report file (default: <work>/report/compare_features_standalone.tsv)");
  on(cf, [&] {
    const auto c = st.resolved();
    const WorkLayout w{c.work_dir};
    detail::print_stage(out, stage_compare_standalone(c, detail::or_default(corpus_dir, w.corpus()),
                                                      detail::or_default(labeled_path, w.relevance_pairs()),
                                                      detail::or_default(model_path, w.model()),
                                                      detail::or_default(report_out, w.report() / "compare_features_standalone.tsv")));
  });

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "Run every stage from synth to compare-features");
  on(pl, [&] {
    const auto c = st.resolved();
    run_pipeline(c, [&](const StageReport& r) { detail::print_stage(out, r); });
    out << read_file_bytes(WorkLayout{c.work_dir}.report() / "summary.txt");
  });

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    err << app.help();
    return 1;
  }

  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 3;
  }
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"cma"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace cma
