#include "cma/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

namespace cma {
namespace {

const char* kTinyConfig = R"(# small settings for fast runs
[global]
seed = 5

[synth]
num_queries = 3000
num_ads = 300
impression_count = 6000

[clsm]
conv_units = 16
semantic_dim = 8
epochs = 2
minibatch_size = 64

[gbdt]
num_trees = 20

[relevance]
num_pairs = 600
)";

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::path(testing::TempDir()) / ("cma_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_config(const fs::path& dir) {
  const auto p = dir / "tiny.ini";
  write_text_file(p, kTinyConfig);
  return p;
}

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

TEST(Config, DefaultsResolve) {
  const auto c = load_config("default");
  EXPECT_EQ(c.seed, 17u);
  EXPECT_EQ(c.synth.seed, derive_seed(17, "synth"));
  EXPECT_EQ(c.clsm.seed, derive_seed(17, "clsm"));
  EXPECT_EQ(c.data.eval_holdout_fraction, 0.1);
  EXPECT_EQ(c.sweep_fractions, (std::vector<double>{0.0, 0.1, 0.2, 0.3, 0.4}));
}

TEST(Config, ParsesSectionsAndKeepsExplicitSeeds) {
  auto c = parse_config("[global]\nseed = 3\n[clsm]\nseed = 99\nepochs = 7\nuse_bias = false\n[sweep]\nfractions = 0, 0.25\n");
  resolve(c);
  EXPECT_EQ(c.clsm.seed, 99u);
  EXPECT_EQ(c.clsm.epochs, 7);
  EXPECT_FALSE(c.clsm.use_bias);
  EXPECT_EQ(c.synth.seed, derive_seed(3, "synth"));
  EXPECT_EQ(c.sweep_fractions, (std::vector<double>{0.0, 0.25}));
}

TEST(Config, ResolvedTextRoundTrips) {
  auto c = parse_config(kTinyConfig);
  c.work_dir = "somewhere";
  resolve(c);
  auto back = parse_config(resolved_text(c));
  resolve(back);
  EXPECT_EQ(resolved_text(back), resolved_text(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  back.work_dir = "elsewhere";
  EXPECT_EQ(config_hash(back), config_hash(c)) << "paths must not affect the hash";
  back.clsm.epochs++;
  EXPECT_NE(config_hash(back), config_hash(c));
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("[clsm]\nepoch = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("[nosuch]\n"), ConfigError);
  EXPECT_THROW(parse_config("epochs = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("[clsm]\nepochs = 3\nepochs = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("[clsm]\nepochs = three\n"), ConfigError);
  EXPECT_THROW(parse_config("[clsm]\nconv_units = -4\n"), ConfigError);
  auto c = parse_config("[sweep]\nfractions = 0.3, 0.1\n");
  EXPECT_THROW(resolve(c), ConfigError);
}

TEST(Config, WorkDirFromEnvironment) {
  ::setenv(kWorkDirEnv, "/tmp/from-env", 1);
  EXPECT_EQ(load_config("default").work_dir, "/tmp/from-env");
  auto c = parse_config("[paths]\nwork_dir = /tmp/from-file\n");
  resolve(c);
  EXPECT_EQ(c.work_dir, "/tmp/from-file");
  ::unsetenv(kWorkDirEnv);
  EXPECT_EQ(load_config("default").work_dir, kDefaultWorkDir);
}

TEST(Stage, UndeclaredReadIsRejected) {
  const auto d = fresh_dir("undeclared");
  write_text_file(d / "a.txt", "a");
  write_text_file(d / "b.txt", "b");
  StageContext ctx({d / "a.txt"});
  EXPECT_EQ(ctx.read(d / "a.txt"), "a");
  EXPECT_THROW(ctx.read(d / "b.txt"), Error);
}

TEST(Cli, UnknownFlagExitsOneWithoutArtifacts) {
  const auto d = fresh_dir("unknown");
  const auto r = cli({"synth", "--no-such-flag", "--work-dir", (d / "w").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_FALSE(fs::exists(d / "w"));
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
  EXPECT_EQ(cli({}).code, 1);
}

TEST(Cli, HelpPerSubcommand) {
  for (const char* sub : {"synth", "build-pairs", "train-cma", "grad-check", "export-index", "score", "features",
                          "train-rel", "predict-rel", "eval-auc", "noise-sweep", "compare-features", "pipeline"}) {
    const auto r = cli({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find(std::string("cma ") + sub), std::string::npos) << sub;
  }
}

TEST(Cli, ExitCodesByErrorKind) {
  const auto d = fresh_dir("codes");
  const auto cfg = write_config(d).string();
  const auto w = (d / "w").string();
  EXPECT_EQ(cli({"--config", (d / "missing.ini").string(), "synth"}).code, 2);
  write_text_file(d / "bad.ini", "[clsm]\nbogus = 1\n");
  EXPECT_EQ(cli({"--config", (d / "bad.ini").string(), "synth"}).code, 1);
  // No corpus yet: a data error.
  EXPECT_EQ(cli({"--config", cfg, "--work-dir", w, "build-pairs"}).code, 2);
  ASSERT_EQ(cli({"--config", cfg, "--work-dir", w, "synth"}).code, 0);
  EXPECT_EQ(cli({"--config", cfg, "--work-dir", w, "build-pairs", "--noise", "0.7"}).code, 1);
  EXPECT_EQ(cli({"grad-check", "--units", "64"}).code, 1);
  const auto gc = cli({"grad-check", "--samples", "3"});
  EXPECT_EQ(gc.code, 0) << gc.err;
  EXPECT_NE(gc.out.find("max relative error"), std::string::npos);
}

std::string bytes(const fs::path& p) { return read_file_bytes(p); }

TEST(Cli, PipelineIsCachedDeterministicAndComplete) {
  const auto d = fresh_dir("pipeline");
  const auto cfg = write_config(d).string();
  const WorkLayout a{d / "a"}, b{d / "b"};
  auto r = cli({"--config", cfg, "--work-dir", a.root.string(), "pipeline"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("Relevance-CMA"), std::string::npos);
  EXPECT_EQ(r.out.find("cache hit"), std::string::npos);

  // Same dir: every stage is a cache hit and bytes are unchanged.
  const auto model_bytes = bytes(a.model());
  r = cli({"--config", cfg, "--work-dir", a.root.string(), "pipeline"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t hits = 0;
  for (std::size_t p = r.out.find("cache hit"); p != std::string::npos; p = r.out.find("cache hit", p + 1)) ++hits;
  EXPECT_EQ(hits, 13u);
  EXPECT_EQ(bytes(a.model()), model_bytes);

  // Fresh dir: identical artifacts.
  ASSERT_EQ(cli({"--config", cfg, "--work-dir", b.root.string(), "pipeline"}).code, 0);
  EXPECT_EQ(bytes(b.model()), bytes(a.model()));
  EXPECT_EQ(bytes(b.index()), bytes(a.index()));
  EXPECT_EQ(bytes(b.report() / "compare_features.tsv"), bytes(a.report() / "compare_features.tsv"));
  for (auto v : kAllVariants) {
    const auto name = std::string(to_string(v)) + ".gbdt";
    EXPECT_EQ(bytes(b.relevance() / name), bytes(a.relevance() / name));
  }

  // Every artifact directory carries the resolved config.
  for (const auto& dir : {a.corpus(), a.pairs(), a.cma(), a.index().parent_path(), a.features(), a.relevance(), a.report()}) {
    ASSERT_TRUE(fs::exists(dir / kResolvedConfigFile)) << dir;
    auto echoed = parse_config(bytes(dir / kResolvedConfigFile));
    resolve(echoed);
    EXPECT_EQ(config_hash(echoed), config_hash(load_config(cfg)));
  }
}

TEST(Cli, ManifestsDeclareExactlyTheInputsRead) {
  const auto d = fresh_dir("manifest");
  const auto cfg = write_config(d).string();
  const WorkLayout w{d / "w"};
  ASSERT_EQ(cli({"--config", cfg, "--work-dir", w.root.string(), "pipeline"}).code, 0);
  const auto m = parse_manifest(bytes(w.cma() / "train-cma.manifest.tsv"));
  EXPECT_EQ(m.stage, "train-cma");
  std::set<std::string> inputs;
  for (const auto& [p, h] : m.inputs) {
    inputs.insert(fs::path(p).filename().string());
    EXPECT_EQ(h, to_hex(sha256_file(p)));
  }
  EXPECT_EQ(inputs, (std::set<std::string>{"taxonomy.tsv", "queries.txt", "ads.txt", "impressions.tsv", "train.tsv",
                                           "eval.tsv"}));
  ASSERT_EQ(m.outputs.size(), 3u);
  for (const auto& [p, h] : m.outputs) EXPECT_EQ(h, to_hex(sha256_file(p)));

  const auto idx = parse_manifest(bytes(w.index().parent_path() / "export-index.manifest.tsv"));
  ASSERT_EQ(idx.inputs.size(), 2u);
  EXPECT_EQ(fs::path(idx.inputs[0].first), w.model());

  // Changing a stage's settings reruns it and leaves upstream stages cached.
  write_text_file(d / "more.ini", std::string(kTinyConfig) + "\n[gbdt]\n");
  auto text = std::string(kTinyConfig);
  text.replace(text.find("num_trees = 20"), 14, "num_trees = 25");
  write_text_file(d / "more.ini", text);
  const auto r = cli({"--config", (d / "more.ini").string(), "--work-dir", w.root.string(), "pipeline"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("train-cma: cache hit"), std::string::npos);
  EXPECT_NE(r.out.find("train-rel: done"), std::string::npos);
}

TEST(Cli, ScorePredictAndEvalSubcommands) {
  const auto d = fresh_dir("score");
  const auto cfg = write_config(d).string();
  const WorkLayout w{d / "w"};
  ASSERT_EQ(cli({"--config", cfg, "--work-dir", w.root.string(), "pipeline"}).code, 0);

  write_text_file(d / "queries.tsv", "q1\tcard printing\nq2\tzzzqx vbnmt\n");
  write_text_file(d / "cands.tsv", "q1\ta000000\nq1\ta000001\nq2\ta000002\nq2\tmissing\n");
  const auto r = cli({"--config", cfg, "score", "--index", w.index().string(), "--model", w.model().string(), "--queries",
                      (d / "queries.tsv").string(), "--candidates", (d / "cands.tsv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::vector<std::vector<std::string>> rows;
  for (std::string l; std::getline(lines, l);) rows.push_back(split_tabs(l));
  ASSERT_EQ(rows.size(), 4u);
  const FingerprintedModel fm(parse_model(bytes(w.model())));
  const Corpus corpus = load_corpus(w.corpus());
  EXPECT_NEAR(std::stod(rows[0][2]), relevance(fm.model(), prepare("card printing"), corpus.ad("a000000").title), 1e-6);
  EXPECT_EQ(rows[3][2], "ERROR");

  const auto f = feature_files(w.features(), FeatureVariant::cma);
  const auto pred = d / "pred.txt";
  ASSERT_EQ(cli({"--config", cfg, "predict-rel", "--model", (w.relevance() / "cma.gbdt").string(), "--features",
                 f.eval.string(), "--out", pred.string()})
                .code,
            0);
  const auto e = cli({"eval-auc", "--scores", pred.string(), "--labels", f.eval_labels.string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto report = parse_report(bytes(w.report() / "compare_features.tsv"));
  EXPECT_EQ(e.out, "auc\t" + detail::fmt_real(report.row("Relevance-CMA").auc) + "\n");
}

}  // namespace
}  // namespace cma
