#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cma/clsm.hpp"
#include "cma/cma_data.hpp"
#include "cma/gbdt.hpp"
#include "cma/relevance.hpp"
#include "cma/rng.hpp"
#include "cma/sha256.hpp"
#include "cma/taxonomy.hpp"

namespace cma {

inline constexpr const char* kWorkDirEnv = "CMA_WORK_DIR";
inline constexpr const char* kDefaultWorkDir = "cma-work";

/// Every setting of a pipeline run. Stage seeds left unset in the file are
/// derived from the global seed as derive_seed(seed, "<section>").
struct PipelineConfig {
  std::uint64_t seed = 17;
  SynthConfig synth;
  CmaDataConfig data{.eval_holdout_fraction = 0.1};
  ClsmConfig clsm;
  GbdtConfig gbdt;
  RelevanceSampleConfig relevance;
  FeatureOptions features;
  std::vector<double> sweep_fractions = {0.0, 0.1, 0.2, 0.3, 0.4};
  std::string work_dir;

  std::set<std::string> explicit_keys;  // "section.key" entries present in the source text

  bool is_explicit(const std::string& key) const { return explicit_keys.count(key) > 0; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_real(v[i]);
  return s;
}

inline std::vector<double> parse_real_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::logic_error&) {
      throw ConfigError("not a number: '" + item + "'");
    }
    if (used != item.size()) throw ConfigError("not a number: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  std::istringstream in(s);
  T v{};
  in >> v;
  if (!in || !in.eof() || (std::is_unsigned_v<T> && !s.empty() && s[0] == '-'))
    throw ConfigError("bad value for " + key + ": '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + s + "'");
}

struct ConfigField {
  std::string key;  // section.name
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

#define CMA_NUM_FIELD(KEY, EXPR)                                                                       \
  ConfigField {                                                                                        \
    KEY, [](PipelineConfig& c, const std::string& v) { c.EXPR = parse_number<decltype(c.EXPR)>(KEY, v); }, \
        [](const PipelineConfig& c) {                                                                  \
          if constexpr (std::is_floating_point_v<decltype(c.EXPR)>)                                   \
            return fmt_real(c.EXPR);                                                                   \
          else                                                                                         \
            return std::to_string(c.EXPR);                                                             \
        }                                                                                              \
  }

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      CMA_NUM_FIELD("global.seed", seed),
      CMA_NUM_FIELD("synth.seed", synth.seed),
      CMA_NUM_FIELD("synth.taxonomy_depth", synth.taxonomy_depth),
      CMA_NUM_FIELD("synth.branching_factor", synth.branching_factor),
      CMA_NUM_FIELD("synth.leaf_vocab_size", synth.leaf_vocab_size),
      CMA_NUM_FIELD("synth.internal_vocab_size", synth.internal_vocab_size),
      CMA_NUM_FIELD("synth.num_queries", synth.num_queries),
      CMA_NUM_FIELD("synth.num_ads", synth.num_ads),
      CMA_NUM_FIELD("synth.query_zipf_exponent", synth.query_zipf_exponent),
      CMA_NUM_FIELD("synth.impression_count", synth.impression_count),
      CMA_NUM_FIELD("synth.top_k", synth.top_k),
      CMA_NUM_FIELD("synth.cross_category_impression_rate", synth.cross_category_impression_rate),
      CMA_NUM_FIELD("synth.leaf_word_prob", synth.leaf_word_prob),
      CMA_NUM_FIELD("synth.stop_word_prob", synth.stop_word_prob),
      CMA_NUM_FIELD("synth.click_prob_same", synth.click_prob_same),
      CMA_NUM_FIELD("synth.click_prob_cross", synth.click_prob_cross),
      CMA_NUM_FIELD("cma_data.seed", data.seed),
      CMA_NUM_FIELD("cma_data.delta", data.delta),
      CMA_NUM_FIELD("cma_data.noise_fraction", data.noise_fraction),
      CMA_NUM_FIELD("cma_data.eval_holdout_fraction", data.eval_holdout_fraction),
      CMA_NUM_FIELD("clsm.seed", clsm.seed),
      CMA_NUM_FIELD("clsm.window_n", clsm.window_n),
      CMA_NUM_FIELD("clsm.conv_units", clsm.conv_units),
      CMA_NUM_FIELD("clsm.semantic_dim", clsm.semantic_dim),
      CMA_NUM_FIELD("clsm.gamma", clsm.gamma),
      CMA_NUM_FIELD("clsm.negatives", clsm.negatives),
      CMA_NUM_FIELD("clsm.learning_rate", clsm.learning_rate),
      CMA_NUM_FIELD("clsm.epochs", clsm.epochs),
      CMA_NUM_FIELD("clsm.minibatch_size", clsm.minibatch_size),
      ConfigField{"clsm.use_bias",
                  [](PipelineConfig& c, const std::string& v) { c.clsm.use_bias = parse_bool("clsm.use_bias", v); },
                  [](const PipelineConfig& c) { return std::string(c.clsm.use_bias ? "true" : "false"); }},
      CMA_NUM_FIELD("gbdt.seed", gbdt.seed),
      CMA_NUM_FIELD("gbdt.num_trees", gbdt.num_trees),
      CMA_NUM_FIELD("gbdt.max_depth", gbdt.max_depth),
      CMA_NUM_FIELD("gbdt.learning_rate", gbdt.learning_rate),
      CMA_NUM_FIELD("gbdt.min_samples_leaf", gbdt.min_samples_leaf),
      CMA_NUM_FIELD("gbdt.lambda", gbdt.lambda),
      CMA_NUM_FIELD("relevance.seed", relevance.seed),
      CMA_NUM_FIELD("relevance.num_pairs", relevance.num_pairs),
      CMA_NUM_FIELD("relevance.eval_fraction", relevance.eval_fraction),
      ConfigField{"relevance.relation_mix",
                  [](PipelineConfig& c, const std::string& v) {
                    const auto xs = parse_real_list(v);
                    if (xs.size() != 4) throw ConfigError("relevance.relation_mix needs 4 values");
                    std::copy(xs.begin(), xs.end(), c.relevance.relation_mix.begin());
                  },
                  [](const PipelineConfig& c) {
                    return fmt_list({c.relevance.relation_mix.begin(), c.relevance.relation_mix.end()});
                  }},
      ConfigField{"relevance.derived_lca_depth",
                  [](PipelineConfig& c, const std::string& v) {
                    c.features.derived_lca_depth = parse_bool("relevance.derived_lca_depth", v);
                  },
                  [](const PipelineConfig& c) { return std::string(c.features.derived_lca_depth ? "true" : "false"); }},
      ConfigField{"sweep.fractions",
                  [](PipelineConfig& c, const std::string& v) { c.sweep_fractions = parse_real_list(v); },
                  [](const PipelineConfig& c) { return fmt_list(c.sweep_fractions); }},
      ConfigField{"paths.work_dir", [](PipelineConfig& c, const std::string& v) { c.work_dir = v; },
                  [](const PipelineConfig& c) { return c.work_dir; }},
  };
  return fields;
}

#undef CMA_NUM_FIELD

inline const ConfigField& config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

inline constexpr std::array<const char*, 5> kSeededSections = {"synth", "cma_data", "clsm", "gbdt", "relevance"};

}  // namespace detail

/// Checks every section; throws ConfigError on the first problem.
inline void validate(const PipelineConfig& c) {
  validate(c.synth);
  validate(c.data);
  validate(c.clsm);
  validate(c.gbdt);
  if (c.relevance.num_pairs < 1) throw ConfigError("relevance.num_pairs must be positive");
  if (!(c.relevance.eval_fraction > 0 && c.relevance.eval_fraction < 1))
    throw ConfigError("relevance.eval_fraction must lie in (0,1)");
  for (double w : c.relevance.relation_mix)
    if (!(w >= 0)) throw ConfigError("relevance.relation_mix weights must be >= 0");
  for (std::size_t i = 0; i < c.sweep_fractions.size(); ++i) {
    if (!(c.sweep_fractions[i] >= 0 && c.sweep_fractions[i] <= 0.5)) throw ConfigError("sweep fractions must lie in [0, 0.5]");
    if (i && c.sweep_fractions[i] < c.sweep_fractions[i - 1]) throw ConfigError("sweep fractions must be ascending");
  }
}

/// Fills stage seeds not given explicitly and the work dir, then validates.
inline void resolve(PipelineConfig& c) {
  for (const char* section : detail::kSeededSections) {
    const std::string key = std::string(section) + ".seed";
    if (!c.is_explicit(key)) detail::config_field(key).set(c, std::to_string(derive_seed(c.seed, section)));
  }
  if (c.work_dir.empty()) {
    const char* env = std::getenv(kWorkDirEnv);
    c.work_dir = (env && *env) ? env : kDefaultWorkDir;
  }
  validate(c);
}

/// Parses sectioned key=value text. '#' starts a comment line. Unknown
/// sections or keys and repeated keys are errors.
inline PipelineConfig parse_config(const std::string& text) {
  PipelineConfig c;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : detail::config_fields()) known |= f.key.rfind(section + ".", 0) == 0;
      if (!known) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside a section");
    const std::string key = section + "." + detail::trim(line.substr(0, eq));
    const auto& field = [&]() -> const detail::ConfigField& {
      try {
        return detail::config_field(key);
      } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
      }
    }();
    if (!c.explicit_keys.insert(key).second) throw ConfigError(where + "duplicate key " + key);
    field.set(c, detail::trim(line.substr(eq + 1)));
  }
  return c;
}

/// Canonical text with every key; parsing it yields the same settings.
inline std::string resolved_text(const PipelineConfig& c, bool include_paths = true) {
  std::string out, section;
  for (const auto& f : detail::config_fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s == "paths" && !include_paths) continue;
    if (s != section) {
      out += (out.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(c) + "\n";
  }
  return out;
}

/// Hash of the settings that determine artifact bytes (paths excluded).
inline std::string config_hash(const PipelineConfig& c) { return to_hex(sha256(resolved_text(c, false))); }

/// Hash over the named sections only, so a stage is invalidated only by
/// settings it reads.
inline std::string section_hash(const PipelineConfig& c, std::initializer_list<std::string_view> sections) {
  std::string text;
  for (const auto& f : detail::config_fields())
    for (auto s : sections)
      if (f.key.size() > s.size() && f.key.compare(0, s.size(), s) == 0 && f.key[s.size()] == '.')
        text += f.key + "=" + f.get(c) + "\n";
  return to_hex(sha256(text));
}

/// "default" selects the built-in defaults; anything else is a file path.
inline PipelineConfig load_config(const std::string& path_or_default) {
  PipelineConfig c = path_or_default.empty() || path_or_default == "default"
                         ? PipelineConfig{}
                         : parse_config(read_file_bytes(path_or_default));
  resolve(c);
  return c;
}

}  // namespace cma
