#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mergelab/common.hpp"
#include "mergelab/corpus.hpp"
#include "mergelab/merging.hpp"
#include "mergelab/recmodel.hpp"
#include "mergelab/training.hpp"

namespace mergelab::cfg {

// Line-oriented key-value config with [section] tables. '#' and ';' start
// comments. Unknown sections or keys are errors, caught against the schema
// the caller supplies.
struct IniFile {
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::string raw;  // canonical text, hashed into output manifests

  bool has(const std::string& section, const std::string& key) const {
    auto it = sections.find(section);
    return it != sections.end() && it->second.count(key);
  }

  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    auto it = sections.find(section);
    if (it == sections.end()) return fallback;
    auto kt = it->second.find(key);
    return kt == it->second.end() ? fallback : kt->second;
  }

  std::string require(const std::string& section, const std::string& key) const {
    if (!has(section, key))
      throw ConfigError("config: missing required key [" + section + "] " + key);
    return sections.at(section).at(key);
  }

  double get_num(const std::string& section, const std::string& key, double fallback) const {
    std::string v = get(section, key, "");
    if (v.empty()) return fallback;
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      throw ConfigError("config: bad number for [" + section + "] " + key + ": '" + v + "'");
    }
  }
};

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

inline IniFile parse_ini(std::istream& in) {
  IniFile f;
  std::string line, section;
  std::size_t lineno = 0;
  std::ostringstream raw;
  while (std::getline(in, line)) {
    ++lineno;
    raw << line << "\n";
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t cpos = line.find_first_of("#;");
    if (cpos != std::string::npos) line = line.substr(0, cpos);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      f.sections[section];
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("config line " + std::to_string(lineno) + ": empty key");
    f.sections[section][key] = val;
  }
  f.raw = raw.str();
  return f;
}

inline IniFile load_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_ini(in);
}

inline void validate_keys(const IniFile& f,
                          const std::map<std::string, std::set<std::string>>& schema) {
  for (const auto& [section, kvs] : f.sections) {
    auto it = schema.find(section);
    if (it == schema.end()) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [k, v] : kvs)
      if (!it->second.count(k))
        throw ConfigError("config: unknown key '" + k + "' in section [" + section + "]");
  }
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

// --- experiment configuration -------------------------------------------

struct TsvSource {
  std::string domain_id;
  std::string path;
};

struct ExperimentConfig {
  rec::ModelDims dims;
  rec::ScoreOptions score;  // gamma, temperature

  // corpus
  bool synthetic = true;
  std::vector<corpus::SyntheticDomainSpec> domains;       // experiment domains
  std::vector<corpus::SyntheticDomainSpec> unseen_domains;  // held out from merging
  std::vector<TsvSource> tsv_sources;
  corpus::DatasetOptions dataset_opt;
  std::uint64_t corpus_seed = 0;

  // pretraining corpus (always synthetic, ids disjoint from experiment domains)
  std::vector<corpus::SyntheticDomainSpec> pretrain_domains;
  train::TrainConfig pretrain;

  train::TrainConfig finetune;
  merging::AdaptiveMergeConfig merge;
  merging::TiesOptions ties;
  double task_arithmetic_weight = 0.4;

  std::size_t eval_k = 10;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  std::uint64_t config_hash = 0;
};

inline const std::map<std::string, std::set<std::string>>& experiment_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"model", {"input_dim", "hidden_dim", "output_dim", "num_layers", "gamma", "temperature"}},
      {"corpus",
       {"source", "seed", "feature_dim", "feature_active", "feature_seed", "domains",
        "unseen_domains", "users", "items", "mean_len", "latent_dim", "zipf", "users_list",
        "items_list"}},
      {"corpus.tsv", {"domain_ids", "paths"}},
      {"pretrain", {"domains", "users", "items", "mean_len", "latent_dim", "zipf", "epochs",
                    "batch", "lr", "patience"}},
      {"train", {"epochs", "batch", "lr", "patience", "negatives"}},
      {"merge",
       {"lambda", "steps", "lr", "batch", "init", "composition", "ties_density", "ties_scale",
        "ties_per_layer", "ta_weight"}},
      {"eval", {"k"}},
      {"experiment", {"seeds"}},
  };
  return schema;
}

inline std::vector<corpus::SyntheticDomainSpec> make_domain_specs(const IniFile& f,
                                                                  const std::string& prefix,
                                                                  std::size_t count,
                                                                  const std::string& section,
                                                                  bool use_lists = false) {
  std::vector<corpus::SyntheticDomainSpec> specs;
  // Optional per-domain overrides as comma lists (main experiment domains only).
  std::vector<std::string> users_list, items_list;
  if (use_lists) {
    users_list = split_list(f.get(section, "users_list", ""));
    items_list = split_list(f.get(section, "items_list", ""));
  }
  if (!users_list.empty() && users_list.size() != count)
    throw ConfigError("config: users_list length must equal the domain count");
  if (!items_list.empty() && items_list.size() != count)
    throw ConfigError("config: items_list length must equal the domain count");
  for (std::size_t k = 0; k < count; ++k) {
    corpus::SyntheticDomainSpec s;
    s.domain_id = prefix + std::to_string(k);
    s.num_users = users_list.empty() ? static_cast<std::size_t>(f.get_num(section, "users", 200))
                                     : std::stoull(users_list[k]);
    s.num_items = items_list.empty() ? static_cast<std::size_t>(f.get_num(section, "items", 50))
                                     : std::stoull(items_list[k]);
    s.mean_seq_len = f.get_num(section, "mean_len", 12);
    s.latent_dim = static_cast<std::size_t>(f.get_num(section, "latent_dim", 8));
    s.zipf_exponent = f.get_num(section, "zipf", 1.0);
    specs.push_back(std::move(s));
  }
  return specs;
}

inline ExperimentConfig load_experiment_config(const IniFile& f) {
  validate_keys(f, experiment_schema());
  ExperimentConfig c;
  c.config_hash = fnv1a(f.raw);

  c.dims.input = static_cast<std::size_t>(f.get_num("model", "input_dim", 64));
  c.dims.hidden = static_cast<std::size_t>(f.get_num("model", "hidden_dim", 32));
  c.dims.output = static_cast<std::size_t>(f.get_num("model", "output_dim", 16));
  c.dims.num_layers = static_cast<std::size_t>(f.get_num("model", "num_layers", 3));
  c.score.gamma = f.get_num("model", "gamma", 0.8);
  c.score.temperature = f.get_num("model", "temperature", 1.0);

  std::string source = f.get("corpus", "source", "synthetic");
  if (source != "synthetic" && source != "tsv")
    throw ConfigError("config: corpus source must be synthetic or tsv");
  c.synthetic = source == "synthetic";
  c.corpus_seed = static_cast<std::uint64_t>(f.get_num("corpus", "seed", 11));
  c.dataset_opt.feature_dim = static_cast<std::size_t>(f.get_num("corpus", "feature_dim", 64));
  c.dataset_opt.feature_active = static_cast<std::size_t>(f.get_num("corpus", "feature_active", 8));
  c.dataset_opt.feature_seed = static_cast<std::uint64_t>(f.get_num("corpus", "feature_seed", 7));
  if (c.dataset_opt.feature_dim != c.dims.input)
    throw ConfigError("config: corpus feature_dim must equal model input_dim");

  if (c.synthetic) {
    std::size_t nd = static_cast<std::size_t>(f.get_num("corpus", "domains", 4));
    std::size_t nu = static_cast<std::size_t>(f.get_num("corpus", "unseen_domains", 0));
    c.domains = make_domain_specs(f, "dom", nd, "corpus", /*use_lists=*/true);
    c.unseen_domains = make_domain_specs(f, "unseen", nu, "corpus");
  } else {
    auto ids = split_list(f.require("corpus.tsv", "domain_ids"));
    auto paths = split_list(f.require("corpus.tsv", "paths"));
    if (ids.size() != paths.size())
      throw ConfigError("config: corpus.tsv domain_ids and paths differ in length");
    for (std::size_t i = 0; i < ids.size(); ++i) c.tsv_sources.push_back({ids[i], paths[i]});
  }

  std::size_t npre = static_cast<std::size_t>(f.get_num("pretrain", "domains", 2));
  c.pretrain_domains = make_domain_specs(f, "pre", npre, "pretrain");
  c.pretrain.max_epochs = static_cast<std::size_t>(f.get_num("pretrain", "epochs", 30));
  c.pretrain.batch_size = static_cast<std::size_t>(f.get_num("pretrain", "batch", 64));
  c.pretrain.lr = f.get_num("pretrain", "lr", 1e-3);
  c.pretrain.patience = static_cast<std::size_t>(f.get_num("pretrain", "patience", 5));
  c.pretrain.score = c.score;

  c.finetune.max_epochs = static_cast<std::size_t>(f.get_num("train", "epochs", 50));
  c.finetune.batch_size = static_cast<std::size_t>(f.get_num("train", "batch", 64));
  c.finetune.lr = f.get_num("train", "lr", 1e-3);
  c.finetune.patience = static_cast<std::size_t>(f.get_num("train", "patience", 5));
  std::string neg = f.get("train", "negatives", "full");
  if (neg == "full")
    c.finetune.negatives = train::NegativeMode::full_catalog;
  else if (neg == "in_batch")
    c.finetune.negatives = train::NegativeMode::in_batch;
  else
    throw ConfigError("config: train negatives must be full or in_batch");
  c.finetune.score = c.score;

  c.merge.lambda = f.get_num("merge", "lambda", 1000.0);
  c.merge.steps = static_cast<std::size_t>(f.get_num("merge", "steps", 500));
  c.merge.lr = f.get_num("merge", "lr", 1e-3);
  c.merge.batch = static_cast<std::size_t>(f.get_num("merge", "batch", 16));
  c.merge.init_weight = f.get_num("merge", "init", 0.2);
  c.merge.temperature = c.score.temperature;
  c.merge.score = c.score;
  std::string comp = f.get("merge", "composition", "round_robin");
  if (comp == "round_robin")
    c.merge.composition = merging::BatchComposition::round_robin;
  else if (comp == "proportional")
    c.merge.composition = merging::BatchComposition::proportional;
  else
    throw ConfigError("config: merge composition must be round_robin or proportional");
  c.ties.density = f.get_num("merge", "ties_density", 0.2);
  c.ties.scale = f.get_num("merge", "ties_scale", 1.0);
  c.ties.per_layer_trim = f.get_num("merge", "ties_per_layer", 0) != 0;
  c.task_arithmetic_weight = f.get_num("merge", "ta_weight", 0.4);

  c.eval_k = static_cast<std::size_t>(f.get_num("eval", "k", 10));
  if (c.eval_k < 1) throw ConfigError("config: eval k must be >= 1");

  if (f.has("experiment", "seeds")) {
    c.seeds.clear();
    for (const auto& s : split_list(f.get("experiment", "seeds", "")))
      c.seeds.push_back(std::stoull(s));
    if (c.seeds.empty()) throw ConfigError("config: experiment seeds must be nonempty");
  }
  return c;
}

// --- merge recipe files -------------------------------------------------

struct MergeRecipe {
  std::string method;  // average | task_arithmetic | ties | adamerging | mergerec
  merging::WeightMode mode = merging::WeightMode::domainwise;
  std::string base_path;
  std::vector<std::string> checkpoint_paths;
  std::vector<std::string> catalog_paths;
};

inline const std::map<std::string, std::set<std::string>>& recipe_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"recipe", {"method", "mode", "base", "checkpoints", "catalogs"}},
  };
  return schema;
}

inline bool valid_method(const std::string& m) {
  return m == "average" || m == "task_arithmetic" || m == "ties" || m == "adamerging" ||
         m == "mergerec";
}

inline MergeRecipe load_merge_recipe(const IniFile& f) {
  validate_keys(f, recipe_schema());
  MergeRecipe r;
  r.method = f.require("recipe", "method");
  if (!valid_method(r.method)) throw ConfigError("recipe: unknown method '" + r.method + "'");
  std::string mode = f.get("recipe", "mode", "domainwise");
  if (mode == "domainwise")
    r.mode = merging::WeightMode::domainwise;
  else if (mode == "layerwise")
    r.mode = merging::WeightMode::layerwise;
  else
    throw ConfigError("recipe: mode must be domainwise or layerwise");
  r.base_path = f.get("recipe", "base", "");
  r.checkpoint_paths = split_list(f.get("recipe", "checkpoints", ""));
  r.catalog_paths = split_list(f.get("recipe", "catalogs", ""));
  return r;
}

}  // namespace mergelab::cfg
