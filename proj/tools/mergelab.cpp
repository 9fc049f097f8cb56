// mergelab: cross-domain recommender merging at desk scale.
//
//   mergelab <pretrain|finetune|merge|eval|experiment>
//            --config <path> [--recipe <name|file>] [--out <dir>] [--seed <n>]
//
// Exit codes: 0 ok, 2 config/input error, 3 shape incompatibility,
// 4 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mergelab/checkpoint.hpp"
#include "mergelab/config.hpp"
#include "mergelab/corpus.hpp"
#include "mergelab/evaluation.hpp"
#include "mergelab/experiments.hpp"
#include "mergelab/merging.hpp"
#include "mergelab/recmodel.hpp"
#include "mergelab/training.hpp"

namespace {

using namespace mergelab;

struct Args {
  std::string config_path;
  std::string out_dir = "out";
  std::string recipe;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
};

std::vector<std::uint64_t> seeds_of(const cfg::ExperimentConfig& c, const Args& a) {
  if (a.seed) return {*a.seed};
  return c.seeds;
}

int cmd_pretrain(const cfg::ExperimentConfig& c, const Args& a) {
  exp::Pipeline pipe(c, a.out_dir);
  for (std::uint64_t seed : seeds_of(c, a)) {
    const auto& base = pipe.base(seed);
    std::cout << "pretrain seed=" << seed << " -> " << pipe.base_path(seed) << " ("
              << base.param_count() << " params, " << base.layers.size() << " layers)\n";
  }
  return 0;
}

int cmd_finetune(const cfg::ExperimentConfig& c, const Args& a) {
  exp::Pipeline pipe(c, a.out_dir);
  for (std::uint64_t seed : seeds_of(c, a)) {
    for (const auto& ds : pipe.domains()) {
      pipe.finetuned(ds, seed);
      std::cout << "finetune " << ds.domain_id << " seed=" << seed << " -> "
                << pipe.ft_path(ds.domain_id, seed) << "\n";
    }
  }
  return 0;
}

// The merge stage consumes checkpoints and catalog files only; it never reads
// interaction logs.
int cmd_merge(const cfg::ExperimentConfig& c, const Args& a) {
  if (a.recipe.empty()) throw ConfigError("merge: --recipe is required (method name or file)");
  std::uint64_t seed = a.seed.value_or(c.seeds.front());

  cfg::MergeRecipe recipe;
  if (std::filesystem::exists(a.recipe) && !cfg::valid_method(a.recipe)) {
    recipe = cfg::load_merge_recipe(cfg::load_ini(a.recipe));
  } else {
    if (!cfg::valid_method(a.recipe)) throw ConfigError("merge: unknown method '" + a.recipe + "'");
    recipe.method = a.recipe;
  }
  if (recipe.base_path.empty())
    recipe.base_path = a.out_dir + "/ckpt/base_s" + std::to_string(seed) + ".ckpt";
  if (recipe.checkpoint_paths.empty()) {
    for (const auto& spec : c.domains)
      recipe.checkpoint_paths.push_back(a.out_dir + "/ckpt/ft_" + spec.domain_id + "_s" +
                                        std::to_string(seed) + ".ckpt");
  }
  if (recipe.catalog_paths.empty()) {
    for (const auto& spec : c.domains)
      recipe.catalog_paths.push_back(a.out_dir + "/catalogs/" + spec.domain_id + ".catalog");
  }
  if (recipe.catalog_paths.size() != recipe.checkpoint_paths.size())
    throw ConfigError("merge: checkpoint and catalog counts differ");

  rec::ParamSet base = ckpt::load_file(recipe.base_path);
  std::vector<rec::ParamSet> fts;
  std::vector<merging::TaskVector> taus;
  for (const auto& p : recipe.checkpoint_paths) {
    fts.push_back(ckpt::load_file(p));
    if (!fts.back().merge_compatible(base))
      throw ShapeError("merge: checkpoint " + p + " is not shape-compatible with the base (" +
                       std::to_string(fts.back().param_count()) + " vs " +
                       std::to_string(base.param_count()) + " params)");
    taus.push_back(merging::task_vector(fts.back(), base));
  }

  // Catalogs -> features (hash-derived) -> pseudo-users. No interaction data.
  std::vector<corpus::PseudoUserSet> pseudo(fts.size());
  std::vector<std::vector<Vec>> feats(fts.size());
  std::vector<merging::DomainInputs> inputs;
  for (std::size_t k = 0; k < fts.size(); ++k) {
    auto catalog = exp::read_catalog(recipe.catalog_paths[k]);
    if (catalog.empty()) throw ConfigError("merge: empty catalog " + recipe.catalog_paths[k]);
    feats[k] = corpus::featurize_items(catalog, c.dataset_opt.feature_dim,
                                       c.dataset_opt.feature_active, c.dataset_opt.feature_seed);
    pseudo[k].domain_id = fts[k].domain_id;
    for (std::size_t i = 0; i < catalog.size(); ++i) pseudo[k].sequences.push_back({i});
    inputs.push_back({&pseudo[k], &feats[k]});
  }

  auto out = exp::run_method(recipe.method, recipe.mode, base, taus, fts, inputs, c, seed);
  std::filesystem::create_directories(a.out_dir + "/ckpt");
  std::filesystem::create_directories(a.out_dir + "/logs");
  std::string merged_path =
      a.out_dir + "/ckpt/merged_" + recipe.method + "_s" + std::to_string(seed) + ".ckpt";
  ckpt::save_file(out.model, merged_path);
  if (out.adaptive)
    exp::write_trajectory(out.adaptive->trajectory,
                          a.out_dir + "/logs/traj_" + recipe.method + "_s" +
                              std::to_string(seed) + ".tsv",
                          c.config_hash);
  std::cout << "merged (" << recipe.method << ", " << fts.size() << " models) -> " << merged_path
            << "\n";
  return 0;
}

int cmd_eval(const cfg::ExperimentConfig& c, const Args& a) {
  if (a.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  rec::ParamSet model = ckpt::load_file(a.checkpoint);
  exp::Pipeline pipe(c, a.out_dir);
  std::uint64_t seed = a.seed.value_or(c.seeds.front());

  exp::ResultLog log;
  std::string rk = "recall@" + std::to_string(c.eval_k);
  std::string nk = "ndcg@" + std::to_string(c.eval_k);
  std::cout << "domain\trecall\tndcg\tnorm_recall\n";
  for (const auto& ds : pipe.domains()) {
    auto m = eval::recall_ndcg_at_k(model, ds, c.eval_k, c.score);
    log.add(ds.domain_id, "checkpoint", rk, seed, m.recall);
    log.add(ds.domain_id, "checkpoint", nk, seed, m.ndcg);
    std::string norm = "n/a";
    std::string ref_path = pipe.ft_path(ds.domain_id, seed);
    if (std::filesystem::exists(ref_path)) {
      auto refm = eval::recall_ndcg_at_k(ckpt::load_file(ref_path), ds, c.eval_k, c.score);
      if (auto nr = eval::normalize(m.recall, refm.recall)) {
        log.add(ds.domain_id, "checkpoint", "norm_" + rk, seed, *nr);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", *nr);
        norm = buf;
      }
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s\t%.4f\t%.4f\t%s", ds.domain_id.c_str(), m.recall, m.ndcg,
                  norm.c_str());
    std::cout << buf << "\n";
  }
  std::filesystem::create_directories(a.out_dir + "/results");
  log.write(a.out_dir + "/results/eval.tsv", c.config_hash);
  return 0;
}

int cmd_experiment(const cfg::ExperimentConfig& c, const Args& a) {
  if (a.recipe.empty()) throw ConfigError("experiment: --recipe is required");
  exp::Pipeline pipe(c, a.out_dir);
  if (a.recipe == "overall") {
    exp::run_overall(pipe);
  } else if (a.recipe == "scarcity") {
    exp::run_scarcity(pipe, pipe.domains().size() - 1);
  } else if (a.recipe == "unseen") {
    exp::run_unseen(pipe);
  } else if (a.recipe == "domain_count_sweep") {
    exp::run_domain_count_sweep(pipe);
  } else if (a.recipe == "lambda_sweep") {
    exp::run_lambda_sweep(pipe);
  } else if (a.recipe == "group_analysis") {
    exp::run_group_analysis(pipe);
  } else if (a.recipe == "dynamics") {
    for (std::uint64_t seed : seeds_of(c, a)) exp::run_dynamics(pipe, seed);
  } else {
    throw ConfigError("experiment: unknown recipe '" + a.recipe + "'");
  }
  std::cout << "experiment '" << a.recipe << "' complete; results under " << a.out_dir
            << "/results\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mergelab: merging domain-specific sequential recommenders"};
  app.require_subcommand(1);
  Args args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "experiment config file")->required();
    sub->add_option("--out", args.out_dir, "output directory");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&args](std::uint64_t s) { args.seed = s; }, "override config seeds");
  };

  auto* pre = app.add_subcommand("pretrain", "pre-train the shared base model");
  add_common(pre);
  auto* ft = app.add_subcommand("finetune", "fine-tune one model per domain");
  add_common(ft);
  auto* mg = app.add_subcommand("merge", "merge fine-tuned checkpoints");
  add_common(mg);
  mg->add_option("--recipe", args.recipe, "method name or recipe file");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev);
  ev->add_option("--checkpoint", args.checkpoint, "checkpoint to evaluate");
  auto* ex = app.add_subcommand("experiment", "run a full study recipe");
  add_common(ex);
  ex->add_option("--recipe", args.recipe,
                 "overall|scarcity|unseen|domain_count_sweep|group_analysis|lambda_sweep|dynamics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 2 : 0;
  }

  try {
    mergelab::cfg::ExperimentConfig config =
        mergelab::cfg::load_experiment_config(mergelab::cfg::load_ini(args.config_path));
    if (pre->parsed()) return cmd_pretrain(config, args);
    if (ft->parsed()) return cmd_finetune(config, args);
    if (mg->parsed()) return cmd_merge(config, args);
    if (ev->parsed()) return cmd_eval(config, args);
    if (ex->parsed()) return cmd_experiment(config, args);
  } catch (const mergelab::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mergelab::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
