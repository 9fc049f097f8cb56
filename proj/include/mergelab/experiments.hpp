#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mergelab/checkpoint.hpp"
#include "mergelab/common.hpp"
#include "mergelab/config.hpp"
#include "mergelab/corpus.hpp"
#include "mergelab/evaluation.hpp"
#include "mergelab/merging.hpp"
#include "mergelab/recmodel.hpp"
#include "mergelab/training.hpp"

namespace mergelab::exp {

inline constexpr const char* kVersion = "mergelab-0.1";

inline std::string manifest_header(std::uint64_t config_hash, const std::string& extra) {
  std::ostringstream os;
  os << "# " << kVersion << " config_hash=" << std::hex << config_hash << std::dec;
  if (!extra.empty()) os << " " << extra;
  os << "\n";
  return os.str();
}

inline void write_interactions_tsv(const std::vector<corpus::Interaction>& xs,
                                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write: " + path);
  for (const auto& it : xs) out << it.user_id << "\t" << it.item_id << "\t" << it.timestamp << "\n";
}

inline void write_catalog(const corpus::DomainDataset& ds, std::uint64_t config_hash,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write: " + path);
  out << manifest_header(config_hash, "domain=" + ds.domain_id);
  for (const auto& id : ds.catalog) out << id << "\n";
}

inline std::vector<std::string> read_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open catalog: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    out.push_back(line);
  }
  return out;
}

// --- result records -----------------------------------------------------

// `domain<TAB>method<TAB>metric<TAB>seed<TAB>value`
struct ResultRecord {
  std::string domain;
  std::string method;
  std::string metric;
  std::uint64_t seed = 0;
  double value = 0.0;
};

class ResultLog {
 public:
  void add(const std::string& domain, const std::string& method, const std::string& metric,
           std::uint64_t seed, double value) {
    records_.push_back({domain, method, metric, seed, value});
  }

  void write(const std::string& path, std::uint64_t config_hash) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write results: " + path);
    out << manifest_header(config_hash, "");
    for (const auto& r : records_) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6f", r.value);
      out << r.domain << "\t" << r.method << "\t" << r.metric << "\t" << r.seed << "\t" << buf
          << "\n";
    }
  }

  // Mean over seeds of the per-seed value for (domain, method, metric).
  std::optional<double> mean(const std::string& domain, const std::string& method,
                             const std::string& metric) const {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& r : records_)
      if (r.domain == domain && r.method == method && r.metric == metric) {
        acc += r.value;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return acc / static_cast<double>(n);
  }

  std::vector<double> samples(const std::string& domain, const std::string& method,
                              const std::string& metric) const {
    std::vector<double> out;
    for (const auto& r : records_)
      if (r.domain == domain && r.method == method && r.metric == metric) out.push_back(r.value);
    return out;
  }

  const std::vector<ResultRecord>& records() const { return records_; }

 private:
  std::vector<ResultRecord> records_;
};

// --- pipeline -----------------------------------------------------------

// Id-space offsets keep experiment, unseen, and pre-training corpora fully
// disjoint (the data-isolated setting plus a held-out base-model corpus).
inline constexpr std::size_t kUnseenOffset = 500;
inline constexpr std::size_t kPretrainOffset = 1000;

class Pipeline {
 public:
  Pipeline(cfg::ExperimentConfig config, std::string out_dir)
      : cfg_(std::move(config)), out_(std::move(out_dir)) {
    namespace fs = std::filesystem;
    for (const char* d : {"", "/corpora", "/catalogs", "/ckpt", "/logs", "/results"})
      fs::create_directories(out_ + d);
  }

  const cfg::ExperimentConfig& config() const { return cfg_; }
  const std::string& out_dir() const { return out_; }

  const std::vector<corpus::DomainDataset>& domains() {
    ensure_corpora();
    return domains_;
  }
  const std::vector<corpus::DomainDataset>& unseen_domains() {
    ensure_corpora();
    return unseen_;
  }

  std::string base_path(std::uint64_t seed) const {
    return out_ + "/ckpt/base_s" + std::to_string(seed) + ".ckpt";
  }
  std::string ft_path(const std::string& domain_id, std::uint64_t seed,
                      const std::string& tag = "") const {
    return out_ + "/ckpt/ft_" + domain_id + (tag.empty() ? "" : "_" + tag) + "_s" +
           std::to_string(seed) + ".ckpt";
  }
  std::string catalog_path(const std::string& domain_id) const {
    return out_ + "/catalogs/" + domain_id + ".catalog";
  }

  // Pre-trained base for one seed, cached on disk.
  const rec::ParamSet& base(std::uint64_t seed) {
    auto it = base_cache_.find(seed);
    if (it != base_cache_.end()) return it->second;
    ensure_corpora();
    std::string path = base_path(seed);
    rec::ParamSet p;
    if (std::filesystem::exists(path)) {
      p = ckpt::load_file(path);
    } else {
      train::TrainConfig tc = cfg_.pretrain;
      tc.seed = seed;
      tc.eval_k = cfg_.eval_k;
      std::ofstream log(out_ + "/logs/pretrain_s" + std::to_string(seed) + ".tsv");
      log << manifest_header(cfg_.config_hash, "seed=" + std::to_string(seed));
      auto res = train::pretrain_base(pretrain_, cfg_.dims, tc, epoch_logger(log));
      p = std::move(res.params);
      ckpt::save_file(p, path);
      p = ckpt::load_file(path);  // hold the float32-quantized values everywhere
    }
    return base_cache_.emplace(seed, std::move(p)).first->second;
  }

  // Fine-tuned model for one (dataset, seed), cached on disk. `tag`
  // distinguishes variants (scarcity subsamples, unseen references).
  const rec::ParamSet& finetuned(const corpus::DomainDataset& ds, std::uint64_t seed,
                                 const std::string& tag = "") {
    std::string key = ds.domain_id + "|" + tag + "|" + std::to_string(seed);
    auto it = ft_cache_.find(key);
    if (it != ft_cache_.end()) return it->second;
    std::string path = ft_path(ds.domain_id, seed, tag);
    rec::ParamSet p;
    if (std::filesystem::exists(path)) {
      p = ckpt::load_file(path);
    } else {
      train::TrainConfig tc = cfg_.finetune;
      tc.seed = seed;
      tc.eval_k = cfg_.eval_k;
      std::ofstream log(out_ + "/logs/finetune_" + ds.domain_id +
                        (tag.empty() ? "" : "_" + tag) + "_s" + std::to_string(seed) + ".tsv");
      log << manifest_header(cfg_.config_hash, "seed=" + std::to_string(seed));
      auto res = train::finetune(base(seed), ds, tc, epoch_logger(log));
      p = std::move(res.params);
      ckpt::save_file(p, path);
      p = ckpt::load_file(path);
    }
    return ft_cache_.emplace(key, std::move(p)).first->second;
  }

  // Merging-stage inputs for a subset of domains: catalogs, features, and
  // pseudo-users only. No interaction sequences cross this boundary.
  struct MergeInputs {
    std::vector<corpus::PseudoUserSet> pseudo;
    std::vector<merging::DomainInputs> inputs;   // views into this struct
    std::vector<const corpus::DomainDataset*> datasets;  // eval-side handles
  };

  MergeInputs merge_inputs(const std::vector<std::size_t>& domain_idx) {
    ensure_corpora();
    MergeInputs mi;
    mi.pseudo.reserve(domain_idx.size());
    for (std::size_t d : domain_idx) {
      mi.pseudo.push_back(corpus::build_pseudo_users(domains_[d]));
      mi.datasets.push_back(&domains_[d]);
    }
    for (std::size_t i = 0; i < domain_idx.size(); ++i)
      mi.inputs.push_back({&mi.pseudo[i], &domains_[domain_idx[i]].features});
    return mi;
  }

  train::EpochLogger epoch_logger(std::ofstream& log) {
    return [&log](std::size_t epoch, const std::string& split, const std::string& metric,
                  double value) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6f", value);
      log << epoch << "\t" << split << "\t" << metric << "\t" << buf << "\n";
    };
  }

  void ensure_corpora() {
    if (corpora_ready_) return;
    if (cfg_.synthetic) {
      auto raw = corpus::synthesize_domains(cfg_.domains, cfg_.corpus_seed, 0);
      for (std::size_t k = 0; k < raw.size(); ++k) {
        domains_.push_back(
            corpus::build_dataset(raw[k], cfg_.domains[k].domain_id, cfg_.dataset_opt));
        write_interactions_tsv(raw[k], out_ + "/corpora/" + cfg_.domains[k].domain_id + ".tsv");
      }
      auto raw_u = corpus::synthesize_domains(cfg_.unseen_domains, cfg_.corpus_seed, kUnseenOffset);
      for (std::size_t k = 0; k < raw_u.size(); ++k)
        unseen_.push_back(
            corpus::build_dataset(raw_u[k], cfg_.unseen_domains[k].domain_id, cfg_.dataset_opt));
    } else {
      for (const auto& src : cfg_.tsv_sources)
        domains_.push_back(
            corpus::build_dataset(corpus::ingest_tsv(src.path), src.domain_id, cfg_.dataset_opt));
    }
    for (const auto& ds : domains_) write_catalog(ds, cfg_.config_hash, catalog_path(ds.domain_id));
    auto raw_p = corpus::synthesize_domains(cfg_.pretrain_domains, cfg_.corpus_seed, kPretrainOffset);
    for (std::size_t k = 0; k < raw_p.size(); ++k)
      pretrain_.push_back(
          corpus::build_dataset(raw_p[k], cfg_.pretrain_domains[k].domain_id, cfg_.dataset_opt));
    corpora_ready_ = true;
  }

  const std::vector<corpus::DomainDataset>& pretrain_mix() {
    ensure_corpora();
    return pretrain_;
  }

 private:
  cfg::ExperimentConfig cfg_;
  std::string out_;
  bool corpora_ready_ = false;
  std::vector<corpus::DomainDataset> domains_, unseen_, pretrain_;
  std::map<std::uint64_t, rec::ParamSet> base_cache_;
  std::map<std::string, rec::ParamSet> ft_cache_;
};

// --- method dispatch ----------------------------------------------------

struct MethodOutput {
  rec::ParamSet model;
  std::optional<merging::AdaptiveMergeResult> adaptive;  // set for learned methods
};

// Runs one merging method over the given seed's artifacts.
inline MethodOutput run_method(const std::string& method, merging::WeightMode mode,
                               const rec::ParamSet& base,
                               const std::vector<merging::TaskVector>& taus,
                               const std::vector<rec::ParamSet>& finetuned,
                               const std::vector<merging::DomainInputs>& inputs,
                               const cfg::ExperimentConfig& cfg, std::uint64_t seed,
                               const merging::StepHook& hook = nullptr) {
  MethodOutput out;
  merging::AdaptiveMergeConfig mc = cfg.merge;
  mc.seed = seed;
  if (method == "average") {
    out.model = merging::weight_averaging(finetuned);
  } else if (method == "task_arithmetic") {
    auto w = merging::MergeWeights::uniform(merging::WeightMode::domainwise, taus.size(),
                                            base.layers.size(), cfg.task_arithmetic_weight);
    out.model = merging::merge_domainwise(base, taus, w);
  } else if (method == "ties") {
    out.model = merging::ties_merge(base, taus, cfg.ties);
  } else if (method == "adamerging") {
    auto res = merging::adamerging(base, taus, inputs, mode, mc, hook);
    out.model = res.merged;
    out.adaptive = std::move(res);
  } else if (method == "mergerec") {
    auto res = merging::mergerec(base, taus, finetuned, inputs, mode, mc, hook);
    out.model = res.merged;
    out.adaptive = std::move(res);
  } else {
    throw ConfigError("unknown merging method: " + method);
  }
  return out;
}

inline void write_trajectory(const merging::MergeTrajectory& tj, const std::string& path,
                             std::uint64_t config_hash) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write trajectory: " + path);
  out << manifest_header(config_hash, "");
  char buf[64];
  auto emit = [&](std::size_t step, const std::string& name, double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    out << step << "\t" << name << "\t" << buf << "\n";
  };
  for (std::size_t s = 0; s < tj.weights.size(); ++s)
    for (std::size_t i = 0; i < tj.weights[s].size(); ++i)
      emit(s, "w" + std::to_string(i), tj.weights[s][i]);
  for (std::size_t s = 0; s < tj.loss_total.size(); ++s) {
    emit(s, "loss_total", tj.loss_total[s]);
    if (s < tj.loss_rec.size()) emit(s, "loss_rec", tj.loss_rec[s]);
    if (s < tj.loss_kd.size()) emit(s, "loss_kd", tj.loss_kd[s]);
    if (s < tj.loss_entropy.size()) emit(s, "loss_entropy", tj.loss_entropy[s]);
  }
}

// --- recipes ------------------------------------------------------------

inline const std::vector<std::string>& overall_methods() {
  static const std::vector<std::string> methods = {
      "base",           "average",        "task_arithmetic", "ties",
      "adamerging_dw",  "mergerec_dw",    "mergerec_lw"};
  return methods;
}

namespace detail {

inline std::pair<std::string, merging::WeightMode> split_method(const std::string& name) {
  if (name.ends_with("_lw")) return {name.substr(0, name.size() - 3), merging::WeightMode::layerwise};
  if (name.ends_with("_dw")) return {name.substr(0, name.size() - 3), merging::WeightMode::domainwise};
  return {name, merging::WeightMode::domainwise};
}

}  // namespace detail

struct OverallSummary {
  ResultLog log;                      // absolute + normalized records
  std::map<std::string, double> avg_norm_recall;  // method -> mean over seeds of per-domain avg
  eval::WelchResult mergerec_vs_best;
};

// Every method x every domain, absolute and fine-tune-normalized R@k / N@k,
// across all config seeds. Welch one-tailed test: mergerec_dw vs the best
// baseline on average normalized R@k.
inline OverallSummary run_overall(Pipeline& pipe, std::ostream& table_out = std::cout) {
  const auto& cfg = pipe.config();
  const auto& domains = pipe.domains();
  std::vector<std::size_t> all_idx(domains.size());
  for (std::size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = i;

  OverallSummary sum;
  std::string rk = "recall@" + std::to_string(cfg.eval_k);
  std::string nk = "ndcg@" + std::to_string(cfg.eval_k);

  for (std::uint64_t seed : cfg.seeds) {
    const rec::ParamSet& base = pipe.base(seed);
    std::vector<rec::ParamSet> fts;
    std::vector<merging::TaskVector> taus;
    for (const auto& ds : domains) {
      fts.push_back(pipe.finetuned(ds, seed));
      taus.push_back(merging::task_vector(fts.back(), base));
    }
    auto mi = pipe.merge_inputs(all_idx);

    // reference (fine-tuned) metrics per domain
    std::vector<eval::DomainMetrics> refs;
    for (std::size_t d = 0; d < domains.size(); ++d) {
      refs.push_back(eval::recall_ndcg_at_k(fts[d], domains[d], cfg.eval_k, cfg.score));
      sum.log.add(domains[d].domain_id, "finetuned", rk, seed, refs[d].recall);
      sum.log.add(domains[d].domain_id, "finetuned", nk, seed, refs[d].ndcg);
      sum.log.add(domains[d].domain_id, "finetuned", "norm_" + rk, seed, 100.0);
      sum.log.add(domains[d].domain_id, "finetuned", "norm_" + nk, seed, 100.0);
    }

    for (const auto& name : overall_methods()) {
      rec::ParamSet model;
      if (name == "base") {
        model = base;
      } else {
        auto [method, mode] = detail::split_method(name);
        auto out = run_method(method, mode, base, taus, fts, mi.inputs, cfg, seed);
        model = std::move(out.model);
        if (out.adaptive)
          write_trajectory(out.adaptive->trajectory,
                           pipe.out_dir() + "/logs/traj_" + name + "_s" + std::to_string(seed) +
                               ".tsv",
                           cfg.config_hash);
      }
      double norm_r_acc = 0.0;
      for (std::size_t d = 0; d < domains.size(); ++d) {
        auto m = eval::recall_ndcg_at_k(model, domains[d], cfg.eval_k, cfg.score);
        sum.log.add(domains[d].domain_id, name, rk, seed, m.recall);
        sum.log.add(domains[d].domain_id, name, nk, seed, m.ndcg);
        auto nr = eval::normalize(m.recall, refs[d].recall);
        auto nn = eval::normalize(m.ndcg, refs[d].ndcg);
        if (nr) sum.log.add(domains[d].domain_id, name, "norm_" + rk, seed, *nr);
        if (nn) sum.log.add(domains[d].domain_id, name, "norm_" + nk, seed, *nn);
        norm_r_acc += nr.value_or(0.0);
      }
      sum.log.add("avg", name, "norm_" + rk, seed, norm_r_acc / static_cast<double>(domains.size()));
    }
  }

  for (const auto& name : overall_methods())
    sum.avg_norm_recall[name] = sum.log.mean("avg", name, "norm_" + rk).value_or(0.0);
  sum.avg_norm_recall["finetuned"] = 100.0;

  // Welch test: mergerec_dw vs the best non-mergerec baseline.
  std::string best;
  double best_val = -1.0;
  for (const auto& name : overall_methods()) {
    if (name.starts_with("mergerec")) continue;
    if (sum.avg_norm_recall[name] > best_val) {
      best_val = sum.avg_norm_recall[name];
      best = name;
    }
  }
  auto a = sum.log.samples("avg", "mergerec_dw", "norm_" + rk);
  auto b = sum.log.samples("avg", best, "norm_" + rk);
  if (a.size() >= 2 && b.size() >= 2) sum.mergerec_vs_best = eval::one_tailed_welch_t(a, b);

  sum.log.write(pipe.out_dir() + "/results/overall.tsv", cfg.config_hash);

  auto fmt = [](std::optional<double> v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", *v);
    return std::string(buf);
  };
  table_out << "== overall: normalized " << rk << " (%) ==\n";
  table_out << std::left << std::setw(18) << "method";
  for (const auto& ds : domains) table_out << std::setw(10) << ds.domain_id;
  table_out << std::setw(10) << "avg" << "\n";
  auto row = [&](const std::string& name) {
    table_out << std::left << std::setw(18) << name;
    for (const auto& ds : domains)
      table_out << std::setw(10) << fmt(sum.log.mean(ds.domain_id, name, "norm_" + rk));
    auto av = (name == "finetuned") ? std::optional<double>(100.0)
                                    : sum.log.mean("avg", name, "norm_" + rk);
    table_out << std::setw(10) << fmt(av) << "\n";
  };
  row("finetuned");
  for (const auto& name : overall_methods()) row(name);
  table_out << "welch one-tailed p (mergerec_dw > " << best << "): " << sum.mergerec_vs_best.p
            << "\n";
  return sum;
}

struct DynamicsSummary {
  std::vector<eval::ProbePoint> adamerging, mergerec;
};

// Cross-entropy and prediction-entropy traces on a fixed held-out
// pseudo-user probe set, for both adaptive methods.
inline DynamicsSummary run_dynamics(Pipeline& pipe, std::uint64_t seed, std::size_t probe_every = 25) {
  const auto& cfg = pipe.config();
  const auto& domains = pipe.domains();
  std::vector<std::size_t> all_idx(domains.size());
  for (std::size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = i;

  const rec::ParamSet& base = pipe.base(seed);
  std::vector<rec::ParamSet> fts;
  std::vector<merging::TaskVector> taus;
  for (const auto& ds : domains) {
    fts.push_back(pipe.finetuned(ds, seed));
    taus.push_back(merging::task_vector(fts.back(), base));
  }

  // Hold out every 5th pseudo-user per domain for the probe; optimize on the
  // rest. The probe is fixed before optimization.
  auto mi = pipe.merge_inputs(all_idx);
  std::vector<corpus::PseudoUserSet> opt_sets(domains.size());
  struct DomainProbe {
    eval::ProbeSet probe;
  };
  std::vector<DomainProbe> probes(domains.size());
  auto teacher_cache = merging::teacher_pass(fts, mi.inputs, cfg.score);
  for (std::size_t k = 0; k < domains.size(); ++k) {
    opt_sets[k].domain_id = domains[k].domain_id;
    probes[k].probe.features = &domains[k].features;
    for (std::size_t i = 0; i < mi.pseudo[k].sequences.size(); ++i) {
      if (i % 5 == 0) {
        probes[k].probe.sequences.push_back(mi.pseudo[k].sequences[i]);
        probes[k].probe.labels.push_back(teacher_cache.labels[k][i]);
      } else {
        opt_sets[k].sequences.push_back(mi.pseudo[k].sequences[i]);
      }
    }
  }
  std::vector<merging::DomainInputs> opt_inputs;
  for (std::size_t k = 0; k < domains.size(); ++k)
    opt_inputs.push_back({&opt_sets[k], &domains[k].features});

  merging::AdaptiveMergeConfig mc = cfg.merge;
  mc.seed = seed;

  DynamicsSummary sum;
  auto make_hook = [&](std::vector<eval::ProbePoint>& trace) {
    return [&, probe_every](std::size_t step, const rec::ParamSet& merged) {
      if (step % probe_every != 0 && step != mc.steps) return;
      eval::ProbePoint pt;
      pt.step = step;
      double ce = 0.0, H = 0.0;
      for (const auto& dp : probes) {
        auto p = eval::probe_model(merged, dp.probe, step, cfg.score);
        ce += p.cross_entropy;
        H += p.entropy;
      }
      pt.cross_entropy = ce / static_cast<double>(probes.size());
      pt.entropy = H / static_cast<double>(probes.size());
      trace.push_back(pt);
    };
  };

  merging::adamerging(base, taus, opt_inputs, merging::WeightMode::domainwise, mc,
                      make_hook(sum.adamerging));
  merging::mergerec(base, taus, fts, opt_inputs, merging::WeightMode::domainwise, mc,
                    make_hook(sum.mergerec));

  std::ofstream out(pipe.out_dir() + "/results/dynamics_s" + std::to_string(seed) + ".tsv");
  out << manifest_header(cfg.config_hash, "seed=" + std::to_string(seed));
  char buf[64];
  auto emit = [&](const char* method, const std::vector<eval::ProbePoint>& trace) {
    for (const auto& pt : trace) {
      std::snprintf(buf, sizeof(buf), "%.6f", pt.cross_entropy);
      out << pt.step << "\t" << method << "_ce\t" << buf << "\n";
      std::snprintf(buf, sizeof(buf), "%.6f", pt.entropy);
      out << pt.step << "\t" << method << "_entropy\t" << buf << "\n";
    }
  };
  emit("adamerging", sum.adamerging);
  emit("mergerec", sum.mergerec);
  return sum;
}

// Scarce-data merging: subsample k% of the target domain's users before
// fine-tuning, then merge the scarce target model with all source models.
inline ResultLog run_scarcity(Pipeline& pipe, std::size_t target_idx,
                              const std::vector<double>& ratios = {1.0, 5.0, 10.0, 100.0}) {
  const auto& cfg = pipe.config();
  const auto& domains = pipe.domains();
  if (target_idx >= domains.size()) throw ConfigError("scarcity: bad target index");
  std::string rk = "recall@" + std::to_string(cfg.eval_k);

  ResultLog log;
  for (std::uint64_t seed : cfg.seeds) {
    const rec::ParamSet& base = pipe.base(seed);
    const corpus::DomainDataset& target = domains[target_idx];
    auto ref = eval::recall_ndcg_at_k(pipe.finetuned(target, seed), target, cfg.eval_k, cfg.score);

    for (double ratio : ratios) {
      // User subsample, seed-derived.
      corpus::DomainDataset scarce = target;
      if (ratio < 100.0) {
        std::mt19937_64 rng(seed ^ fnv1a(target.domain_id) ^
                            static_cast<std::uint64_t>(ratio * 1000));
        std::vector<std::size_t> order(target.users.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::size_t keep = std::max<std::size_t>(
            1, static_cast<std::size_t>(target.users.size() * ratio / 100.0));
        std::sort(order.begin(), order.begin() + keep);
        scarce.users.clear();
        for (std::size_t i = 0; i < keep; ++i) scarce.users.push_back(target.users[order[i]]);
      }
      std::string tag = "r" + std::to_string(static_cast<int>(ratio * 10));
      const rec::ParamSet& scarce_ft = pipe.finetuned(scarce, seed, tag);

      std::vector<rec::ParamSet> fts;
      std::vector<merging::TaskVector> taus;
      std::vector<std::size_t> source_idx;
      for (std::size_t d = 0; d < domains.size(); ++d) {
        if (d == target_idx) continue;
        source_idx.push_back(d);
        fts.push_back(pipe.finetuned(domains[d], seed));
        taus.push_back(merging::task_vector(fts.back(), base));
      }
      fts.push_back(scarce_ft);
      taus.push_back(merging::task_vector(scarce_ft, base));

      auto mi = pipe.merge_inputs(source_idx);
      // The scarce target contributes pseudo-users from its catalog only.
      corpus::PseudoUserSet target_pseudo = corpus::build_pseudo_users(target);
      std::vector<merging::DomainInputs> inputs = mi.inputs;
      inputs.push_back({&target_pseudo, &target.features});

      std::string rtag = "ratio" + std::to_string(static_cast<int>(ratio));
      auto scarce_m = eval::recall_ndcg_at_k(scarce_ft, target, cfg.eval_k, cfg.score);
      log.add(target.domain_id, "finetuned_" + rtag, rk, seed, scarce_m.recall);
      for (const std::string& name :
           {std::string("task_arithmetic"), std::string("ties"), std::string("adamerging_dw"),
            std::string("mergerec_dw")}) {
        auto [method, mode] = detail::split_method(name);
        auto out = run_method(method, mode, base, taus, fts, inputs, cfg, seed);
        auto m = eval::recall_ndcg_at_k(out.model, target, cfg.eval_k, cfg.score);
        log.add(target.domain_id, name + "_" + rtag, rk, seed, m.recall);
        auto nr = eval::normalize(m.recall, ref.recall);
        if (nr) log.add(target.domain_id, name + "_" + rtag, "norm_" + rk, seed, *nr);
      }
    }
  }
  log.write(pipe.out_dir() + "/results/scarcity.tsv", cfg.config_hash);
  return log;
}

// Unseen-domain merging: merge the source-domain models only and evaluate on
// domains that contributed nothing to the merge.
inline ResultLog run_unseen(Pipeline& pipe) {
  const auto& cfg = pipe.config();
  const auto& sources = pipe.domains();
  const auto& unseen = pipe.unseen_domains();
  if (unseen.empty()) throw ConfigError("unseen: config declares no unseen_domains");
  std::string rk = "recall@" + std::to_string(cfg.eval_k);

  std::vector<std::size_t> src_idx(sources.size());
  for (std::size_t i = 0; i < src_idx.size(); ++i) src_idx[i] = i;

  ResultLog log;
  for (std::uint64_t seed : cfg.seeds) {
    const rec::ParamSet& base = pipe.base(seed);
    std::vector<rec::ParamSet> fts;
    std::vector<merging::TaskVector> taus;
    for (const auto& ds : sources) {
      fts.push_back(pipe.finetuned(ds, seed));
      taus.push_back(merging::task_vector(fts.back(), base));
    }
    auto mi = pipe.merge_inputs(src_idx);

    for (const std::string& name :
         {std::string("base"), std::string("average"), std::string("task_arithmetic"),
          std::string("ties"), std::string("adamerging_dw"), std::string("mergerec_dw")}) {
      rec::ParamSet model;
      if (name == "base") {
        model = base;
      } else {
        auto [method, mode] = detail::split_method(name);
        model = run_method(method, mode, base, taus, fts, mi.inputs, cfg, seed).model;
      }
      for (const auto& uds : unseen) {
        auto m = eval::recall_ndcg_at_k(model, uds, cfg.eval_k, cfg.score);
        log.add(uds.domain_id, name, rk, seed, m.recall);
        // reference: a fine-tuned model on the unseen domain itself
        auto refm = eval::recall_ndcg_at_k(pipe.finetuned(uds, seed, "ref"), uds, cfg.eval_k,
                                           cfg.score);
        auto nr = eval::normalize(m.recall, refm.recall);
        if (nr) log.add(uds.domain_id, name, "norm_" + rk, seed, *nr);
      }
    }
  }
  log.write(pipe.out_dir() + "/results/unseen.tsv", cfg.config_hash);
  return log;
}

// Normalized average performance as the number of merged domains grows.
inline ResultLog run_domain_count_sweep(Pipeline& pipe) {
  const auto& cfg = pipe.config();
  const auto& domains = pipe.domains();
  std::string rk = "recall@" + std::to_string(cfg.eval_k);
  ResultLog log;

  for (std::uint64_t seed : cfg.seeds) {
    const rec::ParamSet& base = pipe.base(seed);
    for (std::size_t count = 2; count <= domains.size(); ++count) {
      std::vector<std::size_t> idx(count);
      for (std::size_t i = 0; i < count; ++i) idx[i] = i;
      std::vector<rec::ParamSet> fts;
      std::vector<merging::TaskVector> taus;
      for (std::size_t d : idx) {
        fts.push_back(pipe.finetuned(domains[d], seed));
        taus.push_back(merging::task_vector(fts.back(), base));
      }
      auto mi = pipe.merge_inputs(idx);
      for (const std::string& name :
           {std::string("task_arithmetic"), std::string("ties"), std::string("adamerging_dw"),
            std::string("mergerec_dw")}) {
        auto [method, mode] = detail::split_method(name);
        auto out = run_method(method, mode, base, taus, fts, mi.inputs, cfg, seed);
        double acc = 0.0;
        for (std::size_t d : idx) {
          auto m = eval::recall_ndcg_at_k(out.model, domains[d], cfg.eval_k, cfg.score);
          auto ref = eval::recall_ndcg_at_k(fts[d], domains[d], cfg.eval_k, cfg.score);
          acc += eval::normalize(m.recall, ref.recall).value_or(0.0);
        }
        log.add("k" + std::to_string(count), name, "norm_" + rk, seed,
                acc / static_cast<double>(count));
      }
    }
  }
  log.write(pipe.out_dir() + "/results/domain_count_sweep.tsv", cfg.config_hash);
  return log;
}

// Lambda grid x {domainwise, layerwise}, average normalized R@k.
inline ResultLog run_lambda_sweep(Pipeline& pipe,
                                  const std::vector<double>& lambdas = {0, 1, 10, 100, 1000,
                                                                        10000}) {
  const auto& cfg = pipe.config();
  const auto& domains = pipe.domains();
  std::string rk = "recall@" + std::to_string(cfg.eval_k);
  std::vector<std::size_t> all_idx(domains.size());
  for (std::size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = i;

  ResultLog log;
  for (std::uint64_t seed : cfg.seeds) {
    const rec::ParamSet& base = pipe.base(seed);
    std::vector<rec::ParamSet> fts;
    std::vector<merging::TaskVector> taus;
    for (const auto& ds : domains) {
      fts.push_back(pipe.finetuned(ds, seed));
      taus.push_back(merging::task_vector(fts.back(), base));
    }
    auto mi = pipe.merge_inputs(all_idx);
    for (double lambda : lambdas) {
      for (auto mode : {merging::WeightMode::domainwise, merging::WeightMode::layerwise}) {
        merging::AdaptiveMergeConfig mc = cfg.merge;
        mc.seed = seed;
        mc.lambda = lambda;
        auto res = merging::mergerec(base, taus, fts, mi.inputs, mode, mc);
        double acc = 0.0;
        for (std::size_t d = 0; d < domains.size(); ++d) {
          auto m = eval::recall_ndcg_at_k(res.merged, domains[d], cfg.eval_k, cfg.score);
          auto ref = eval::recall_ndcg_at_k(fts[d], domains[d], cfg.eval_k, cfg.score);
          acc += eval::normalize(m.recall, ref.recall).value_or(0.0);
        }
        std::string tag = (mode == merging::WeightMode::domainwise) ? "dw" : "lw";
        log.add("lambda" + std::to_string(static_cast<long long>(lambda)), "mergerec_" + tag,
                "norm_" + rk, seed, acc / static_cast<double>(domains.size()));
      }
    }
  }
  log.write(pipe.out_dir() + "/results/lambda_sweep.tsv", cfg.config_hash);
  return log;
}

// Per-group (history length x item popularity) normalized metrics.
inline ResultLog run_group_analysis(Pipeline& pipe) {
  const auto& cfg = pipe.config();
  const auto& domains = pipe.domains();
  std::vector<std::size_t> all_idx(domains.size());
  for (std::size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = i;
  std::string rk = "recall@" + std::to_string(cfg.eval_k);

  ResultLog log;
  for (std::uint64_t seed : cfg.seeds) {
    const rec::ParamSet& base = pipe.base(seed);
    std::vector<rec::ParamSet> fts;
    std::vector<merging::TaskVector> taus;
    for (const auto& ds : domains) {
      fts.push_back(pipe.finetuned(ds, seed));
      taus.push_back(merging::task_vector(fts.back(), base));
    }
    auto mi = pipe.merge_inputs(all_idx);
    for (const std::string& name :
         {std::string("task_arithmetic"), std::string("adamerging_dw"),
          std::string("mergerec_dw")}) {
      auto [method, mode] = detail::split_method(name);
      auto out = run_method(method, mode, base, taus, fts, mi.inputs, cfg, seed);
      for (std::size_t d = 0; d < domains.size(); ++d) {
        auto bins = eval::default_bins(domains[d]);
        auto rep = eval::group_analysis(out.model, domains[d], bins, cfg.eval_k, cfg.score);
        auto ref = eval::group_analysis(fts[d], domains[d], bins, cfg.eval_k, cfg.score);
        auto emit = [&](const std::vector<eval::GroupMetrics>& gs,
                        const std::vector<eval::GroupMetrics>& rs) {
          for (std::size_t g = 0; g < gs.size(); ++g) {
            if (gs[g].count == 0) continue;
            auto nr = eval::normalize(gs[g].metrics.recall, rs[g].metrics.recall);
            if (nr)
              log.add(domains[d].domain_id + ":" + gs[g].label, name, "norm_" + rk, seed, *nr);
          }
        };
        emit(rep.by_seq_len, ref.by_seq_len);
        emit(rep.by_popularity, ref.by_popularity);
      }
    }
  }
  log.write(pipe.out_dir() + "/results/group_analysis.tsv", cfg.config_hash);
  return log;
}

}  // namespace mergelab::exp
