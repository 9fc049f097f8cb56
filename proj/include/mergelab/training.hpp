#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mergelab/common.hpp"
#include "mergelab/corpus.hpp"
#include "mergelab/evaluation.hpp"
#include "mergelab/recmodel.hpp"

namespace mergelab::train {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a flat coefficient vector; also the building block for the
// ParamSet-shaped variant below.
struct FlatAdam {
  AdamConfig cfg;
  Vec m, v;
  std::size_t step = 0;

  explicit FlatAdam(std::size_t n, AdamConfig c = {}) : cfg(c), m(n, 0.0), v(n, 0.0) {}

  void update(Vec& params, const Vec& grad) {
    if (params.size() != m.size() || grad.size() != m.size())
      throw ShapeError("adam: size mismatch");
    for (double g : grad)
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient");
    ++step;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
};

struct AdamState {
  AdamConfig cfg;
  rec::GradSet m, v;
  std::size_t step = 0;

  static AdamState zeros_like(const rec::ParamSet& p, AdamConfig c = {}) {
    AdamState st;
    st.cfg = c;
    st.m = rec::GradSet::zeros_like(p);
    st.v = rec::GradSet::zeros_like(p);
    return st;
  }
};

inline void adam_step(rec::ParamSet& params, const rec::GradSet& grad, AdamState& st) {
  if (grad.layers.size() != params.layers.size()) throw ShapeError("adam_step: layer mismatch");
  ++st.step;
  double bc1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step));
  auto upd = [&](double& p, double g, double& m, double& v) {
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
    m = st.cfg.beta1 * m + (1.0 - st.cfg.beta1) * g;
    v = st.cfg.beta2 * v + (1.0 - st.cfg.beta2) * g * g;
    p -= st.cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + st.cfg.eps);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& pl = params.layers[l];
    const auto& gl = grad.layers[l];
    if (!pl.weight.same_shape(gl.weight) || pl.bias.size() != gl.bias.size())
      throw ShapeError("adam_step: shape mismatch at layer " + std::to_string(l));
    for (std::size_t i = 0; i < pl.weight.data.size(); ++i)
      upd(pl.weight.data[i], gl.weight.data[i], st.m.layers[l].weight.data[i],
          st.v.layers[l].weight.data[i]);
    for (std::size_t i = 0; i < pl.bias.size(); ++i)
      upd(pl.bias[i], gl.bias[i], st.m.layers[l].bias[i], st.v.layers[l].bias[i]);
  }
}

enum class NegativeMode { full_catalog, in_batch };

struct TrainConfig {
  std::size_t max_epochs = 50;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  NegativeMode negatives = NegativeMode::full_catalog;
  std::size_t patience = 5;  // early stopping on validation R@10
  std::size_t eval_k = 10;
  rec::ScoreOptions score;
};

// `epoch<TAB>split<TAB>metric<TAB>value`
using EpochLogger = std::function<void(std::size_t epoch, const std::string& split,
                                       const std::string& metric, double value)>;

struct TrainPair {
  std::size_t domain = 0;  // index into the dataset list
  std::vector<std::size_t> prefix;
  std::size_t target = 0;
};

inline std::vector<TrainPair> training_pairs(const std::vector<const corpus::DomainDataset*>& dss) {
  std::vector<TrainPair> pairs;
  for (std::size_t d = 0; d < dss.size(); ++d)
    for (const auto& u : dss[d]->users)
      for (std::size_t j = 1; j < u.train.size(); ++j)
        pairs.push_back({d, std::vector<std::size_t>(u.train.begin(), u.train.begin() + j),
                         u.train[j]});
  return pairs;
}

// Validation R@k: rank the held-out validation item given the train history.
inline double validation_recall(const rec::ParamSet& p, const corpus::DomainDataset& ds,
                                std::size_t k, const rec::ScoreOptions& opt) {
  auto items = rec::item_forwards(p, ds.features);
  double hits = 0.0;
  for (const auto& u : ds.users) {
    Vec rep = rec::user_representation(p, u.train, ds.features, opt.gamma);
    Vec scores(ds.catalog.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
      scores[i] = rec::safe_cosine(rep, items[i].inputs.back(), nullptr);
    double sv = scores[u.valid];
    std::size_t rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (i == u.valid) continue;
      if (scores[i] > sv || (scores[i] == sv && i < u.valid)) ++rank;
    }
    if (rank <= k) hits += 1.0;
  }
  return ds.users.empty() ? 0.0 : hits / static_cast<double>(ds.users.size());
}

namespace detail {

inline double run_batch(rec::ParamSet& params, const std::vector<const corpus::DomainDataset*>& dss,
                        const std::vector<TrainPair>& batch, const TrainConfig& cfg,
                        AdamState& adam) {
  double loss_sum = 0.0;
  rec::GradSet total = rec::GradSet::zeros_like(params);
  // Samples grouped per domain so each domain's item encoder passes are shared.
  std::vector<std::vector<const TrainPair*>> by_domain(dss.size());
  for (const auto& p : batch) by_domain[p.domain].push_back(&p);

  for (std::size_t d = 0; d < dss.size(); ++d) {
    if (by_domain[d].empty()) continue;
    const auto& ds = *dss[d];
    if (cfg.negatives == NegativeMode::full_catalog) {
      rec::BatchAccumulator acc(params, ds.features, cfg.score);
      for (const TrainPair* tp : by_domain[d])
        loss_sum += acc.add_ce(tp->prefix, tp->target, ds.features);
      total.add(acc.finalize());
    } else {
      // In-batch negatives: candidates are the batch's distinct positives.
      std::vector<std::size_t> cand;
      std::unordered_map<std::size_t, std::size_t> pos_of;
      for (const TrainPair* tp : by_domain[d])
        if (!pos_of.count(tp->target)) {
          pos_of[tp->target] = cand.size();
          cand.push_back(tp->target);
        }
      std::vector<Vec> sub;
      for (std::size_t i : cand) sub.push_back(ds.features[i]);
      rec::BatchAccumulator acc(params, sub, cfg.score);
      for (const TrainPair* tp : by_domain[d]) {
        // Sequences are re-indexed into the sub-catalog only for the positive;
        // the user input is pooled from raw features directly.
        std::vector<std::size_t> raw_prefix = tp->prefix;
        std::vector<Vec> prefix_feats;
        std::vector<std::size_t> local_prefix;
        for (std::size_t i : raw_prefix) {
          local_prefix.push_back(prefix_feats.size());
          prefix_feats.push_back(ds.features[i]);
        }
        // BatchAccumulator pools from the feature list passed per call.
        loss_sum += acc.add_ce(local_prefix, pos_of[tp->target], prefix_feats);
      }
      total.add(acc.finalize());
    }
  }
  total.scale(1.0 / static_cast<double>(batch.size()));
  adam_step(params, total, adam);
  return loss_sum / static_cast<double>(batch.size());
}

}  // namespace detail

struct TrainResult {
  rec::ParamSet params;
  std::vector<double> epoch_loss;        // mean CE per epoch
  std::vector<double> epoch_valid_recall;
  std::size_t best_epoch = 0;
};

// Shared training loop: next-item CE over the union of the given domains,
// seed-derived batch order, early stopping on mean validation R@k.
inline TrainResult train_loop(rec::ParamSet init, const std::vector<const corpus::DomainDataset*>& dss,
                              const TrainConfig& cfg, const EpochLogger& log = nullptr) {
  TrainResult res;
  res.params = std::move(init);
  if (cfg.max_epochs == 0) return res;

  auto pairs = training_pairs(dss);
  if (pairs.empty()) throw ConfigError("train_loop: no training pairs");
  AdamState adam = AdamState::zeros_like(res.params, {.lr = cfg.lr});
  std::mt19937_64 rng(cfg.seed ^ 0x5eedba5eull);

  auto mean_valid = [&](const rec::ParamSet& p) {
    double acc = 0.0;
    for (const auto* ds : dss) acc += validation_recall(p, *ds, cfg.eval_k, cfg.score);
    return acc / static_cast<double>(dss.size());
  };

  rec::ParamSet best = res.params;
  double best_recall = -1.0;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<TrainPair> batch;
      for (std::size_t i = start; i < std::min(start + cfg.batch_size, order.size()); ++i)
        batch.push_back(pairs[order[i]]);
      loss_acc += detail::run_batch(res.params, dss, batch, cfg, adam);
      ++batches;
    }
    double mean_loss = loss_acc / static_cast<double>(batches);
    double vrec = mean_valid(res.params);
    res.epoch_loss.push_back(mean_loss);
    res.epoch_valid_recall.push_back(vrec);
    if (log) {
      log(epoch, "train", "ce_loss", mean_loss);
      log(epoch, "valid", "recall@" + std::to_string(cfg.eval_k), vrec);
    }
    if (vrec > best_recall) {
      best_recall = vrec;
      best = res.params;
      res.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  res.params = std::move(best);
  return res;
}

// Pre-trains the shared encoder on a held-out mixed corpus.
inline TrainResult pretrain_base(const std::vector<corpus::DomainDataset>& mix,
                                 const rec::ModelDims& dims, const TrainConfig& cfg,
                                 const EpochLogger& log = nullptr) {
  if (mix.empty()) throw ConfigError("pretrain_base: empty corpus");
  std::vector<const corpus::DomainDataset*> dss;
  for (const auto& d : mix) dss.push_back(&d);
  TrainResult res = train_loop(rec::init_params(dims, cfg.seed), dss, cfg, log);
  res.params.role = rec::Role::base;
  res.params.domain_id.clear();
  res.params.seed = cfg.seed;
  return res;
}

// Fine-tunes the base model on one domain's private training split.
inline TrainResult finetune(const rec::ParamSet& base, const corpus::DomainDataset& domain,
                            const TrainConfig& cfg, const EpochLogger& log = nullptr) {
  if (!domain.features.empty() && base.input_dim() != domain.features.front().size())
    throw ShapeError("finetune: base input dim does not match domain feature dim");
  TrainResult res = train_loop(base, {&domain}, cfg, log);
  res.params.role = rec::Role::finetuned;
  res.params.domain_id = domain.domain_id;
  res.params.seed = cfg.seed;
  return res;
}

}  // namespace mergelab::train
