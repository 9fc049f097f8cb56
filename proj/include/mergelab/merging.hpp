#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mergelab/common.hpp"
#include "mergelab/corpus.hpp"
#include "mergelab/recmodel.hpp"
#include "mergelab/training.hpp"

namespace mergelab::merging {

// Per-layer parameter delta between a fine-tuned model and its base.
struct TaskVector {
  std::string domain_id;
  std::vector<rec::Layer> layers;

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.data.size() + l.bias.size();
    return n;
  }
};

inline TaskVector task_vector(const rec::ParamSet& finetuned, const rec::ParamSet& base) {
  if (!finetuned.merge_compatible(base)) throw ShapeError("task_vector: incompatible shapes");
  TaskVector tv;
  tv.domain_id = finetuned.domain_id;
  for (std::size_t l = 0; l < base.layers.size(); ++l) {
    rec::Layer d;
    d.weight = Matrix(base.layers[l].weight.rows, base.layers[l].weight.cols);
    for (std::size_t i = 0; i < d.weight.data.size(); ++i)
      d.weight.data[i] = finetuned.layers[l].weight.data[i] - base.layers[l].weight.data[i];
    d.bias = Vec(base.layers[l].bias.size());
    for (std::size_t i = 0; i < d.bias.size(); ++i)
      d.bias[i] = finetuned.layers[l].bias[i] - base.layers[l].bias[i];
    tv.layers.push_back(std::move(d));
  }
  return tv;
}

enum class WeightMode { domainwise, layerwise };

// Merging coefficients: K scalars (domain-wise) or K*L scalars (layer-wise,
// stored domain-major). Unconstrained reals; negative values are meaningful.
struct MergeWeights {
  WeightMode mode = WeightMode::domainwise;
  std::size_t domains = 0;
  std::size_t layers = 1;
  Vec values;

  static MergeWeights uniform(WeightMode mode, std::size_t K, std::size_t L, double init) {
    MergeWeights w;
    w.mode = mode;
    w.domains = K;
    w.layers = L;
    w.values.assign(mode == WeightMode::domainwise ? K : K * L, init);
    return w;
  }

  double at(std::size_t k, std::size_t l) const {
    return mode == WeightMode::domainwise ? values[k] : values[k * layers + l];
  }
};

namespace detail {

inline void check_taus(const rec::ParamSet& base, const std::vector<TaskVector>& taus) {
  for (const auto& tv : taus) {
    if (tv.layers.size() != base.layers.size()) throw ShapeError("merge: layer count mismatch");
    for (std::size_t l = 0; l < tv.layers.size(); ++l)
      if (!tv.layers[l].weight.same_shape(base.layers[l].weight) ||
          tv.layers[l].bias.size() != base.layers[l].bias.size())
        throw ShapeError("merge: shape mismatch in task vector for " + tv.domain_id);
  }
}

}  // namespace detail

// theta_merge = theta_base + sum_k w_k^l * tau_k^l (domain-wise weights are
// constant over l).
inline rec::ParamSet merge(const rec::ParamSet& base, const std::vector<TaskVector>& taus,
                           const MergeWeights& w) {
  detail::check_taus(base, taus);
  std::size_t expect = (w.mode == WeightMode::domainwise) ? taus.size() : taus.size() * base.layers.size();
  if (w.domains != taus.size() || w.values.size() != expect)
    throw ShapeError("merge: weight count does not match mode");
  rec::ParamSet out = base;
  out.role = rec::Role::merged;
  out.domain_id.clear();
  for (std::size_t k = 0; k < taus.size(); ++k) {
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
      double wk = w.at(k, l);
      if (wk == 0.0) continue;
      for (std::size_t i = 0; i < out.layers[l].weight.data.size(); ++i)
        out.layers[l].weight.data[i] += wk * taus[k].layers[l].weight.data[i];
      for (std::size_t i = 0; i < out.layers[l].bias.size(); ++i)
        out.layers[l].bias[i] += wk * taus[k].layers[l].bias[i];
    }
  }
  return out;
}

inline rec::ParamSet merge_domainwise(const rec::ParamSet& base, const std::vector<TaskVector>& taus,
                                      const MergeWeights& w) {
  if (w.mode != WeightMode::domainwise) throw ConfigError("merge_domainwise: wrong weight mode");
  return merge(base, taus, w);
}

inline rec::ParamSet merge_layerwise(const rec::ParamSet& base, const std::vector<TaskVector>& taus,
                                     const MergeWeights& w) {
  if (w.mode != WeightMode::layerwise) throw ConfigError("merge_layerwise: wrong weight mode");
  return merge(base, taus, w);
}

// Coordinate-wise arithmetic mean of K fine-tuned models.
inline rec::ParamSet weight_averaging(const std::vector<rec::ParamSet>& models) {
  if (models.empty()) throw ConfigError("weight_averaging: empty model list");
  for (const auto& m : models)
    if (!m.merge_compatible(models.front())) throw ShapeError("weight_averaging: incompatible shapes");
  rec::ParamSet out = models.front();
  out.role = rec::Role::merged;
  out.domain_id.clear();
  double inv = 1.0 / static_cast<double>(models.size());
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    for (std::size_t i = 0; i < out.layers[l].weight.data.size(); ++i) {
      double acc = 0.0;
      for (const auto& m : models) acc += m.layers[l].weight.data[i];
      out.layers[l].weight.data[i] = acc * inv;
    }
    for (std::size_t i = 0; i < out.layers[l].bias.size(); ++i) {
      double acc = 0.0;
      for (const auto& m : models) acc += m.layers[l].bias[i];
      out.layers[l].bias[i] = acc * inv;
    }
  }
  return out;
}

// --- TIES ---------------------------------------------------------------

struct TiesOptions {
  double density = 0.2;   // fraction of coordinates kept per task vector
  double scale = 1.0;     // w in theta_base + w * merged_tau
  bool per_layer_trim = false;  // ablation flag; default trims globally
};

namespace detail {

// Zeroes all but the top ceil(density*n) coordinates by |value| over the
// given flat view.
inline void trim_flat(std::vector<double*>& coords, double density) {
  std::size_t n = coords.size();
  std::size_t keep = static_cast<std::size_t>(std::ceil(density * static_cast<double>(n)));
  if (keep >= n) return;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::nth_element(idx.begin(), idx.begin() + keep, idx.end(), [&](std::size_t a, std::size_t b) {
    double fa = std::fabs(*coords[a]), fb = std::fabs(*coords[b]);
    if (fa != fb) return fa > fb;
    return a < b;  // deterministic tie-break
  });
  for (std::size_t i = keep; i < n; ++i) *coords[idx[i]] = 0.0;
}

inline std::vector<double*> flat_view(TaskVector& tv) {
  std::vector<double*> out;
  for (auto& l : tv.layers) {
    for (auto& w : l.weight.data) out.push_back(&w);
    for (auto& b : l.bias) out.push_back(&b);
  }
  return out;
}

}  // namespace detail

// TRIM / ELECT / DISJOINT MERGE. Trim keeps the top density fraction of each
// task vector by absolute value (global over the flattened vector unless
// per_layer_trim). The elected sign on a coordinate is the sign of the sum of
// trimmed values; a zero sum elects positive. The merged delta is the mean of
// trimmed values agreeing with the elected sign.
inline rec::ParamSet ties_merge(const rec::ParamSet& base, std::vector<TaskVector> taus,
                                const TiesOptions& opt = {}) {
  if (opt.density <= 0.0 || opt.density > 1.0) throw ConfigError("ties_merge: density out of (0,1]");
  detail::check_taus(base, taus);
  if (taus.empty()) throw ConfigError("ties_merge: no task vectors");

  for (auto& tv : taus) {
    if (opt.per_layer_trim) {
      for (auto& l : tv.layers) {
        std::vector<double*> coords;
        for (auto& w : l.weight.data) coords.push_back(&w);
        for (auto& b : l.bias) coords.push_back(&b);
        detail::trim_flat(coords, opt.density);
      }
    } else {
      auto coords = detail::flat_view(tv);
      detail::trim_flat(coords, opt.density);
    }
  }

  std::vector<std::vector<double*>> views;
  for (auto& tv : taus) views.push_back(detail::flat_view(tv));
  const std::size_t P = views.front().size();

  rec::ParamSet out = base;
  out.role = rec::Role::merged;
  out.domain_id.clear();
  TaskVector merged = taus.front();  // shape template
  auto merged_view = detail::flat_view(merged);
  for (std::size_t i = 0; i < P; ++i) {
    double sum = 0.0;
    for (const auto& v : views) sum += *v[i];
    double sign = (sum >= 0.0) ? 1.0 : -1.0;
    double acc = 0.0;
    std::size_t cnt = 0;
    for (const auto& v : views) {
      double x = *v[i];
      if (x != 0.0 && x * sign > 0.0) {
        acc += x;
        ++cnt;
      }
    }
    *merged_view[i] = (cnt > 0) ? acc / static_cast<double>(cnt) : 0.0;
  }

  std::size_t idx = 0;
  for (auto& l : out.layers) {
    for (auto& w : l.weight.data) w += opt.scale * *merged_view[idx++];
    for (auto& b : l.bias) b += opt.scale * *merged_view[idx++];
  }
  return out;
}

// --- weight gradients ---------------------------------------------------

// Chain rule through the merge: domain-wise dL/dw_k = sum_l <dL/dtheta^l, tau_k^l>;
// layer-wise dL/dw_k^l = <dL/dtheta^l, tau_k^l>.
inline Vec grad_wrt_weights(const rec::GradSet& param_grad, const std::vector<TaskVector>& taus,
                            WeightMode mode) {
  const std::size_t K = taus.size();
  const std::size_t L = param_grad.layers.size();
  Vec out(mode == WeightMode::domainwise ? K : K * L, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    if (taus[k].layers.size() != L) throw ShapeError("grad_wrt_weights: layer count mismatch");
    for (std::size_t l = 0; l < L; ++l) {
      const auto& gl = param_grad.layers[l];
      const auto& tl = taus[k].layers[l];
      if (!gl.weight.same_shape(tl.weight) || gl.bias.size() != tl.bias.size())
        throw ShapeError("grad_wrt_weights: shape mismatch");
      double acc = 0.0;
      for (std::size_t i = 0; i < gl.weight.data.size(); ++i)
        acc += gl.weight.data[i] * tl.weight.data[i];
      for (std::size_t i = 0; i < gl.bias.size(); ++i) acc += gl.bias[i] * tl.bias[i];
      if (mode == WeightMode::domainwise)
        out[k] += acc;
      else
        out[k * L + l] = acc;
    }
  }
  return out;
}

// --- adaptive merging ---------------------------------------------------

enum class BatchComposition { round_robin, proportional };

struct AdaptiveMergeConfig {
  double lambda = 1000.0;   // KD weight (MergeRec only)
  std::size_t steps = 500;
  double lr = 1e-3;
  std::size_t batch = 16;
  double init_weight = 0.2;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  rec::ScoreOptions score;
  BatchComposition composition = BatchComposition::round_robin;
};

struct DomainInputs {
  const corpus::PseudoUserSet* pseudo = nullptr;
  const std::vector<Vec>* features = nullptr;  // domain catalog features
};

struct MergeTrajectory {
  std::vector<Vec> weights;                  // steps+1 entries
  std::vector<double> loss_total;            // per step
  std::vector<double> loss_rec, loss_kd;     // MergeRec components (empty for AdaMerging)
  std::vector<double> loss_entropy;          // AdaMerging component
};

// Per-step model stream hook, for dynamics probes.
using StepHook = std::function<void(std::size_t step, const rec::ParamSet& merged)>;

namespace detail {

// Seed-derived pseudo-user batch schedule. Round-robin interleaves domains
// so each contributes equally regardless of catalog size; proportional draws
// from the concatenated pool.
class BatchSchedule {
 public:
  BatchSchedule(const std::vector<DomainInputs>& domains, BatchComposition comp, std::uint64_t seed)
      : comp_(comp), rng_(seed ^ 0xba7c4edull) {
    for (const auto& d : domains) {
      if (d.pseudo->sequences.empty()) throw ConfigError("adaptive merge: empty pseudo-user set");
      std::vector<std::size_t> order(d.pseudo->sequences.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng_);
      orders_.push_back(std::move(order));
      cursors_.push_back(0);
    }
  }

  // Returns (domain, pseudo-user index) pairs for one batch.
  std::vector<std::pair<std::size_t, std::size_t>> next(std::size_t batch) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t k;
      if (comp_ == BatchComposition::round_robin) {
        k = rr_next_ % orders_.size();
        ++rr_next_;
      } else {
        std::size_t total = 0;
        for (const auto& o : orders_) total += o.size();
        std::uniform_int_distribution<std::size_t> pick(0, total - 1);
        std::size_t r = pick(rng_);
        k = 0;
        while (r >= orders_[k].size()) r -= orders_[k].size(), ++k;
      }
      std::size_t i = orders_[k][cursors_[k]];
      if (++cursors_[k] == orders_[k].size()) {
        cursors_[k] = 0;
        std::shuffle(orders_[k].begin(), orders_[k].end(), rng_);
      }
      out.push_back({k, i});
    }
    return out;
  }

 private:
  BatchComposition comp_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::size_t>> orders_;
  std::vector<std::size_t> cursors_;
  std::size_t rr_next_ = 0;
};

}  // namespace detail

struct AdaptiveMergeResult {
  rec::ParamSet merged;
  MergeWeights weights;
  MergeTrajectory trajectory;
};

/// AdaMerging adapted to pseudo-user data: minimizes mean prediction entropy
// of the merged model, optimizing only the merging weights.
inline AdaptiveMergeResult adamerging(const rec::ParamSet& base, const std::vector<TaskVector>& taus,
                                      const std::vector<DomainInputs>& domains, WeightMode mode,
                                      const AdaptiveMergeConfig& cfg, const StepHook& hook = nullptr) {
  if (domains.size() != taus.size()) throw ConfigError("adamerging: domain/task-vector mismatch");
  MergeWeights w = MergeWeights::uniform(mode, taus.size(), base.layers.size(), cfg.init_weight);
  train::FlatAdam adam(w.values.size(), {.lr = cfg.lr});
  detail::BatchSchedule sched(domains, cfg.composition, cfg.seed);
  rec::ScoreOptions sopt = cfg.score;
  sopt.temperature = cfg.temperature;

  AdaptiveMergeResult res;
  res.trajectory.weights.push_back(w.values);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    rec::ParamSet merged = merge(base, taus, w);
    if (hook) hook(step, merged);
    auto batch = sched.next(cfg.batch);

    rec::GradSet total = rec::GradSet::zeros_like(merged);
    double loss = 0.0;
    std::vector<std::vector<std::size_t>> by_domain(domains.size());
    for (std::size_t b = 0; b < batch.size(); ++b) by_domain[batch[b].first].push_back(batch[b].second);
    for (std::size_t k = 0; k < domains.size(); ++k) {
      if (by_domain[k].empty()) continue;
      rec::BatchAccumulator acc(merged, *domains[k].features, sopt);
      for (std::size_t i : by_domain[k])
        loss += acc.add_entropy(domains[k].pseudo->sequences[i], *domains[k].features);
      total.add(acc.finalize());
    }
    total.scale(1.0 / static_cast<double>(batch.size()));
    loss /= static_cast<double>(batch.size());

    Vec wg = grad_wrt_weights(total, taus, mode);
    adam.update(w.values, wg);
    res.trajectory.weights.push_back(w.values);
    res.trajectory.loss_total.push_back(loss);
    res.trajectory.loss_entropy.push_back(loss);
  }
  res.merged = merge(base, taus, w);
  if (hook) hook(cfg.steps, res.merged);
  res.weights = std::move(w);
  return res;
}

struct TeacherCache {
  // Per domain: per pseudo-user, teacher distribution over the domain catalog
  // and its argmax pseudo-label.
  std::vector<std::vector<Vec>> probs;
  std::vector<std::vector<std::size_t>> labels;
};

inline TeacherCache teacher_pass(const std::vector<rec::ParamSet>& teachers,
                                 const std::vector<DomainInputs>& domains,
                                 const rec::ScoreOptions& opt) {
  if (teachers.size() != domains.size()) throw ConfigError("teacher_pass: teacher/domain mismatch");
  TeacherCache cache;
  for (std::size_t k = 0; k < domains.size(); ++k) {
    auto items = rec::item_forwards(teachers[k], *domains[k].features);
    std::vector<Vec> probs;
    std::vector<std::size_t> labels;
    for (const auto& seq : domains[k].pseudo->sequences) {
      Vec rep = rec::user_representation(teachers[k], seq, *domains[k].features, opt.gamma);
      auto pd = rec::score_from_reps(rep, items, opt.temperature);
      std::size_t arg = 0;
      for (std::size_t i = 1; i < pd.probs.size(); ++i)
        if (pd.probs[i] > pd.probs[arg]) arg = i;
      probs.push_back(std::move(pd.probs));
      labels.push_back(arg);
    }
    cache.probs.push_back(std::move(probs));
    cache.labels.push_back(std::move(labels));
  }
  return cache;
}

// MergeRec: joint pseudo-label CE + lambda * KL(p_merge || p_teacher) over
// pseudo-user batches, optimizing only the merging weights.
inline AdaptiveMergeResult mergerec(const rec::ParamSet& base, const std::vector<TaskVector>& taus,
                                    const std::vector<rec::ParamSet>& teachers,
                                    const std::vector<DomainInputs>& domains, WeightMode mode,
                                    const AdaptiveMergeConfig& cfg, const StepHook& hook = nullptr,
                                    const TeacherCache* precomputed = nullptr) {
  if (domains.size() != taus.size() || teachers.size() != taus.size())
    throw ConfigError("mergerec: domain/teacher/task-vector count mismatch");
  rec::ScoreOptions sopt = cfg.score;
  sopt.temperature = cfg.temperature;
  TeacherCache local;
  const TeacherCache* cache = precomputed;
  if (!cache) {
    local = teacher_pass(teachers, domains, sopt);
    cache = &local;
  }

  MergeWeights w = MergeWeights::uniform(mode, taus.size(), base.layers.size(), cfg.init_weight);
  train::FlatAdam adam(w.values.size(), {.lr = cfg.lr});
  detail::BatchSchedule sched(domains, cfg.composition, cfg.seed);

  AdaptiveMergeResult res;
  res.trajectory.weights.push_back(w.values);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    rec::ParamSet merged = merge(base, taus, w);
    if (hook) hook(step, merged);
    auto batch = sched.next(cfg.batch);

    rec::GradSet total = rec::GradSet::zeros_like(merged);
    double l_rec = 0.0, l_kd = 0.0;
    std::vector<std::vector<std::size_t>> by_domain(domains.size());
    for (const auto& [k, i] : batch) by_domain[k].push_back(i);
    for (std::size_t k = 0; k < domains.size(); ++k) {
      if (by_domain[k].empty()) continue;
      rec::BatchAccumulator acc(merged, *domains[k].features, sopt);
      for (std::size_t i : by_domain[k]) {
        const auto& seq = domains[k].pseudo->sequences[i];
        l_rec += acc.add_ce(seq, cache->labels[k][i], *domains[k].features);
        l_kd += acc.add_kd(seq, cache->probs[k][i], *domains[k].features, cfg.lambda);
      }
      total.add(acc.finalize());
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    total.scale(inv);
    l_rec *= inv;
    l_kd *= inv;
    double l_total = l_rec + cfg.lambda * l_kd;
    if (!std::isfinite(l_total))
      throw NumericError("mergerec: non-finite loss at step " + std::to_string(step));

    Vec wg = grad_wrt_weights(total, taus, mode);
    adam.update(w.values, wg);
    res.trajectory.weights.push_back(w.values);
    res.trajectory.loss_rec.push_back(l_rec);
    res.trajectory.loss_kd.push_back(l_kd);
    res.trajectory.loss_total.push_back(l_total);
  }
  res.merged = merge(base, taus, w);
  if (hook) hook(cfg.steps, res.merged);
  res.weights = std::move(w);
  return res;
}

}  // namespace mergelab::merging
