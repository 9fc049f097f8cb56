#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mergelab/common.hpp"
#include "mergelab/linalg.hpp"

namespace mergelab::rec {

enum class Role { base, finetuned, merged };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::base: return "base";
    case Role::finetuned: return "finetuned";
    case Role::merged: return "merged";
  }
  return "?";
}

inline Role role_from_name(const std::string& s) {
  if (s == "base") return Role::base;
  if (s == "finetuned") return Role::finetuned;
  if (s == "merged") return Role::merged;
  throw ParseError("unknown role: " + s);
}

struct Layer {
  Matrix weight;
  Vec bias;
};

// Layered MLP parameters. The whole model lives here; items have no embedding
// table, so merging two models trained on disjoint catalogs is meaningful.
struct ParamSet {
  std::vector<Layer> layers;
  Role role = Role::base;
  std::string domain_id;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return layers.front().weight.cols; }
  std::size_t output_dim() const { return layers.back().weight.rows; }

  bool merge_compatible(const ParamSet& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l)
      if (!layers[l].weight.same_shape(o.layers[l].weight) ||
          layers[l].bias.size() != o.layers[l].bias.size())
        return false;
    return true;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.data.size() + l.bias.size();
    return n;
  }
};

struct ModelDims {
  std::size_t input = 64;   // F
  std::size_t hidden = 32;  // H
  std::size_t output = 16;  // d
  std::size_t num_layers = 3;
};

// Glorot-uniform init; tanh hidden activations make every loss smooth, which
// keeps finite-difference checks clean.
inline ParamSet init_params(const ModelDims& dims, std::uint64_t seed) {
  if (dims.num_layers < 2) throw ConfigError("init_params: need at least 2 layers");
  ParamSet p;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < dims.num_layers; ++l) {
    std::size_t in = (l == 0) ? dims.input : dims.hidden;
    std::size_t out = (l + 1 == dims.num_layers) ? dims.output : dims.hidden;
    double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Layer layer;
    layer.weight = Matrix(out, in);
    for (auto& w : layer.weight.data) w = u(rng);
    layer.bias = Vec(out, 0.0);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

// ParamSet-shaped gradient accumulator.
struct GradSet {
  std::vector<Layer> layers;

  static GradSet zeros_like(const ParamSet& p) {
    GradSet g;
    for (const auto& l : p.layers) {
      Layer gl;
      gl.weight = Matrix(l.weight.rows, l.weight.cols);
      gl.bias = Vec(l.bias.size(), 0.0);
      g.layers.push_back(std::move(gl));
    }
    return g;
  }

  void scale(double s) {
    for (auto& l : layers) {
      for (auto& w : l.weight.data) w *= s;
      for (auto& b : l.bias) b *= s;
    }
  }

  void add(const GradSet& o, double s = 1.0) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t i = 0; i < layers[l].weight.data.size(); ++i)
        layers[l].weight.data[i] += s * o.layers[l].weight.data[i];
      for (std::size_t i = 0; i < layers[l].bias.size(); ++i)
        layers[l].bias[i] += s * o.layers[l].bias[i];
    }
  }
};

// --- forward -----------------------------------------------------------

// Cached activations: inputs to each layer plus pre-activations, enough to
// run the reverse pass later.
struct Activations {
  std::vector<Vec> inputs;  // inputs[l] = input of layer l; inputs[L] = output
  std::vector<Vec> pre;     // pre[l] = W_l inputs[l] + b_l
};

inline Activations forward(const ParamSet& p, const Vec& x) {
  if (x.size() != p.input_dim()) throw ShapeError("forward: input dimension mismatch");
  Activations act;
  act.inputs.push_back(x);
  const std::size_t L = p.layers.size();
  for (std::size_t l = 0; l < L; ++l) {
    Vec z = matvec(p.layers[l].weight, act.inputs.back());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += p.layers[l].bias[i];
    act.pre.push_back(z);
    if (l + 1 < L)
      for (auto& v : z) v = std::tanh(v);
    act.inputs.push_back(std::move(z));
  }
  return act;
}

inline Vec encode(const ParamSet& p, const Vec& x) { return forward(p, x).inputs.back(); }

// Reverse pass from d_out = dL/d(output); accumulates into grad.
inline void backward(const ParamSet& p, const Activations& act, const Vec& d_out, GradSet& grad) {
  const std::size_t L = p.layers.size();
  Vec delta = d_out;
  for (std::size_t l = L; l-- > 0;) {
    if (l + 1 < L)  // through tanh: output of layer l is tanh(pre[l])
      for (std::size_t i = 0; i < delta.size(); ++i) {
        double t = act.inputs[l + 1][i];
        delta[i] *= (1.0 - t * t);
      }
    auto& gl = grad.layers[l];
    const Vec& in = act.inputs[l];
    for (std::size_t r = 0; r < gl.weight.rows; ++r) {
      double d = delta[r];
      gl.bias[r] += d;
      double* row = gl.weight.data.data() + r * gl.weight.cols;
      for (std::size_t c = 0; c < gl.weight.cols; ++c) row[c] += d * in[c];
    }
    if (l > 0) {
      Vec next(p.layers[l].weight.cols, 0.0);
      add_matvec_transposed(p.layers[l].weight, delta, next);
      delta = std::move(next);
    }
  }
}

// --- user pooling ------------------------------------------------------

// x_u = sum_j gamma^(|u|-1-j) x_{i_j} / sum_j gamma^(|u|-1-j); the most recent
// item gets exponent 0.
inline Vec pool_sequence(const std::vector<std::size_t>& sequence, const std::vector<Vec>& features,
                         double gamma) {
  if (sequence.empty()) throw ConfigError("pool_sequence: empty sequence");
  const std::size_t F = features.at(sequence[0]).size();
  Vec x(F, 0.0);
  double wsum = 0.0;
  double w = 1.0;  // exponent 0 at the tail
  for (std::size_t j = sequence.size(); j-- > 0;) {
    const Vec& f = features.at(sequence[j]);
    for (std::size_t i = 0; i < F; ++i) x[i] += w * f[i];
    wsum += w;
    w *= gamma;
  }
  for (auto& v : x) v /= wsum;
  return x;
}

inline Vec user_representation(const ParamSet& p, const std::vector<std::size_t>& sequence,
                               const std::vector<Vec>& features, double gamma) {
  return encode(p, pool_sequence(sequence, features, gamma));
}

// --- scoring -----------------------------------------------------------

struct PredictionDistribution {
  Vec scores;  // cosine similarities over the catalog
  Vec probs;   // softmax(scores / T)
  double temperature = 1.0;
};

struct ScoreDiagnostics {
  std::size_t zero_norm_pairs = 0;
};

inline double safe_cosine(const Vec& a, const Vec& b, ScoreDiagnostics* diag) {
  double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) {
    if (diag) ++diag->zero_norm_pairs;
    return 0.0;
  }
  return dot(a, b) / (na * nb);
}

struct ScoreOptions {
  double gamma = 0.8;       // recency decay for user pooling
  double temperature = 1.0;
};

// Item representations for a whole catalog under one parameter set; cache and
// reuse wherever params are held fixed.
inline std::vector<Activations> item_forwards(const ParamSet& p, const std::vector<Vec>& features) {
  std::vector<Activations> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(forward(p, f));
  return out;
}

inline PredictionDistribution score_from_reps(const Vec& user_rep,
                                              const std::vector<Activations>& items, double T,
                                              ScoreDiagnostics* diag = nullptr) {
  if (items.empty()) throw ConfigError("score: empty catalog");
  PredictionDistribution pd;
  pd.temperature = T;
  pd.scores.reserve(items.size());
  for (const auto& it : items)
    pd.scores.push_back(safe_cosine(user_rep, it.inputs.back(), diag));
  pd.probs = softmax(pd.scores, T);
  return pd;
}

inline PredictionDistribution score(const ParamSet& p, const std::vector<std::size_t>& sequence,
                                    const std::vector<Vec>& features, const ScoreOptions& opt = {},
                                    ScoreDiagnostics* diag = nullptr) {
  Vec user_rep = user_representation(p, sequence, features, opt.gamma);
  auto items = item_forwards(p, features);
  return score_from_reps(user_rep, items, opt.temperature, diag);
}

// --- losses with exact gradients ---------------------------------------

// d cos(a,b)/da = b/(|a||b|) - cos * a/|a|^2. Zero-norm pairs contribute
// score 0 and zero gradient.
inline void cosine_backward(const Vec& a, const Vec& b, double d_cos, Vec& da, Vec& db) {
  double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return;
  double c = dot(a, b) / (na * nb);
  for (std::size_t i = 0; i < a.size(); ++i) {
    da[i] += d_cos * (b[i] / (na * nb) - c * a[i] / (na * na));
    db[i] += d_cos * (a[i] / (na * nb) - c * b[i] / (nb * nb));
  }
}

struct LossResult {
  double loss = 0.0;
  GradSet grad;
};

namespace detail {

// Shared tail: given dL/dscores over the catalog, push gradients through the
// cosine layer, the item encoders, and the user encoder.
inline void scores_backward(const ParamSet& p, const Activations& user_act,
                            const std::vector<Activations>& items, const Vec& d_scores,
                            GradSet& grad) {
  const Vec& user_rep = user_act.inputs.back();
  Vec d_user(user_rep.size(), 0.0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (d_scores[i] == 0.0) continue;
    Vec d_item(user_rep.size(), 0.0);
    cosine_backward(user_rep, items[i].inputs.back(), d_scores[i], d_user, d_item);
    backward(p, items[i], d_item, grad);
  }
  backward(p, user_act, d_user, grad);
}

struct ScoredSample {
  Activations user_act;
  std::vector<Activations> items;
  PredictionDistribution pd;
};

inline ScoredSample score_sample(const ParamSet& p, const std::vector<std::size_t>& sequence,
                                 const std::vector<Vec>& features, const ScoreOptions& opt,
                                 ScoreDiagnostics* diag) {
  ScoredSample s;
  s.user_act = forward(p, pool_sequence(sequence, features, opt.gamma));
  s.items = item_forwards(p, features);
  s.pd = score_from_reps(s.user_act.inputs.back(), s.items, opt.temperature, diag);
  return s;
}

}  // namespace detail

// Cross-entropy of the positive item under softmax over cosine scores.
inline LossResult ce_loss_and_grad(const ParamSet& p, const std::vector<std::size_t>& sequence,
                                   std::size_t positive, const std::vector<Vec>& features,
                                   const ScoreOptions& opt = {},
                                   ScoreDiagnostics* diag = nullptr) {
  if (positive >= features.size()) throw ConfigError("ce_loss: positive item not in catalog");
  auto s = detail::score_sample(p, sequence, features, opt, diag);
  LossResult r;
  r.loss = -std::log(s.pd.probs[positive]);
  r.grad = GradSet::zeros_like(p);
  Vec d_scores(s.pd.probs.size());
  for (std::size_t i = 0; i < d_scores.size(); ++i)
    d_scores[i] = (s.pd.probs[i] - (i == positive ? 1.0 : 0.0)) / opt.temperature;
  detail::scores_backward(p, s.user_act, s.items, d_scores, r.grad);
  return r;
}

// KL(student || teacher): the student (merged) distribution comes first.
inline LossResult kd_loss_and_grad(const ParamSet& student, const std::vector<std::size_t>& sequence,
                                   const Vec& teacher_probs, const std::vector<Vec>& features,
                                   const ScoreOptions& opt = {},
                                   ScoreDiagnostics* diag = nullptr) {
  if (teacher_probs.size() != features.size())
    throw ShapeError("kd_loss: teacher distribution does not match catalog");
  auto s = detail::score_sample(student, sequence, features, opt, diag);
  LossResult r;
  r.grad = GradSet::zeros_like(student);
  const Vec& ps = s.pd.probs;
  double kl = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) kl += ps[i] * std::log(ps[i] / teacher_probs[i]);
  r.loss = kl;
  // dKL/ds_i = p_i (log(p_i/q_i) - KL) / T
  Vec d_scores(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i)
    d_scores[i] = ps[i] * (std::log(ps[i] / teacher_probs[i]) - kl) / opt.temperature;
  detail::scores_backward(student, s.user_act, s.items, d_scores, r.grad);
  return r;
}

// Prediction entropy -sum p log p over the candidate catalog.
inline LossResult entropy_loss_and_grad(const ParamSet& p, const std::vector<std::size_t>& sequence,
                                        const std::vector<Vec>& features,
                                        const ScoreOptions& opt = {},
                                        ScoreDiagnostics* diag = nullptr) {
  auto s = detail::score_sample(p, sequence, features, opt, diag);
  LossResult r;
  r.grad = GradSet::zeros_like(p);
  const Vec& ps = s.pd.probs;
  double H = 0.0;
  for (double q : ps) H -= q * std::log(q);
  r.loss = H;
  // dH/ds_i = -p_i (log p_i + H) / T
  Vec d_scores(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i)
    d_scores[i] = -ps[i] * (std::log(ps[i]) + H) / opt.temperature;
  detail::scores_backward(p, s.user_act, s.items, d_scores, r.grad);
  return r;
}

// Accumulates gradients for a batch of samples scored against one fixed
// catalog. Item encoder activations are shared across the batch, and each
// item's reverse pass runs once in finalize() instead of once per sample.
class BatchAccumulator {
 public:
  BatchAccumulator(const ParamSet& p, const std::vector<Vec>& features, ScoreOptions opt,
                   ScoreDiagnostics* diag = nullptr)
      : params_(p),
        opt_(opt),
        diag_(diag),
        items_(item_forwards(p, features)),
        grad_(GradSet::zeros_like(p)),
        d_items_(features.size(), Vec(p.output_dim(), 0.0)) {}

  struct Sample {
    Activations user_act;
    PredictionDistribution pd;
  };

  Sample eval(const std::vector<std::size_t>& sequence, const std::vector<Vec>& features) const {
    Sample s;
    s.user_act = forward(params_, pool_sequence(sequence, features, opt_.gamma));
    s.pd = score_from_reps(s.user_act.inputs.back(), items_, opt_.temperature, diag_);
    return s;
  }

  // Pushes one sample's dL/dscores through cosine and the user encoder now;
  // item-representation gradients are only accumulated.
  void accumulate(const Sample& s, const Vec& d_scores) {
    const Vec& user_rep = s.user_act.inputs.back();
    Vec d_user(user_rep.size(), 0.0);
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (d_scores[i] == 0.0) continue;
      cosine_backward(user_rep, items_[i].inputs.back(), d_scores[i], d_user, d_items_[i]);
    }
    backward(params_, s.user_act, d_user, grad_);
    ++count_;
  }

  double add_ce(const std::vector<std::size_t>& sequence, std::size_t positive,
                const std::vector<Vec>& features, double weight = 1.0) {
    Sample s = eval(sequence, features);
    double loss = -std::log(s.pd.probs[positive]);
    Vec d(s.pd.probs.size());
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = weight * (s.pd.probs[i] - (i == positive ? 1.0 : 0.0)) / opt_.temperature;
    accumulate(s, d);
    return loss;
  }

  double add_kd(const std::vector<std::size_t>& sequence, const Vec& teacher_probs,
                const std::vector<Vec>& features, double weight = 1.0) {
    Sample s = eval(sequence, features);
    const Vec& ps = s.pd.probs;
    double kl = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) kl += ps[i] * std::log(ps[i] / teacher_probs[i]);
    Vec d(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i)
      d[i] = weight * ps[i] * (std::log(ps[i] / teacher_probs[i]) - kl) / opt_.temperature;
    accumulate(s, d);
    return kl;
  }

  double add_entropy(const std::vector<std::size_t>& sequence, const std::vector<Vec>& features,
                     double weight = 1.0) {
    Sample s = eval(sequence, features);
    const Vec& ps = s.pd.probs;
    double H = 0.0;
    for (double q : ps) H -= q * std::log(q);
    Vec d(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i)
      d[i] = -weight * ps[i] * (std::log(ps[i]) + H) / opt_.temperature;
    accumulate(s, d);
    return H;
  }

  std::size_t sample_count() const { return count_; }

  // Runs the deferred item reverse passes and returns the summed gradient.
  GradSet finalize() {
    for (std::size_t i = 0; i < items_.size(); ++i) {
      bool nonzero = false;
      for (double v : d_items_[i])
        if (v != 0.0) nonzero = true;
      if (nonzero) backward(params_, items_[i], d_items_[i], grad_);
    }
    return std::move(grad_);
  }

 private:
  const ParamSet& params_;
  ScoreOptions opt_;
  ScoreDiagnostics* diag_;
  std::vector<Activations> items_;
  GradSet grad_;
  std::vector<Vec> d_items_;
  std::size_t count_ = 0;
};

inline double entropy(const Vec& probs) {
  double H = 0.0;
  for (double q : probs)
    if (q > 0.0) H -= q * std::log(q);
  return H;
}

}  // namespace mergelab::rec
