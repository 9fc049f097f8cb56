#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mergelab/common.hpp"
#include "mergelab/corpus.hpp"
#include "mergelab/recmodel.hpp"

namespace mergelab::eval {

struct DomainMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t num_users = 0;
};

// 1-based rank of each test user's held-out item under a full-catalog
// ranking. History at test time is train + validation. Ties broken by
// catalog index.
inline std::vector<std::size_t> test_item_ranks(const rec::ParamSet& p,
                                                const corpus::DomainDataset& ds,
                                                const rec::ScoreOptions& opt = {}) {
  auto items = rec::item_forwards(p, ds.features);
  std::vector<std::size_t> ranks;
  ranks.reserve(ds.users.size());
  for (const auto& u : ds.users) {
    std::vector<std::size_t> history = u.train;
    history.push_back(u.valid);
    Vec user_rep = rec::user_representation(p, history, ds.features, opt.gamma);
    Vec scores(ds.catalog.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
      scores[i] = rec::safe_cosine(user_rep, items[i].inputs.back(), nullptr);
    double st = scores[u.test];
    std::size_t rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (i == u.test) continue;
      if (scores[i] > st || (scores[i] == st && i < u.test)) ++rank;
    }
    ranks.push_back(rank);
  }
  return ranks;
}

inline DomainMetrics metrics_from_ranks(const std::vector<std::size_t>& ranks, std::size_t k) {
  if (k < 1) throw ConfigError("recall_ndcg_at_k: k must be >= 1");
  DomainMetrics m;
  m.num_users = ranks.size();
  for (std::size_t r : ranks) {
    if (r <= k) {
      m.recall += 1.0;
      m.ndcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    }
  }
  if (!ranks.empty()) {
    m.recall /= static_cast<double>(ranks.size());
    m.ndcg /= static_cast<double>(ranks.size());
  }
  return m;
}

inline DomainMetrics recall_ndcg_at_k(const rec::ParamSet& p, const corpus::DomainDataset& ds,
                                      std::size_t k, const rec::ScoreOptions& opt = {}) {
  return metrics_from_ranks(test_item_ranks(p, ds, opt), k);
}

// --- normalized reporting ----------------------------------------------

// 100 * method / reference; undefined (nullopt) when the reference is zero.
inline std::optional<double> normalize(double method_value, double reference_value) {
  if (reference_value <= 0.0) return std::nullopt;
  return 100.0 * method_value / reference_value;
}

// --- grouped analysis ---------------------------------------------------

struct GroupMetrics {
  std::string label;
  std::size_t count = 0;
  DomainMetrics metrics;
};

struct GroupReport {
  std::vector<GroupMetrics> by_seq_len;
  std::vector<GroupMetrics> by_popularity;
};

inline std::vector<std::size_t> history_lengths(const corpus::DomainDataset& ds) {
  std::vector<std::size_t> out;
  for (const auto& u : ds.users) out.push_back(u.train.size() + 1);  // train + valid
  return out;
}

// Train-set interaction count of each user's test item.
inline std::vector<std::size_t> test_item_popularity(const corpus::DomainDataset& ds) {
  std::vector<std::size_t> counts(ds.catalog.size(), 0);
  for (const auto& u : ds.users)
    for (std::size_t i : u.train) ++counts[i];
  std::vector<std::size_t> out;
  for (const auto& u : ds.users) out.push_back(counts[u.test]);
  return out;
}

// Quantile edges for `bins` equal-population groups over the given values.
inline std::vector<std::size_t> quantile_edges(std::vector<std::size_t> values, std::size_t bins) {
  std::sort(values.begin(), values.end());
  std::vector<std::size_t> edges;  // upper bound (inclusive) of each bin but the last
  for (std::size_t b = 1; b < bins; ++b) {
    std::size_t idx = values.size() * b / bins;
    if (idx >= values.size()) idx = values.size() - 1;
    edges.push_back(values[idx]);
  }
  return edges;
}

inline std::size_t bin_of(std::size_t value, const std::vector<std::size_t>& upper_edges) {
  for (std::size_t b = 0; b < upper_edges.size(); ++b)
    if (value <= upper_edges[b]) return b;
  return upper_edges.size();
}

struct GroupBins {
  std::vector<std::size_t> seq_len_edges;     // quantile-derived, inclusive upper bounds
  std::vector<std::size_t> popularity_edges;  // default {10, 30, 100, 300}
};

inline GroupBins default_bins(const corpus::DomainDataset& ds, std::size_t seq_len_bins = 5) {
  GroupBins b;
  b.seq_len_edges = quantile_edges(history_lengths(ds), seq_len_bins);
  b.popularity_edges = {10, 30, 100, 300};
  return b;
}

// Per-group ranking metrics over user history-length groups and target item
// popularity groups. Empty bins are reported with count 0.
inline GroupReport group_analysis(const rec::ParamSet& p, const corpus::DomainDataset& ds,
                                  const GroupBins& bins, std::size_t k,
                                  const rec::ScoreOptions& opt = {}) {
  auto ranks = test_item_ranks(p, ds, opt);
  auto lens = history_lengths(ds);
  auto pops = test_item_popularity(ds);

  auto build = [&](const std::vector<std::size_t>& values, const std::vector<std::size_t>& edges,
                   const char* prefix) {
    std::vector<std::vector<std::size_t>> grouped(edges.size() + 1);
    for (std::size_t u = 0; u < ranks.size(); ++u)
      grouped[bin_of(values[u], edges)].push_back(ranks[u]);
    std::vector<GroupMetrics> out;
    for (std::size_t b = 0; b < grouped.size(); ++b) {
      GroupMetrics gm;
      std::size_t lo = (b == 0) ? 0 : edges[b - 1] + 1;
      gm.label = std::string(prefix) + " " + std::to_string(lo) + "-" +
                 (b < edges.size() ? std::to_string(edges[b]) : "inf");
      gm.count = grouped[b].size();
      gm.metrics = metrics_from_ranks(grouped[b], k);
      out.push_back(std::move(gm));
    }
    return out;
  };

  GroupReport rep;
  rep.by_seq_len = build(lens, bins.seq_len_edges, "len");
  rep.by_popularity = build(pops, bins.popularity_edges, "pop");
  return rep;
}

// --- optimization dynamics probe ----------------------------------------

struct ProbePoint {
  std::size_t step = 0;
  double cross_entropy = 0.0;  // vs. teacher argmax labels
  double entropy = 0.0;        // mean prediction entropy
};

struct ProbeSet {
  std::vector<std::vector<std::size_t>> sequences;  // held-out pseudo-users
  std::vector<std::size_t> labels;                  // teacher argmax per sequence
  const std::vector<Vec>* features = nullptr;
};

inline ProbePoint probe_model(const rec::ParamSet& p, const ProbeSet& probe, std::size_t step,
                              const rec::ScoreOptions& opt = {}) {
  ProbePoint pt;
  pt.step = step;
  auto items = rec::item_forwards(p, *probe.features);
  for (std::size_t s = 0; s < probe.sequences.size(); ++s) {
    Vec rep = rec::user_representation(p, probe.sequences[s], *probe.features, opt.gamma);
    auto pd = rec::score_from_reps(rep, items, opt.temperature);
    pt.cross_entropy += -std::log(pd.probs[probe.labels[s]]);
    pt.entropy += rec::entropy(pd.probs);
  }
  double n = static_cast<double>(probe.sequences.size());
  pt.cross_entropy /= n;
  pt.entropy /= n;
  return pt;
}

// --- Welch's t ----------------------------------------------------------

namespace detail {

// Regularized incomplete beta by Lentz's continued fraction.
inline double beta_cf(double a, double b, double x) {
  const double eps = 3e-14, fpmin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) break;
  }
  return h;
}

inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                    b * std::log(1.0 - x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

// P(T > t) for Student's t with dof degrees of freedom.
inline double t_survival(double t, double dof) {
  double x = dof / (dof + t * t);
  double p = 0.5 * incomplete_beta(dof / 2.0, 0.5, x);
  return (t >= 0.0) ? p : 1.0 - p;
}

}  // namespace detail

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 0.5;          // one-tailed, H1: mean(a) > mean(b)
  bool degenerate = false;  // zero-variance branch taken
};

// One-tailed Welch's t-test. Deterministic (zero-variance) samples fall
// through to the degenerate branch: p is the normal-approximation limit.
inline WelchResult one_tailed_welch_t(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw ConfigError("one_tailed_welch_t: need at least 2 samples per side");
  auto mean_var = [](const std::vector<double>& xs) {
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    v /= static_cast<double>(xs.size() - 1);
    return std::pair<double, double>{m, v};
  };
  auto [ma, va] = mean_var(a);
  auto [mb, vb] = mean_var(b);
  double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double se2 = va / na + vb / nb;

  WelchResult r;
  if (se2 == 0.0) {
    r.degenerate = true;
    if (ma == mb)
      r.p = 0.5;
    else
      r.p = (ma > mb) ? 0.0 : 1.0;
    r.t = (ma == mb) ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
    return r;
  }
  r.t = (ma - mb) / std::sqrt(se2);
  double num = se2 * se2;
  double den = (va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0);
  r.dof = num / den;
  r.p = detail::t_survival(r.t, r.dof);
  return r;
}

}  // namespace mergelab::eval
