#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mergelab/common.hpp"
#include "mergelab/linalg.hpp"

namespace mergelab::corpus {

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

struct UserSplit {
  std::string user_id;
  std::vector<std::size_t> train;  // item indices, chronological
  std::size_t valid = 0;
  std::size_t test = 0;
};

struct DomainDataset {
  std::string domain_id;
  std::vector<std::string> catalog;          // item ids, first-appearance order
  std::vector<Vec> features;                 // per-item F-dim vectors
  std::vector<UserSplit> users;
  std::size_t rejected_short_users = 0;      // users with <3 interactions at split time

  std::size_t item_index(const std::string& item_id) const {
    for (std::size_t i = 0; i < catalog.size(); ++i)
      if (catalog[i] == item_id) return i;
    throw ConfigError("unknown item id: " + item_id);
  }
};

struct PseudoUserSet {
  std::string domain_id;
  std::vector<std::vector<std::size_t>> sequences;  // each of length 1
};

// --- ingestion ---------------------------------------------------------

inline std::vector<Interaction> parse_tsv(std::istream& in) {
  std::vector<Interaction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 3)
      throw ParseError("line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
    Interaction it;
    it.user_id = fields[0];
    it.item_id = fields[1];
    try {
      std::size_t pos = 0;
      it.timestamp = std::stoll(fields[2], &pos);
      if (pos != fields[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(lineno) + ": unparsable timestamp '" + fields[2] + "'");
    }
    out.push_back(std::move(it));
  }
  return out;
}

inline std::vector<Interaction> ingest_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open interaction file: " + path);
  try {
    return parse_tsv(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// --- 5-core filtering --------------------------------------------------

// Iterates removal to the fixpoint: every retained user and item has >= 5
// interactions within the retained set.
inline std::vector<Interaction> five_core_filter(std::vector<Interaction> interactions,
                                                 std::size_t core = 5) {
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, std::size_t> user_count, item_count;
    for (const auto& it : interactions) {
      ++user_count[it.user_id];
      ++item_count[it.item_id];
    }
    std::vector<Interaction> kept;
    kept.reserve(interactions.size());
    for (auto& it : interactions) {
      if (user_count[it.user_id] >= core && item_count[it.item_id] >= core)
        kept.push_back(std::move(it));
      else
        changed = true;
    }
    interactions = std::move(kept);
  }
  return interactions;
}

// --- item features -----------------------------------------------------

// Deterministic sparse binary features: s of F coordinates set, chosen from a
// stream seeded by hashing the item id. Identical ids give identical vectors.
inline Vec featurize_item(const std::string& item_id, std::size_t F, std::size_t s,
                          std::uint64_t seed) {
  if (s == 0 || s > F) throw ConfigError("featurize: need 0 < s <= F");
  std::uint64_t state = fnv1a(item_id, seed);
  Vec v(F, 0.0);
  std::size_t set_count = 0;
  while (set_count < s) {
    std::size_t idx = static_cast<std::size_t>(splitmix64(state) % F);
    if (v[idx] == 0.0) {
      v[idx] = 1.0;
      ++set_count;
    }
  }
  return v;
}

inline std::vector<Vec> featurize_items(const std::vector<std::string>& catalog, std::size_t F,
                                        std::size_t s, std::uint64_t seed) {
  std::vector<Vec> out;
  out.reserve(catalog.size());
  for (const auto& id : catalog) out.push_back(featurize_item(id, F, s, seed));
  return out;
}

// Optional per-item feature override file: item_id<TAB>f_0,f_1,...,f_{F-1}
inline std::unordered_map<std::string, Vec> parse_feature_tsv(std::istream& in) {
  std::unordered_map<std::string, Vec> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("line " + std::to_string(lineno) + ": expected item_id<TAB>values");
    std::string id = line.substr(0, tab);
    Vec v;
    std::stringstream ss(line.substr(tab + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
    out[id] = std::move(v);
  }
  return out;
}

// --- splitting ---------------------------------------------------------

// Orders one user's interactions by timestamp, ties broken by input order.
struct OrderedSequences {
  std::vector<std::string> user_order;                                   // first appearance
  std::unordered_map<std::string, std::vector<std::string>> sequences;   // item ids, ordered
};

inline OrderedSequences order_by_user(const std::vector<Interaction>& interactions) {
  OrderedSequences out;
  std::unordered_map<std::string, std::vector<std::pair<std::int64_t, std::size_t>>> keys;
  for (std::size_t i = 0; i < interactions.size(); ++i) {
    const auto& it = interactions[i];
    if (!keys.count(it.user_id)) out.user_order.push_back(it.user_id);
    keys[it.user_id].push_back({it.timestamp, i});
  }
  for (const auto& uid : out.user_order) {
    auto& ks = keys[uid];
    std::stable_sort(ks.begin(), ks.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& seq = out.sequences[uid];
    for (const auto& [ts, idx] : ks) seq.push_back(interactions[idx].item_id);
  }
  return out;
}

struct SplitResult {
  std::vector<std::size_t> train;
  std::size_t valid, test;
};

// Last interaction -> test, second-to-last -> validation, rest -> train.
inline SplitResult leave_one_out_split(const std::vector<std::size_t>& sequence,
                                       const std::string& user_id) {
  if (sequence.size() < 3)
    throw ConfigError("leave_one_out_split: user '" + user_id + "' has " +
                      std::to_string(sequence.size()) + " interactions, need >= 3");
  SplitResult r;
  r.train.assign(sequence.begin(), sequence.end() - 2);
  r.valid = sequence[sequence.size() - 2];
  r.test = sequence[sequence.size() - 1];
  return r;
}

struct DatasetOptions {
  std::size_t feature_dim = 64;     // F
  std::size_t feature_active = 8;   // s
  std::uint64_t feature_seed = 0;
  std::size_t core = 5;
};

// Full preparation pipeline: 5-core filter, per-user ordering, leave-one-out
// split, catalog indexing, featurization. Users with <3 interactions after
// filtering are rejected and counted.
inline DomainDataset build_dataset(std::vector<Interaction> interactions,
                                   const std::string& domain_id,
                                   const DatasetOptions& opt = {}) {
  DomainDataset ds;
  ds.domain_id = domain_id;
  interactions = five_core_filter(std::move(interactions), opt.core);

  std::unordered_map<std::string, std::size_t> item_index;
  for (const auto& it : interactions) {
    if (!item_index.count(it.item_id)) {
      item_index[it.item_id] = ds.catalog.size();
      ds.catalog.push_back(it.item_id);
    }
  }

  OrderedSequences ordered = order_by_user(interactions);
  for (const auto& uid : ordered.user_order) {
    const auto& seq_ids = ordered.sequences[uid];
    if (seq_ids.size() < 3) {
      ++ds.rejected_short_users;
      continue;
    }
    std::vector<std::size_t> seq;
    for (const auto& iid : seq_ids) seq.push_back(item_index[iid]);
    SplitResult sr = leave_one_out_split(seq, uid);
    ds.users.push_back({uid, std::move(sr.train), sr.valid, sr.test});
  }

  ds.features = featurize_items(ds.catalog, opt.feature_dim, opt.feature_active, opt.feature_seed);
  return ds;
}

// --- pseudo users ------------------------------------------------------

// One single-item sequence per catalog item, in catalog order.
inline PseudoUserSet build_pseudo_users(const DomainDataset& ds) {
  if (ds.catalog.empty()) throw ConfigError("build_pseudo_users: empty catalog");
  PseudoUserSet ps;
  ps.domain_id = ds.domain_id;
  for (std::size_t i = 0; i < ds.catalog.size(); ++i) ps.sequences.push_back({i});
  return ps;
}

// --- synthetic corpora -------------------------------------------------

struct SyntheticDomainSpec {
  std::string domain_id;
  std::size_t num_users = 200;
  std::size_t num_items = 50;
  double mean_seq_len = 12.0;
  std::size_t latent_dim = 8;
  double zipf_exponent = 1.0;  // popularity skew
};

// Latent dot-product preference with softmax sampling. Each domain draws its
// own user/item factors; user and item ids are prefixed with the domain index
// so domains never share ids.
inline std::vector<Interaction> synthesize_domain(const SyntheticDomainSpec& spec,
                                                  std::size_t domain_index,
                                                  std::uint64_t seed) {
  if (spec.num_users == 0 || spec.num_items == 0)
    throw ConfigError("synthesize_domain: zero users or items requested");
  std::mt19937_64 rng(fnv1a(spec.domain_id, seed * 0x9e3779b9ull + domain_index));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const std::size_t q = spec.latent_dim;
  std::vector<Vec> item_factors(spec.num_items, Vec(q));
  std::vector<Vec> user_factors(spec.num_users, Vec(q));
  for (auto& v : item_factors)
    for (auto& x : v) x = gauss(rng);
  for (auto& v : user_factors)
    for (auto& x : v) x = gauss(rng);

  // Popularity bias: logit offset -a*ln(rank+1), a Zipf long tail.
  Vec pop_bias(spec.num_items);
  for (std::size_t i = 0; i < spec.num_items; ++i)
    pop_bias[i] = -spec.zipf_exponent * std::log(static_cast<double>(i + 1));

  auto tag = [&](const char* kind, std::size_t n) {
    return "d" + std::to_string(domain_index) + "_" + kind + std::to_string(n);
  };

  std::vector<Interaction> out;
  for (std::size_t u = 0; u < spec.num_users; ++u) {
    // Poisson length clamped so the user survives splitting.
    std::poisson_distribution<int> pois(spec.mean_seq_len);
    std::size_t len = static_cast<std::size_t>(std::max(5, pois(rng)));

    std::size_t prev = spec.num_items;  // sentinel: no previous item
    for (std::size_t j = 0; j < len; ++j) {
      Vec logits(spec.num_items);
      for (std::size_t i = 0; i < spec.num_items; ++i) {
        double l = 0.7 * dot(item_factors[i], user_factors[u]) + pop_bias[i];
        if (prev < spec.num_items) l += 0.6 * dot(item_factors[i], item_factors[prev]);
        if (i == prev) l -= 10.0;  // suppress immediate repeats
        logits[i] = l;
      }
      Vec probs = softmax(logits, 1.0);
      double r = unif(rng), acc = 0.0;
      std::size_t pick = spec.num_items - 1;
      for (std::size_t i = 0; i < spec.num_items; ++i) {
        acc += probs[i];
        if (r <= acc) {
          pick = i;
          break;
        }
      }
      out.push_back({tag("u", u), tag("i", pick), static_cast<std::int64_t>(j)});
      prev = pick;
    }
  }
  return out;
}

inline std::vector<std::vector<Interaction>> synthesize_domains(
    const std::vector<SyntheticDomainSpec>& specs, std::uint64_t seed,
    std::size_t index_offset = 0) {
  std::vector<std::vector<Interaction>> out;
  for (std::size_t k = 0; k < specs.size(); ++k)
    out.push_back(synthesize_domain(specs[k], index_offset + k, seed));
  return out;
}

}  // namespace mergelab::corpus
