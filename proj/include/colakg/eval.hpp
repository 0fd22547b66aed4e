// Copyright 2026 The colakg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// All-ranking evaluation: Recall@k, NDCG@k and activity-quartile breakdown.

#pragma once

#include <cmath>
#include <functional>
#include <nlohmann/json.hpp>

#include "colakg/data.hpp"

namespace colakg {

/// Candidate order: score descending, then item id ascending.
inline bool rank_before(double sa, ItemId a, double sb, ItemId b) {
  if (sa != sb) return sa > sb;
  return a < b;
}

/// All items not in `excluded_sorted`, best first.
inline std::vector<ItemId> rank_candidates(std::span<const double> scores,
                                           std::span<const ItemId> excluded_sorted) {
  std::vector<ItemId> out;
  out.reserve(scores.size());
  for (ItemId v = 0; v < scores.size(); ++v)
    if (!std::binary_search(excluded_sorted.begin(), excluded_sorted.end(), v)) out.push_back(v);
  std::sort(out.begin(), out.end(),
            [&](ItemId a, ItemId b) { return rank_before(scores[a], a, scores[b], b); });
  return out;
}

/// First `k` entries of rank_candidates, without sorting the tail.
inline std::vector<ItemId> top_candidates(std::span<const double> scores,
                                          std::span<const ItemId> excluded_sorted, std::size_t k) {
  std::vector<ItemId> out;
  out.reserve(scores.size());
  for (ItemId v = 0; v < scores.size(); ++v)
    if (!std::binary_search(excluded_sorted.begin(), excluded_sorted.end(), v)) out.push_back(v);
  const std::size_t keep = std::min(k, out.size());
  auto cmp = [&](ItemId a, ItemId b) { return rank_before(scores[a], a, scores[b], b); };
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(), cmp);
  out.resize(keep);
  return out;
}

inline double recall_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant_sorted,
                          std::size_t k) {
  if (relevant_sorted.empty()) throw Error(ErrorKind::kInput, "recall: empty relevant set");
  std::size_t hits = 0;
  for (std::size_t p = 0; p < std::min(k, ranked.size()); ++p)
    hits += std::binary_search(relevant_sorted.begin(), relevant_sorted.end(), ranked[p]);
  return double(hits) / double(relevant_sorted.size());
}

inline double ndcg_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant_sorted,
                        std::size_t k) {
  if (relevant_sorted.empty()) throw Error(ErrorKind::kInput, "ndcg: empty relevant set");
  double dcg = 0, idcg = 0;
  for (std::size_t p = 0; p < std::min(k, ranked.size()); ++p)
    if (std::binary_search(relevant_sorted.begin(), relevant_sorted.end(), ranked[p]))
      dcg += 1.0 / std::log2(double(p) + 2.0);
  for (std::size_t p = 0; p < std::min(k, relevant_sorted.size()); ++p)
    idcg += 1.0 / std::log2(double(p) + 2.0);
  return dcg / idcg;
}

struct MetricValues {
  std::vector<double> recall;  // aligned with MetricReport::ks
  std::vector<double> ndcg;
};

struct UserMetrics {
  UserId user = 0;
  std::size_t train_count = 0;
  MetricValues values;
};

struct GroupMetrics {
  std::size_t users = 0;
  std::size_t min_train = 0;
  std::size_t max_train = 0;
  MetricValues values;
};

struct MetricReport {
  std::vector<std::size_t> ks;
  MetricValues overall;
  std::vector<UserMetrics> per_user;
  std::vector<GroupMetrics> groups;

  double recall(std::size_t k) const { return overall.recall.at(index_of(k)); }
  double ndcg(std::size_t k) const { return overall.ndcg.at(index_of(k)); }

  std::size_t index_of(std::size_t k) const {
    auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) throw Error(ErrorKind::kInput, "k=" + std::to_string(k) + " not evaluated");
    return static_cast<std::size_t>(it - ks.begin());
  }
};

/// Fills scores[v] for every item, for one user.
using UserScorer = std::function<void(UserId, std::span<double>)>;

enum class EvalSplit { kValidation, kTest };

/// Per-user relevant and excluded sets for one split. Validation excludes
/// training items; test excludes training and validation items.
struct EvalTargets {
  std::vector<std::vector<ItemId>> relevant;  // sorted
  std::vector<std::vector<ItemId>> excluded;  // sorted
  std::vector<std::size_t> train_count;

  static EvalTargets from_dataset(const InteractionDataset& ds, EvalSplit split) {
    EvalTargets t;
    t.relevant.assign(ds.n_users, {});
    t.excluded.assign(ds.n_users, {});
    t.train_count.assign(ds.n_users, 0);
    for (const auto& e : ds.train) {
      t.excluded[e.user].push_back(e.item);
      ++t.train_count[e.user];
    }
    const auto& target = split == EvalSplit::kTest ? ds.test : ds.val;
    if (split == EvalSplit::kTest)
      for (const auto& e : ds.val) t.excluded[e.user].push_back(e.item);
    for (const auto& e : target) t.relevant[e.user].push_back(e.item);
    for (auto& v : t.relevant) std::sort(v.begin(), v.end());
    for (auto& v : t.excluded) std::sort(v.begin(), v.end());
    return t;
  }
};

/// Splits users ascending by (train count, id) into `n_groups` contiguous
/// groups whose sizes differ by at most one; group 0 is the least active.
inline std::vector<GroupMetrics> sparsity_groups(std::span<const UserMetrics> per_user,
                                                 std::size_t n_metrics, std::size_t n_groups = 4) {
  std::vector<const UserMetrics*> order;
  for (const auto& u : per_user) order.push_back(&u);
  std::sort(order.begin(), order.end(), [](const UserMetrics* a, const UserMetrics* b) {
    if (a->train_count != b->train_count) return a->train_count < b->train_count;
    return a->user < b->user;
  });
  std::vector<GroupMetrics> out;
  const std::size_t n = order.size();
  std::size_t start = 0;
  for (std::size_t g = 0; g < n_groups; ++g) {
    const std::size_t size = n / n_groups + (g < n % n_groups ? 1 : 0);
    GroupMetrics gm;
    gm.users = size;
    gm.values.recall.assign(n_metrics, 0);
    gm.values.ndcg.assign(n_metrics, 0);
    for (std::size_t i = start; i < start + size; ++i) {
      for (std::size_t m = 0; m < n_metrics; ++m) {
        gm.values.recall[m] += order[i]->values.recall[m];
        gm.values.ndcg[m] += order[i]->values.ndcg[m];
      }
    }
    if (size > 0) {
      gm.min_train = order[start]->train_count;
      gm.max_train = order[start + size - 1]->train_count;
      for (std::size_t m = 0; m < n_metrics; ++m) {
        gm.values.recall[m] /= double(size);
        gm.values.ndcg[m] /= double(size);
      }
    }
    out.push_back(std::move(gm));
    start += size;
  }
  return out;
}

/// Mean metrics over users with at least one relevant item. Per-user work is
/// independent and reduced in user order.
inline MetricReport evaluate(const UserScorer& scorer, std::size_t n_items,
                             const EvalTargets& targets, std::vector<std::size_t> ks = {10, 20},
                             unsigned threads = 1) {
  MetricReport rep;
  rep.ks = std::move(ks);
  const std::size_t max_k = rep.ks.empty() ? 0 : *std::max_element(rep.ks.begin(), rep.ks.end());
  const std::size_t n_users = targets.relevant.size();
  std::vector<std::optional<UserMetrics>> slots(n_users);
  parallel_for(n_users, threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> scores(n_items);
    for (std::size_t u = lo; u < hi; ++u) {
      if (targets.relevant[u].empty()) continue;
      scorer(static_cast<UserId>(u), scores);
      auto top = top_candidates(scores, targets.excluded[u], max_k);
      UserMetrics um;
      um.user = static_cast<UserId>(u);
      um.train_count = targets.train_count[u];
      for (std::size_t k : rep.ks) {
        um.values.recall.push_back(recall_at_k(top, targets.relevant[u], k));
        um.values.ndcg.push_back(ndcg_at_k(top, targets.relevant[u], k));
      }
      slots[u] = std::move(um);
    }
  });
  rep.overall.recall.assign(rep.ks.size(), 0);
  rep.overall.ndcg.assign(rep.ks.size(), 0);
  for (auto& s : slots) {
    if (!s) continue;
    for (std::size_t m = 0; m < rep.ks.size(); ++m) {
      rep.overall.recall[m] += s->values.recall[m];
      rep.overall.ndcg[m] += s->values.ndcg[m];
    }
    rep.per_user.push_back(std::move(*s));
  }
  if (!rep.per_user.empty()) {
    for (std::size_t m = 0; m < rep.ks.size(); ++m) {
      rep.overall.recall[m] /= double(rep.per_user.size());
      rep.overall.ndcg[m] /= double(rep.per_user.size());
    }
  }
  if (rep.per_user.size() >= 4) rep.groups = sparsity_groups(rep.per_user, rep.ks.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Report formats

inline nlohmann::ordered_json metrics_json(const std::vector<std::size_t>& ks,
                                           const MetricValues& v) {
  nlohmann::ordered_json j;
  for (std::size_t m = 0; m < ks.size(); ++m) {
    j["recall@" + std::to_string(ks[m])] = v.recall[m];
    j["ndcg@" + std::to_string(ks[m])] = v.ndcg[m];
  }
  return j;
}

inline nlohmann::ordered_json report_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["users_evaluated"] = r.per_user.size();
  j["overall"] = metrics_json(r.ks, r.overall);
  auto groups = nlohmann::ordered_json::array();
  for (std::size_t g = 0; g < r.groups.size(); ++g) {
    nlohmann::ordered_json gj;
    char name[8];
    std::snprintf(name, sizeof name, "%02zu", g + 1);
    gj["group"] = name;
    gj["users"] = r.groups[g].users;
    gj["min_train"] = r.groups[g].min_train;
    gj["max_train"] = r.groups[g].max_train;
    gj["metrics"] = metrics_json(r.ks, r.groups[g].values);
    groups.push_back(std::move(gj));
  }
  j["groups"] = std::move(groups);
  return j;
}

/// Flat rows: scope\tusers\tmetric columns...
inline std::string report_tsv(const MetricReport& r) {
  std::string out = "scope\tusers";
  for (std::size_t k : r.ks) out += "\trecall@" + std::to_string(k) + "\tndcg@" + std::to_string(k);
  out += '\n';
  auto row = [&](const std::string& scope, std::size_t users, const MetricValues& v) {
    out += scope + "\t" + std::to_string(users);
    char buf[32];
    for (std::size_t m = 0; m < r.ks.size(); ++m) {
      std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f", v.recall[m], v.ndcg[m]);
      out += buf;
    }
    out += '\n';
  };
  row("overall", r.per_user.size(), r.overall);
  for (std::size_t g = 0; g < r.groups.size(); ++g)
    row("group" + std::to_string(g + 1), r.groups[g].users, r.groups[g].values);
  return out;
}

}  // namespace colakg
