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

#include "colakg/eval.hpp"

#include <gtest/gtest.h>

#include <random>

#include "toy.hpp"

namespace colakg {
namespace {

using testing::reference_ndcg;
using testing::reference_recall;

TEST(Ranking, ExclusionAndTieRule) {
  std::vector<double> scores{0.5, 0.9, 0.5, 0.1, 0.9, 0, 0, 0, 0, 0};
  std::vector<ItemId> excluded{1, 3, 7};
  auto ranked = rank_candidates(scores, excluded);
  EXPECT_EQ(ranked.size(), 7u);
  EXPECT_EQ(ranked, (std::vector<ItemId>{4, 0, 2, 5, 6, 8, 9}));
  EXPECT_EQ(top_candidates(scores, excluded, 3), (std::vector<ItemId>{4, 0, 2}));

  std::vector<double> flat(5, 1.0);
  EXPECT_EQ(rank_candidates(flat, {}), (std::vector<ItemId>{0, 1, 2, 3, 4}));
}

TEST(Metrics, HandCases) {
  std::vector<ItemId> ranked{7, 3, 9, 1};
  std::vector<ItemId> rel_all{3, 7};
  EXPECT_EQ(recall_at_k(ranked, rel_all, 2), 1.0);
  EXPECT_EQ(ndcg_at_k(ranked, rel_all, 2), 1.0);
  std::vector<ItemId> rel_none{5};
  EXPECT_EQ(recall_at_k(ranked, rel_none, 4), 0.0);
  EXPECT_EQ(ndcg_at_k(ranked, rel_none, 4), 0.0);
  std::vector<ItemId> rel_half{1, 7};
  EXPECT_EQ(recall_at_k(ranked, rel_half, 2), 0.5);

  std::vector<ItemId> second{3};
  EXPECT_EQ(ndcg_at_k(ranked, second, 2), 1.0 / std::log2(3.0));
  EXPECT_EQ(ndcg_at_k(ranked, second, 20), 1.0 / std::log2(3.0));

  // relevant {a, b}, ranking [a, x, b], k = 3.
  std::vector<ItemId> axb{10, 11, 12};
  std::vector<ItemId> ab{10, 12};
  const double expect = (1.0 + 0.5) / (1.0 + 1.0 / std::log2(3.0));
  EXPECT_NEAR(ndcg_at_k(axb, ab, 3), expect, 1e-15);
  EXPECT_NEAR(ndcg_at_k(axb, ab, 3), 0.91972, 5e-6);

  std::vector<ItemId> empty;
  EXPECT_THROW(recall_at_k(ranked, empty, 3), Error);
}

TEST(Metrics, MatchReferenceOnRandomRankings) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 30 + rng() % 70;
    std::vector<ItemId> ranked(n);
    std::iota(ranked.begin(), ranked.end(), 0);
    std::shuffle(ranked.begin(), ranked.end(), rng);
    const std::size_t n_rel = 1 + rng() % 12;
    std::vector<ItemId> rel(ranked.begin(), ranked.end());
    std::shuffle(rel.begin(), rel.end(), rng);
    rel.resize(n_rel);
    auto sorted = rel;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k : {1u, 5u, 10u, 20u}) {
      EXPECT_NEAR(recall_at_k(ranked, sorted, k), reference_recall(ranked, rel, k), 1e-9);
      EXPECT_NEAR(ndcg_at_k(ranked, sorted, k), reference_ndcg(ranked, rel, k), 1e-9);
    }
  }
}

TEST(Evaluate, PerfectModelScoresOne) {
  auto ds = make_dataset(3, 8, {{0, 0}, {1, 1}, {2, 2}}, {{0, 3}}, {{0, 4}, {0, 5}, {1, 6}, {2, 7}});
  auto targets = EvalTargets::from_dataset(ds, EvalSplit::kTest);
  auto rel = targets.relevant;
  UserScorer oracle = [&](UserId u, std::span<double> s) {
    for (ItemId v = 0; v < s.size(); ++v)
      s[v] = std::binary_search(rel[u].begin(), rel[u].end(), v) ? 1e300 : 0.0;
  };
  auto rep = evaluate(oracle, 8, targets, {1, 10, 20});
  EXPECT_EQ(rep.per_user.size(), 3u);
  EXPECT_EQ(rep.recall(10), 1.0);
  EXPECT_EQ(rep.ndcg(10), 1.0);
  EXPECT_EQ(rep.recall(20), 1.0);
  EXPECT_EQ(rep.ndcg(20), 1.0);
  EXPECT_EQ(rep.ndcg(1), 1.0);
  EXPECT_EQ(rep.recall(1), (0.5 + 1 + 1) / 3.0);
}

TEST(Evaluate, AllZeroScoresFollowIdOrderOnToy) {
  // 6 items. User 0 trains on {0}, val {1}, tests {2, 5}. User 1 trains on
  // {2, 3}, tests {0}. User 2 trains on {4}, tests nothing.
  auto ds = make_dataset(3, 6, {{0, 0}, {1, 2}, {1, 3}, {2, 4}}, {{0, 1}}, {{0, 2}, {0, 5}, {1, 0}});
  auto targets = EvalTargets::from_dataset(ds, EvalSplit::kTest);
  UserScorer zero = [](UserId, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); };
  auto rep = evaluate(zero, 6, targets, {1, 2});
  // User 0 candidates [2, 3, 4, 5]; user 1 candidates [0, 1, 4, 5].
  ASSERT_EQ(rep.per_user.size(), 2u);
  const double u0_ndcg2 = 1.0 / (1.0 + 1.0 / std::log2(3.0));
  EXPECT_EQ(rep.recall(1), (0.5 + 1.0) / 2.0);
  EXPECT_EQ(rep.recall(2), (0.5 + 1.0) / 2.0);
  EXPECT_EQ(rep.ndcg(1), 1.0);
  EXPECT_NEAR(rep.ndcg(2), (u0_ndcg2 + 1.0) / 2.0, 1e-15);

  auto val = EvalTargets::from_dataset(ds, EvalSplit::kValidation);
  auto vrep = evaluate(zero, 6, val, {1});
  // Validation ranking for user 0 excludes only train item 0, so item 1 leads.
  EXPECT_EQ(vrep.per_user.size(), 1u);
  EXPECT_EQ(vrep.recall(1), 1.0);
}

TEST(Evaluate, MatchesBruteForceEvaluatorOnRandomScores) {
  std::mt19937_64 rng(5);
  const std::size_t n_users = 1000, n_items = 60;
  std::vector<Edge> train, test;
  for (UserId u = 0; u < n_users; ++u) {
    std::vector<ItemId> items(n_items);
    std::iota(items.begin(), items.end(), 0);
    std::shuffle(items.begin(), items.end(), rng);
    const std::size_t nt = 1 + rng() % 15, ne = rng() % 6;
    for (std::size_t i = 0; i < nt; ++i) train.push_back({u, items[i]});
    for (std::size_t i = nt; i < nt + ne; ++i) test.push_back({u, items[i]});
  }
  auto ds = make_dataset(n_users, n_items, train, {}, test);
  Matrix<double> scores(n_users, n_items);
  std::uniform_real_distribution<double> unif;
  for (auto& x : scores.flat()) x = unif(rng);
  UserScorer scorer = [&](UserId u, std::span<double> s) {
    std::copy(scores.row(u).begin(), scores.row(u).end(), s.begin());
  };
  auto rep = evaluate(scorer, n_items, EvalTargets::from_dataset(ds, EvalSplit::kTest), {10, 20});

  // Reference: full sort per user, then the independent metric functions.
  double r10 = 0, n10 = 0, r20 = 0, n20 = 0;
  std::size_t users = 0;
  for (UserId u = 0; u < n_users; ++u) {
    std::vector<ItemId> rel, seen;
    for (const auto& e : test) if (e.user == u) rel.push_back(e.item);
    if (rel.empty()) continue;
    for (const auto& e : train) if (e.user == u) seen.push_back(e.item);
    std::vector<std::pair<double, ItemId>> cand;
    for (ItemId v = 0; v < n_items; ++v)
      if (std::find(seen.begin(), seen.end(), v) == seen.end()) cand.push_back({-scores(u, v), v});
    std::sort(cand.begin(), cand.end());
    std::vector<ItemId> ranked;
    for (auto& c : cand) ranked.push_back(c.second);
    r10 += reference_recall(ranked, rel, 10);
    n10 += reference_ndcg(ranked, rel, 10);
    r20 += reference_recall(ranked, rel, 20);
    n20 += reference_ndcg(ranked, rel, 20);
    ++users;
  }
  EXPECT_EQ(rep.per_user.size(), users);
  EXPECT_NEAR(rep.recall(10), r10 / users, 1e-9);
  EXPECT_NEAR(rep.ndcg(10), n10 / users, 1e-9);
  EXPECT_NEAR(rep.recall(20), r20 / users, 1e-9);
  EXPECT_NEAR(rep.ndcg(20), n20 / users, 1e-9);

  auto threaded = evaluate(scorer, n_items, EvalTargets::from_dataset(ds, EvalSplit::kTest),
                           {10, 20}, 4);
  EXPECT_EQ(threaded.overall.recall, rep.overall.recall);
  EXPECT_EQ(threaded.overall.ndcg, rep.overall.ndcg);
}

std::vector<UserMetrics> users_with_counts(const std::vector<std::size_t>& counts) {
  std::vector<UserMetrics> out;
  for (std::size_t i = 0; i < counts.size(); ++i)
    out.push_back({static_cast<UserId>(i), counts[i], {{double(i)}, {double(i) / 10}}});
  return out;
}

TEST(SparsityGroups, QuartilesOfEight) {
  auto per_user = users_with_counts({5, 1, 8, 2, 7, 3, 6, 4});
  auto groups = sparsity_groups(per_user, 1);
  ASSERT_EQ(groups.size(), 4u);
  for (const auto& g : groups) EXPECT_EQ(g.users, 2u);
  EXPECT_EQ(groups[0].min_train, 1u);
  EXPECT_EQ(groups[0].max_train, 2u);
  EXPECT_EQ(groups[0].values.recall[0], (1.0 + 3.0) / 2);  // users 1 and 3
}

TEST(SparsityGroups, TiesBrokenByUserId) {
  auto per_user = users_with_counts({4, 4, 4, 4, 4});
  auto groups = sparsity_groups(per_user, 1);
  EXPECT_EQ(groups[0].users, 2u);
  EXPECT_EQ(groups[0].values.recall[0], 0.5);  // users 0 and 1
  EXPECT_EQ(groups[3].values.recall[0], 4.0);
}

TEST(SparsityGroups, BalancedAndWeightedMeanRecoversOverall) {
  for (std::size_t n : {4u, 5u, 6u, 7u, 101u}) {
    std::mt19937_64 rng(n);
    std::vector<std::size_t> counts(n);
    for (auto& c : counts) c = 1 + rng() % 9;
    auto per_user = users_with_counts(counts);
    auto groups = sparsity_groups(per_user, 1);
    std::size_t lo = n, hi = 0, total = 0;
    double weighted = 0, mean = 0;
    for (const auto& g : groups) {
      lo = std::min(lo, g.users);
      hi = std::max(hi, g.users);
      total += g.users;
      weighted += g.values.recall[0] * double(g.users);
    }
    for (const auto& u : per_user) mean += u.values.recall[0];
    EXPECT_LE(hi - lo, 1u);
    EXPECT_EQ(total, n);
    EXPECT_NEAR(weighted / double(n), mean / double(n), 1e-9);
  }
}

TEST(Reports, JsonAndTsvShapes) {
  auto per_user = users_with_counts({1, 2, 3, 4});
  MetricReport rep;
  rep.ks = {20};
  rep.per_user = per_user;
  rep.overall = {{0.25}, {0.5}};
  rep.groups = sparsity_groups(per_user, 1);
  auto j = report_json(rep);
  EXPECT_EQ(j["overall"]["recall@20"], 0.25);
  EXPECT_EQ(j["groups"].size(), 4u);
  EXPECT_EQ(j["groups"][0]["group"], "01");
  auto tsv = report_tsv(rep);
  EXPECT_TRUE(tsv.starts_with("scope\tusers\trecall@20\tndcg@20\noverall\t4\t0.250000\t0.500000\n"));
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 6);
}

}  // namespace
}  // namespace colakg
