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

// Shared fixtures for tests: small random models and reference oracles that
// do not reuse library code paths.

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "colakg/item_graph.hpp"
#include "colakg/trainer.hpp"

namespace colakg::testing {

/// Random bipartite graph where every user has at least one item.
inline InteractionDataset random_dataset(std::size_t n_users, std::size_t n_items,
                                         double density, std::mt19937_64& rng) {
  std::bernoulli_distribution take(density);
  std::uniform_int_distribution<ItemId> any(0, static_cast<ItemId>(n_items - 1));
  std::vector<Edge> train;
  for (UserId u = 0; u < n_users; ++u) {
    bool has = false;
    for (ItemId v = 0; v < n_items; ++v) {
      if (take(rng)) {
        train.push_back({u, v});
        has = true;
      }
    }
    if (!has) train.push_back({u, any(rng)});
  }
  return make_dataset(n_users, n_items, std::move(train), {}, {});
}

inline Matrix<float> random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<float> m(rows, cols);
  for (auto& x : m.flat()) x = static_cast<float>(normal(rng));
  return m;
}

struct ToyProblem {
  InteractionDataset ds;
  TrainingArtifacts art;
  ModelConfig cfg;
  std::vector<Triplet> batch;
};

/// The gradient-check configuration: 4 users, 6 items, d=8, d_s=12, d_a=8,
/// L=2, k=2.
inline ToyProblem gradient_check_problem(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ToyProblem p;
  p.ds = make_dataset(4, 6,
                      {{0, 0}, {0, 1}, {0, 3}, {1, 1}, {1, 2}, {2, 2}, {2, 4}, {2, 5},
                       {3, 0}, {3, 5}},
                      {}, {});
  p.art.adjacency = NormalizedAdjacency::from_dataset(p.ds);
  p.art.item_semantic = random_matrix(6, 12, rng);
  p.art.user_semantic = random_matrix(4, 12, rng);
  p.art.neighbors = top_k_neighbors(p.art.item_semantic, 2).ids();
  p.cfg.dim = 8;
  p.cfg.attention_dim = 8;
  p.cfg.layers = 2;
  p.batch = {{0, 0, 2}, {1, 2, 4}, {2, 5, 0}, {3, 0, 3}, {0, 3, 5}};
  return p;
}

/// Central finite differences of `loss` over every parameter component.
template <typename LossFn>
ModelState<double> numeric_gradient(ModelState<double> st, LossFn&& loss, double step = 1e-4) {
  auto grad = st;
  auto params = st.tables();
  auto out = grad.tables();
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto p = params[t]->flat();
    auto g = out[t]->flat();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + step;
      const double up = loss(st);
      p[i] = orig - step;
      const double down = loss(st);
      p[i] = orig;
      g[i] = (up - down) / (2 * step);
    }
  }
  return grad;
}

/// Largest |a - n| / max(|a|, |n|) over components; components where both are
/// exactly zero count as agreement.
inline double max_relative_error(const ModelState<double>& analytic,
                                 const ModelState<double>& numeric) {
  double worst = 0;
  auto a = analytic.tables();
  auto n = numeric.tables();
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a[t]->size(); ++i) {
      const double x = a[t]->flat()[i], y = n[t]->flat()[i];
      const double scale = std::max(std::abs(x), std::abs(y));
      if (scale == 0) continue;
      worst = std::max(worst, std::abs(x - y) / scale);
    }
  }
  return worst;
}

/// Dense reference for layer-averaged propagation: builds the full
/// (|U|+|V|)^2 normalized adjacency and sums explicit matrix powers.
inline std::vector<std::vector<double>> dense_lightgcn(const InteractionDataset& ds,
                                                       const std::vector<std::vector<double>>& h0,
                                                       std::size_t layers) {
  const std::size_t n = ds.n_users + ds.n_items;
  std::vector<double> deg(n, 0);
  for (const auto& e : ds.train) {
    deg[e.user] += 1;
    deg[ds.n_users + e.item] += 1;
  }
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0));
  for (const auto& e : ds.train) {
    const std::size_t i = e.user, j = ds.n_users + e.item;
    const double w = 1.0 / std::sqrt(deg[i] * deg[j]);
    a[i][j] = w;
    a[j][i] = w;
  }
  const std::size_t d = h0.empty() ? 0 : h0[0].size();
  auto power = h0;
  auto sum = h0;
  for (std::size_t l = 1; l <= layers; ++l) {
    std::vector<std::vector<double>> next(n, std::vector<double>(d, 0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (a[i][j] != 0)
          for (std::size_t c = 0; c < d; ++c) next[i][c] += a[i][j] * power[j][c];
    power = next;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) sum[i][c] += power[i][c];
  }
  for (auto& row : sum)
    for (auto& x : row) x /= double(layers + 1);
  return sum;
}

/// Brute-force NDCG with binary gains, independent of the library.
inline double reference_ndcg(const std::vector<ItemId>& ranked, const std::vector<ItemId>& relevant,
                             std::size_t k) {
  double dcg = 0;
  for (std::size_t p = 1; p <= k && p <= ranked.size(); ++p) {
    for (ItemId r : relevant) {
      if (r == ranked[p - 1]) {
        dcg += std::log(2.0) / std::log(double(p) + 1.0);
        break;
      }
    }
  }
  double ideal = 0;
  for (std::size_t p = 1; p <= std::min(k, relevant.size()); ++p)
    ideal += std::log(2.0) / std::log(double(p) + 1.0);
  return dcg / ideal;
}

inline double reference_recall(const std::vector<ItemId>& ranked, const std::vector<ItemId>& relevant,
                               std::size_t k) {
  std::size_t hits = 0;
  for (ItemId r : relevant)
    for (std::size_t p = 0; p < k && p < ranked.size(); ++p)
      if (ranked[p] == r) ++hits;
  return double(hits) / double(relevant.size());
}

}  // namespace colakg::testing
