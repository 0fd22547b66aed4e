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

#include "colakg/item_graph.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <regex>

namespace colakg {
namespace {

Matrix<float> random_unit_rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal;
  Matrix<float> m(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0;
    for (auto& x : m.row(i)) {
      x = normal(rng);
      norm += double(x) * x;
    }
    for (auto& x : m.row(i)) x = static_cast<float>(x / std::sqrt(norm));
  }
  return m;
}

// Exhaustive all-pairs similarity followed by a full stable sort.
std::vector<std::vector<ItemId>> brute_force(const Matrix<float>& m, std::size_t k) {
  const std::size_t n = m.rows();
  std::vector<std::vector<ItemId>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, ItemId>> all;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t c = 0; c < m.cols(); ++c) {
        ab += double(m(i, c)) * m(j, c);
        aa += double(m(i, c)) * m(i, c);
        bb += double(m(j, c)) * m(j, c);
      }
      all.push_back({ab / std::sqrt(aa * bb), static_cast<ItemId>(j)});
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; r < std::min(k, all.size()); ++r) out[i].push_back(all[r].second);
  }
  return out;
}

TEST(Cosine, AnalyticCases) {
  std::vector<double> x{1, 0}, y{0, 1}, z{1, 1}, w{3, -4};
  EXPECT_DOUBLE_EQ((cosine_similarity<double, double>(w, w)), 1.0);
  EXPECT_EQ((cosine_similarity<double, double>(x, y)), 0.0);
  EXPECT_NEAR((cosine_similarity<double, double>(x, z)), 1.0 / std::sqrt(2.0), 1e-15);
  std::vector<double> zero{0, 0};
  EXPECT_THROW((cosine_similarity<double, double>(x, zero)), Error);
}

TEST(TopK, ZeroAndSaturation) {
  auto m = random_unit_rows(6, 5, 1);
  auto g0 = top_k_neighbors(m, 0);
  for (const auto& l : g0.neighbors) EXPECT_TRUE(l.empty());
  auto all = top_k_neighbors(m, 50);
  EXPECT_EQ(all.ids(), brute_force(m, 50));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(all.neighbors[i].size(), 5u);
    for (const auto& n : all.neighbors[i]) EXPECT_NE(n.id, i);
  }
}

TEST(TopK, MatchesBruteForce) {
  auto m = random_unit_rows(50, 16, 2);
  auto g = top_k_neighbors(m, 5);
  EXPECT_EQ(g.ids(), brute_force(m, 5));
  for (std::size_t i = 0; i < 50; ++i)
    for (const auto& n : g.neighbors[i])
      EXPECT_NEAR(n.similarity,
                  (cosine_similarity<float, float>(m.row(i), m.row(n.id))), 1e-6);
}

TEST(TopK, TiesBrokenByAscendingId) {
  Matrix<float> m(5, 2);
  m(0, 0) = 1;
  for (std::size_t i = 1; i < 5; ++i) m(i, 0) = m(i, 1) = 1;  // all equidistant from 0
  auto g = top_k_neighbors(m, 3);
  EXPECT_EQ(g.ids()[0], (std::vector<ItemId>{1, 2, 3}));
  EXPECT_EQ(g.ids()[4], (std::vector<ItemId>{1, 2, 3}));
}

TEST(TopK, ScaleInvariance) {
  auto m = random_unit_rows(40, 8, 3);
  auto scaled = m;
  for (auto& x : scaled.flat()) x *= 4.0f;  // power of two keeps rounding identical
  EXPECT_EQ(top_k_neighbors(m, 7).ids(), top_k_neighbors(scaled, 7).ids());
  auto other = m;
  for (auto& x : other.flat()) x *= 3.7f;
  EXPECT_EQ(top_k_neighbors(m, 7).ids(), top_k_neighbors(other, 7).ids());
}

TEST(TopK, PermutationEquivariance) {
  auto m = random_unit_rows(30, 8, 4);
  std::vector<ItemId> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(5);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix<float> p(30, 8);
  for (std::size_t i = 0; i < 30; ++i)
    std::copy(m.row(i).begin(), m.row(i).end(), p.row(perm[i]).begin());
  auto a = top_k_neighbors(m, 6).ids();
  auto b = top_k_neighbors(p, 6).ids();
  for (std::size_t i = 0; i < 30; ++i) {
    std::vector<ItemId> mapped;
    for (ItemId j : a[i]) mapped.push_back(perm[j]);
    EXPECT_EQ(b[perm[i]], mapped);
  }
}

TEST(TopK, SymmetricSimilarities) {
  auto m = random_unit_rows(20, 6, 6);
  auto g = top_k_neighbors(m, 19);
  for (std::size_t i = 0; i < 20; ++i)
    for (const auto& n : g.neighbors[i])
      for (const auto& back : g.neighbors[n.id]) {
        if (back.id == i) {
          EXPECT_EQ(back.similarity, n.similarity);
        }
      }
}

TEST(TopK, ThreadCountDoesNotMatter) {
  auto m = random_unit_rows(64, 8, 7);
  auto a = top_k_neighbors(m, 10, 1);
  auto b = top_k_neighbors(m, 10, 4);
  EXPECT_EQ(a.neighbors, b.neighbors);
}

TEST(TopK, ZeroVectorNamesItem) {
  auto m = random_unit_rows(4, 3, 8);
  for (auto& x : m.row(2)) x = 0;
  try {
    top_k_neighbors(m, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("item 2"), std::string::npos);
  }
}

TEST(GraphFile, FormatAndParse) {
  auto m = random_unit_rows(5, 4, 9);
  auto g = top_k_neighbors(m, 2);
  auto text = format_item_graph(g);
  const std::regex line(R"(\d+\t\d+:-?\d\.\d{6} \d+:-?\d\.\d{6})");
  std::size_t pos = 0, rows = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    EXPECT_TRUE(std::regex_match(text.substr(pos, end - pos), line)) << text.substr(pos, end - pos);
    EXPECT_TRUE(text.substr(pos).starts_with(std::to_string(rows) + "\t"));
    pos = end + 1;
    ++rows;
  }
  EXPECT_EQ(rows, 5u);
  auto back = parse_item_graph(text, "g");
  EXPECT_EQ(back.k, 2u);
  EXPECT_EQ(back.ids(), g.ids());
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      EXPECT_NEAR(back.neighbors[i][j].similarity, g.neighbors[i][j].similarity, 5e-7);
  EXPECT_THROW(parse_item_graph("0\t1-0.5\n", "g"), ParseError);
  EXPECT_THROW(parse_item_graph("1\t0:0.5\n", "g"), ParseError);
}

}  // namespace
}  // namespace colakg
