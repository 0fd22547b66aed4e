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

// Exact top-k semantic neighbor graph over items.

#pragma once

#include <cmath>
#include <cstdio>

#include "colakg/common.hpp"

namespace colakg {

template <typename T, typename U>
double cosine_similarity(std::span<const T> x, std::span<const U> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::kInput, "cosine: length mismatch");
  double xy = 0, xx = 0, yy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x[i], b = y[i];
    xy += a * b;
    xx += a * a;
    yy += b * b;
  }
  if (xx == 0 || yy == 0) throw Error(ErrorKind::kInput, "cosine: zero vector");
  return std::clamp(xy / (std::sqrt(xx) * std::sqrt(yy)), -1.0, 1.0);
}

struct Neighbor {
  ItemId id;
  double similarity;
  bool operator==(const Neighbor&) const = default;
};

/// Neighbor ordering: similarity descending, then id ascending.
inline bool neighbor_before(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

struct ItemItemGraph {
  std::size_t k = 0;
  std::vector<std::vector<Neighbor>> neighbors;  // indexed by item id

  std::vector<std::vector<ItemId>> ids() const {
    std::vector<std::vector<ItemId>> out(neighbors.size());
    for (std::size_t i = 0; i < neighbors.size(); ++i)
      for (const auto& n : neighbors[i]) out[i].push_back(n.id);
    return out;
  }
};

/// Exact top-k by cosine over all other items. Rows are normalized once; each
/// item's scan is independent, so the result does not depend on `threads`.
inline ItemItemGraph top_k_neighbors(const Matrix<float>& item_vectors, std::size_t k,
                                     unsigned threads = 1) {
  const std::size_t n = item_vectors.rows();
  const std::size_t dim = item_vectors.cols();
  Matrix<double> unit(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0;
    for (float x : item_vectors.row(i)) norm += double(x) * double(x);
    if (norm == 0) throw Error(ErrorKind::kInput, "item " + std::to_string(i) + " has a zero semantic vector");
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < dim; ++c) unit(i, c) = item_vectors(i, c) / norm;
  }
  ItemItemGraph g;
  g.k = k;
  g.neighbors.resize(n);
  const std::size_t keep = std::min(k, n == 0 ? 0 : n - 1);
  if (keep == 0) return g;
  parallel_for(n, threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<Neighbor> cand;
    cand.reserve(n);
    for (std::size_t i = lo; i < hi; ++i) {
      cand.clear();
      auto ui = unit.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        double s = dot(ui, unit.row(j));
        cand.push_back({static_cast<ItemId>(j), std::clamp(s, -1.0, 1.0)});
      }
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                        neighbor_before);
      g.neighbors[i].assign(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep));
    }
  });
  return g;
}

/// One line per item: id\tneighbor:similarity ... (6 decimals).
inline std::string format_item_graph(const ItemItemGraph& g) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < g.neighbors.size(); ++i) {
    out += std::to_string(i);
    out += '\t';
    for (std::size_t j = 0; j < g.neighbors[i].size(); ++j) {
      std::snprintf(buf, sizeof buf, "%s%u:%.6f", j ? " " : "", g.neighbors[i][j].id,
                    g.neighbors[i][j].similarity);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

inline ItemItemGraph parse_item_graph(std::string_view text, const std::string& origin) {
  ItemItemGraph g;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      auto cols = split(line, '\t');
      if (cols.size() != 2) throw ParseError(origin, line_no, "expected id\\tneighbors");
      const auto id = std::stoul(std::string(cols[0]));
      if (id != g.neighbors.size()) throw ParseError(origin, line_no, "item ids must be dense");
      auto& list = g.neighbors.emplace_back();
      if (cols[1].empty()) continue;
      for (auto tok : split(cols[1], ' ')) {
        auto colon = tok.find(':');
        if (colon == std::string_view::npos) throw ParseError(origin, line_no, "expected id:sim");
        list.push_back({static_cast<ItemId>(std::stoul(std::string(tok.substr(0, colon)))),
                        std::stod(std::string(tok.substr(colon + 1)))});
      }
    } catch (const std::logic_error&) {
      throw ParseError(origin, line_no, "bad number");
    }
    g.k = std::max(g.k, g.neighbors.back().size());
  }
  return g;
}

}  // namespace colakg
