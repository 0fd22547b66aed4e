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

// Clustered synthetic interaction logs with a matching knowledge graph.
//
// Every item belongs to one of `clusters` genres and one of `styles` styles
// inside its genre. Each user prefers one genre and one style in it. The KG
// states genre, style and a few tags from a per-genre pool for each item,
// along with uninformative attributes, plus reverse edges so that
// second-order facts exist. Genres sit on a ring: genre c carries moods c and
// c + 1, so neighboring genres share one mood, and a share of each user's
// off-genre picks lands in the two neighboring genres.

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>

#include "colakg/common.hpp"

namespace colakg {

struct SyntheticConfig {
  std::size_t users = 200;
  std::size_t items = 100;
  std::size_t clusters = 5;
  std::size_t styles = 2;          // per cluster
  std::size_t min_interactions = 10;
  std::size_t max_interactions = 16;
  double cluster_affinity = 0.85;  // picks from the preferred cluster
  double style_affinity = 0.7;     // of those, picks from the preferred style
  double ring_affinity = 0.0;      // of the rest, picks from a neighboring genre
  double popularity_skew = 0.6;    // weight of rank r is 1 / (r + 1)^skew
  std::size_t tags_per_item = 3;     // drawn from the item's cluster pool
  std::size_t tags_per_cluster = 6;
  std::size_t directors = 25;
  std::size_t years = 12;
  std::uint64_t seed = 1;
};

struct SyntheticData {
  std::string interactions;  // user \t item
  std::string triples;       // head \t relation \t tail
  std::string item_map;      // item \t entity
  std::vector<std::size_t> item_cluster;
  std::vector<std::size_t> user_cluster;
};

namespace detail {

inline std::string padded(std::string_view prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", i);
  return std::string(prefix) + buf;
}

}  // namespace detail

inline std::string synthetic_item_token(std::size_t i) { return detail::padded("i", i); }
/// Entity names carry the genre word, as real titles often hint at theirs.
inline std::string synthetic_item_entity(std::size_t i, std::size_t cluster) {
  return detail::padded("genre", cluster) + " film " + detail::padded("", i);
}

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.clusters == 0 || cfg.styles == 0 || cfg.items < cfg.clusters * cfg.styles)
    throw Error(ErrorKind::kInput, "synthetic: need at least one item per cluster style");
  if (cfg.min_interactions > cfg.max_interactions || cfg.max_interactions > cfg.items)
    throw Error(ErrorKind::kInput, "synthetic: bad interaction range");
  std::mt19937_64 rng(cfg.seed);
  SyntheticData out;

  const std::size_t groups = cfg.clusters * cfg.styles;
  std::vector<std::vector<std::size_t>> by_cluster(cfg.clusters), by_group(groups);
  out.item_cluster.resize(cfg.items);
  std::uniform_int_distribution<std::size_t> pick_dir(0, cfg.directors - 1);
  std::uniform_int_distribution<std::size_t> pick_year(0, cfg.years - 1);
  for (std::size_t i = 0; i < cfg.items; ++i) {
    const std::size_t c = i % cfg.clusters;
    const std::size_t g = i % groups;  // style = g / clusters
    out.item_cluster[i] = c;
    by_cluster[c].push_back(i);
    by_group[g].push_back(i);
    const auto film = synthetic_item_entity(i, c);
    const auto genre = detail::padded("genre", c);
    const auto style = "style" + std::to_string(c) + "x" + std::to_string(g / cfg.clusters);
    const auto director = detail::padded("director", pick_dir(rng));
    const auto year = detail::padded("year", 1990 + pick_year(rng));
    out.triples += film + "\tgenre\t" + genre + "\n";
    out.triples += film + "\tstyle\t" + style + "\n";
    out.triples += film + "\tdirected_by\t" + director + "\n";
    out.triples += film + "\treleased\t" + year + "\n";
    out.triples += genre + "\tgenre_of\t" + film + "\n";
    out.triples += style + "\tstyle_of\t" + film + "\n";
    out.triples += director + "\tdirected\t" + film + "\n";
    for (std::size_t m : {c, (c + 1) % cfg.clusters}) {
      const auto mood = detail::padded("mood", m);
      out.triples += film + "\tmood\t" + mood + "\n";
      out.triples += mood + "\tmood_of\t" + film + "\n";
    }
    std::vector<std::size_t> pool(cfg.tags_per_cluster);
    for (std::size_t t = 0; t < pool.size(); ++t) pool[t] = t;
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t t = 0; t < std::min(cfg.tags_per_item, pool.size()); ++t) {
      const auto tag = "tag" + std::to_string(c) + "x" + std::to_string(pool[t]);
      out.triples += film + "\ttagged\t" + tag + "\n";
      out.triples += tag + "\ttag_of\t" + film + "\n";
    }
    out.item_map += synthetic_item_token(i) + "\t" + film + "\n";
  }

  // Popularity: one random rank over all items, shared by every pool.
  std::vector<double> weight(cfg.items);
  {
    std::vector<std::size_t> order(cfg.items);
    for (std::size_t i = 0; i < cfg.items; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t r = 0; r < cfg.items; ++r)
      weight[order[r]] = 1.0 / std::pow(double(r + 1), cfg.popularity_skew);
  }
  auto draw = [&](const std::vector<std::size_t>& pool) {
    std::vector<double> w;
    w.reserve(pool.size());
    for (std::size_t i : pool) w.push_back(weight[i]);
    std::discrete_distribution<std::size_t> d(w.begin(), w.end());
    return pool[d(rng)];
  };
  std::vector<std::size_t> everything(cfg.items);
  for (std::size_t i = 0; i < cfg.items; ++i) everything[i] = i;

  std::uniform_int_distribution<std::size_t> pick_n(cfg.min_interactions, cfg.max_interactions);
  std::uniform_int_distribution<std::size_t> pick_style(0, cfg.styles - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.user_cluster.resize(cfg.users);
  for (std::size_t u = 0; u < cfg.users; ++u) {
    const std::size_t c = u % cfg.clusters;
    const std::size_t g = c + cfg.clusters * pick_style(rng);
    out.user_cluster[u] = c;
    const std::size_t n = pick_n(rng);
    std::set<std::size_t> chosen;
    std::vector<std::size_t> order;
    std::size_t guard = 0;
    while (chosen.size() < n && guard++ < 100 * n) {
      std::size_t item;
      const double r = unit(rng);
      if (r < cfg.cluster_affinity * cfg.style_affinity) item = draw(by_group[g]);
      else if (r < cfg.cluster_affinity) item = draw(by_cluster[c]);
      else if (unit(rng) < cfg.ring_affinity)
        item = draw(by_cluster[(c + (unit(rng) < 0.5 ? 1 : cfg.clusters - 1)) % cfg.clusters]);
      else item = draw(everything);
      if (chosen.insert(item).second) order.push_back(item);
    }
    for (std::size_t item : order)
      out.interactions += detail::padded("u", u) + "\t" + synthetic_item_token(item) + "\n";
  }
  return out;
}

struct SyntheticPaths {
  std::string interactions, triples, item_map;
};

inline SyntheticPaths write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SyntheticPaths p{(dir / "interactions.tsv").string(), (dir / "kg.tsv").string(),
                   (dir / "item_map.tsv").string()};
  write_file(p.interactions, data.interactions);
  write_file(p.triples, data.triples);
  write_file(p.item_map, data.item_map);
  return p;
}

}  // namespace colakg
