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

// Interaction data and knowledge graph loading, k-core filtering and
// per-user train/validation/test splitting.

#pragma once

#include <cmath>
#include <deque>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <unordered_map>
#include <utility>

#include "colakg/common.hpp"

namespace colakg {

/// Interns string tokens to dense ids in first-seen order.
class Vocabulary {
 public:
  std::uint32_t intern(std::string_view token) {
    auto it = index_.find(std::string(token));
    if (it != index_.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(tokens_.size());
    tokens_.emplace_back(token);
    index_.emplace(tokens_.back(), id);
    return id;
  }

  std::optional<std::uint32_t> find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& token(std::uint32_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct Edge {
  UserId user;
  ItemId item;
  auto operator<=>(const Edge&) const = default;
};

/// Deduplicated implicit-feedback edges with their token vocabularies.
struct InteractionLog {
  Vocabulary users;
  Vocabulary items;
  std::vector<Edge> edges;  // first-occurrence order
};

inline char detect_delimiter(std::string_view line) {
  return line.find('\t') != std::string_view::npos ? '\t' : ',';
}

inline InteractionLog parse_interactions(std::string_view text,
                                         const std::string& origin = "<memory>") {
  InteractionLog log;
  std::set<Edge> seen;
  std::optional<char> delim;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (!delim) delim = detect_delimiter(line);
    auto cols = split(line, *delim);
    if (cols.size() < 2) throw ParseError(origin, line_no, "expected user,item");
    auto user_tok = trim(cols[0]);
    auto item_tok = trim(cols[1]);
    if (user_tok.empty() || item_tok.empty())
      throw ParseError(origin, line_no, "empty user or item token");
    Edge e{log.users.intern(user_tok), log.items.intern(item_tok)};
    if (seen.insert(e).second) log.edges.push_back(e);
  }
  return log;
}

inline InteractionLog load_interactions(const std::string& path) {
  return parse_interactions(read_file(path), path);
}

/// Iteratively drops users and items with degree < threshold until every
/// remaining node has degree >= threshold. Keeps the input edge order.
inline std::vector<Edge> kcore_filter(std::span<const Edge> edges,
                                      std::size_t threshold = 5) {
  if (threshold < 1) throw Error(ErrorKind::kInput, "k-core threshold must be >= 1");
  std::size_t n_users = 0, n_items = 0;
  for (const auto& e : edges) {
    n_users = std::max<std::size_t>(n_users, e.user + 1);
    n_items = std::max<std::size_t>(n_items, e.item + 1);
  }
  std::vector<std::vector<std::size_t>> by_user(n_users), by_item(n_items);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    by_user[edges[i].user].push_back(i);
    by_item[edges[i].item].push_back(i);
  }
  std::vector<std::size_t> user_deg(n_users), item_deg(n_items);
  for (std::size_t u = 0; u < n_users; ++u) user_deg[u] = by_user[u].size();
  for (std::size_t v = 0; v < n_items; ++v) item_deg[v] = by_item[v].size();

  std::vector<char> alive(edges.size(), 1);
  std::vector<char> user_gone(n_users, 0), item_gone(n_items, 0);
  // Queue entries: (is_item, id).
  std::deque<std::pair<bool, std::uint32_t>> queue;
  for (std::uint32_t u = 0; u < n_users; ++u)
    if (user_deg[u] > 0 && user_deg[u] < threshold) queue.emplace_back(false, u);
  for (std::uint32_t v = 0; v < n_items; ++v)
    if (item_deg[v] > 0 && item_deg[v] < threshold) queue.emplace_back(true, v);

  while (!queue.empty()) {
    auto [is_item, id] = queue.front();
    queue.pop_front();
    auto& gone = is_item ? item_gone[id] : user_gone[id];
    if (gone) continue;
    gone = 1;
    for (std::size_t ei : (is_item ? by_item[id] : by_user[id])) {
      if (!alive[ei]) continue;
      alive[ei] = 0;
      if (is_item) {
        const auto u = edges[ei].user;
        if (--user_deg[u] < threshold && !user_gone[u]) queue.emplace_back(false, u);
      } else {
        const auto v = edges[ei].item;
        if (--item_deg[v] < threshold && !item_gone[v]) queue.emplace_back(true, v);
      }
    }
  }
  std::vector<Edge> out;
  for (std::size_t i = 0; i < edges.size(); ++i)
    if (alive[i]) out.push_back(edges[i]);
  return out;
}

/// Re-interns the surviving edges so user and item ids are dense again.
inline InteractionLog reindex(const InteractionLog& log, std::span<const Edge> kept) {
  InteractionLog out;
  out.edges.reserve(kept.size());
  for (const auto& e : kept) {
    out.edges.push_back({out.users.intern(log.users.token(e.user)),
                         out.items.intern(log.items.token(e.item))});
  }
  return out;
}

struct SplitConfig {
  double train_ratio = 0.8;
  double val_ratio_of_train = 0.1;
  std::uint64_t seed = 2024;
};

/// Train/validation/test edges plus train-only adjacency.
struct InteractionDataset {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::vector<Edge> train, val, test;
  std::vector<std::vector<ItemId>> user_items;  // M_u, file order
  std::vector<std::vector<UserId>> item_users;  // M_v

  void build_adjacency() {
    user_items.assign(n_users, {});
    item_users.assign(n_items, {});
    for (const auto& e : train) {
      user_items[e.user].push_back(e.item);
      item_users[e.item].push_back(e.user);
    }
  }

  /// M_u sorted, for membership tests.
  std::vector<std::vector<ItemId>> sorted_user_items() const {
    auto out = user_items;
    for (auto& v : out) std::sort(v.begin(), v.end());
    return out;
  }
};

inline InteractionDataset make_dataset(std::size_t n_users, std::size_t n_items,
                                       std::vector<Edge> train, std::vector<Edge> val,
                                       std::vector<Edge> test) {
  InteractionDataset ds;
  ds.n_users = n_users;
  ds.n_items = n_items;
  ds.train = std::move(train);
  ds.val = std::move(val);
  ds.test = std::move(test);
  ds.build_adjacency();
  return ds;
}

/// Per-user holdout of max(1, floor((1 - train_ratio) n)) edges to test, then a
/// global uniform sample of the remaining train pool moved to validation.
inline InteractionDataset split_dataset(const InteractionLog& log,
                                        const SplitConfig& cfg = {}) {
  if (!(cfg.train_ratio > 0 && cfg.train_ratio < 1) ||
      !(cfg.val_ratio_of_train > 0 && cfg.val_ratio_of_train < 1))
    throw Error(ErrorKind::kInput, "split ratios must lie in (0,1)");
  const std::size_t n_users = log.users.size();
  std::vector<std::vector<std::size_t>> per_user(n_users);
  for (std::size_t i = 0; i < log.edges.size(); ++i)
    per_user[log.edges[i].user].push_back(i);

  enum : char { kTrain, kVal, kTest };
  std::vector<char> role(log.edges.size(), kTrain);
  std::mt19937_64 rng(cfg.seed);
  for (auto& idx : per_user) {
    const std::size_t n = idx.size();
    // A single-interaction user keeps it for training and is never evaluated.
    if (n < 2) continue;
    auto n_test = static_cast<std::size_t>(
        std::floor((1.0 - cfg.train_ratio) * static_cast<double>(n) + 1e-9));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    auto shuffled = idx;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (std::size_t j = 0; j < n_test; ++j) role[shuffled[j]] = kTest;
  }

  std::vector<std::size_t> pool;
  std::vector<std::size_t> train_count(n_users, 0);
  for (std::size_t i = 0; i < log.edges.size(); ++i) {
    if (role[i] == kTrain) {
      pool.push_back(i);
      ++train_count[log.edges[i].user];
    }
  }
  const auto n_val = static_cast<std::size_t>(
      std::floor(cfg.val_ratio_of_train * static_cast<double>(pool.size()) + 1e-9));
  std::shuffle(pool.begin(), pool.end(), rng);
  std::size_t moved = 0;
  for (std::size_t i : pool) {
    if (moved == n_val) break;
    auto& c = train_count[log.edges[i].user];
    if (c <= 1) continue;  // every user keeps at least one training edge
    --c;
    role[i] = kVal;
    ++moved;
  }

  std::vector<Edge> train, val, test;
  for (std::size_t i = 0; i < log.edges.size(); ++i) {
    (role[i] == kTrain ? train : role[i] == kVal ? val : test).push_back(log.edges[i]);
  }
  return make_dataset(n_users, log.items.size(), std::move(train), std::move(val),
                      std::move(test));
}

// ---------------------------------------------------------------------------
// Knowledge graph

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;
  auto operator<=>(const Triple&) const = default;
};

class KnowledgeGraph {
 public:
  Vocabulary entities;
  Vocabulary relations;
  std::vector<Triple> triples;

  /// Dataset item id -> entity, for items present in the item map.
  std::vector<std::optional<EntityId>> item_entity;
  /// Display name per dataset item (entity name when mapped, else the token).
  std::vector<std::string> item_names;
  std::vector<std::string> warnings;

  void add(std::string_view head, std::string_view rel, std::string_view tail) {
    Triple t{entities.intern(head), relations.intern(rel), entities.intern(tail)};
    if (seen_.insert(t).second) {
      triples.push_back(t);
      index_dirty_ = true;
    }
  }

  /// Triples with the given head, ordered by (relation, tail).
  std::span<const Triple> outgoing(EntityId head) const {
    ensure_index();
    if (head >= offsets_.size() - 1) return {};
    return std::span<const Triple>(by_head_).subspan(offsets_[head],
                                                     offsets_[head + 1] - offsets_[head]);
  }

  std::string_view entity_name(EntityId e) const { return entities.token(e); }
  std::string_view relation_name(RelationId r) const { return relations.token(r); }

  /// Must run before concurrent readers call outgoing().
  void build_index() const { ensure_index(); }

 private:
  void ensure_index() const {
    if (!index_dirty_ && !offsets_.empty()) return;
    by_head_ = triples;
    std::sort(by_head_.begin(), by_head_.end());
    offsets_.assign(entities.size() + 1, 0);
    for (const auto& t : by_head_) ++offsets_[t.head + 1];
    for (std::size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];
    index_dirty_ = false;
  }

  std::set<Triple> seen_;
  mutable std::vector<Triple> by_head_;
  mutable std::vector<std::size_t> offsets_;
  mutable bool index_dirty_ = true;
};

/// Parses head\trelation\ttail lines. Relation or tail may be empty; they are
/// rendered as "missing" downstream.
inline void parse_triples(KnowledgeGraph& kg, std::string_view text,
                          const std::string& origin = "<memory>") {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 3) throw ParseError(origin, line_no, "expected head\\trelation\\ttail");
    if (trim(cols[0]).empty()) throw ParseError(origin, line_no, "empty head entity");
    kg.add(trim(cols[0]), trim(cols[1]), trim(cols[2]));
  }
  kg.build_index();
}

/// Binds dataset items to KG entities from item_token\tentity_name lines.
inline void bind_items(KnowledgeGraph& kg, std::string_view map_text,
                       const Vocabulary& items, const std::string& origin = "<memory>") {
  kg.item_entity.assign(items.size(), std::nullopt);
  kg.item_names = items.tokens();
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < map_text.size()) {
    auto end = map_text.find('\n', pos);
    if (end == std::string_view::npos) end = map_text.size();
    std::string_view line = trim(map_text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) throw ParseError(origin, line_no, "expected item\\tentity");
    auto item = items.find(trim(cols[0]));
    if (!item) continue;  // item filtered out or absent from interactions
    auto name = trim(cols[1]);
    kg.item_names[*item] = std::string(name);
    if (auto ent = kg.entities.find(name)) {
      kg.item_entity[*item] = *ent;
    } else {
      kg.warnings.push_back("item " + std::string(cols[0]) + " maps to entity '" +
                            std::string(name) + "' absent from the KG; empty subgraph");
    }
  }
}

inline KnowledgeGraph load_kg(const std::string& triples_path, const std::string& item_map_path,
                              const Vocabulary& items) {
  KnowledgeGraph kg;
  parse_triples(kg, read_file(triples_path), triples_path);
  bind_items(kg, read_file(item_map_path), items, item_map_path);
  return kg;
}

// ---------------------------------------------------------------------------
// Split files

inline std::string format_edges(std::span<const Edge> edges) {
  std::string out;
  for (const auto& e : edges) {
    out += std::to_string(e.user);
    out += '\t';
    out += std::to_string(e.item);
    out += '\n';
  }
  return out;
}

inline std::vector<Edge> parse_edges(std::string_view text, const std::string& origin) {
  std::vector<Edge> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) throw ParseError(origin, line_no, "expected user\\titem ids");
    try {
      out.push_back({static_cast<UserId>(std::stoul(std::string(cols[0]))),
                     static_cast<ItemId>(std::stoul(std::string(cols[1])))});
    } catch (const std::logic_error&) {
      throw ParseError(origin, line_no, "non-numeric id");
    }
  }
  return out;
}

/// Vocabulary file: kind\ttoken\tid with kind in {user,item}.
inline std::string format_vocab(const Vocabulary& users, const Vocabulary& items) {
  std::string out;
  for (std::size_t i = 0; i < users.size(); ++i)
    out += "user\t" + users.token(static_cast<std::uint32_t>(i)) + "\t" + std::to_string(i) + "\n";
  for (std::size_t i = 0; i < items.size(); ++i)
    out += "item\t" + items.token(static_cast<std::uint32_t>(i)) + "\t" + std::to_string(i) + "\n";
  return out;
}

inline std::pair<Vocabulary, Vocabulary> parse_vocab(std::string_view text,
                                                     const std::string& origin) {
  Vocabulary users, items;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 3) throw ParseError(origin, line_no, "expected kind\\ttoken\\tid");
    auto& vocab = cols[0] == "user" ? users : items;
    if (cols[0] != "user" && cols[0] != "item") throw ParseError(origin, line_no, "bad kind");
    if (vocab.intern(cols[1]) != std::stoul(std::string(cols[2])))
      throw ParseError(origin, line_no, "ids must be dense and ordered");
  }
  return {std::move(users), std::move(items)};
}

}  // namespace colakg
