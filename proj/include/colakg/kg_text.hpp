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

// Item-centered KG subgraph extraction and prompt rendering.

#pragma once

#include <nlohmann/json.hpp>
#include <random>

#include "colakg/data.hpp"

namespace colakg {

inline constexpr std::string_view kItemInstruction =
    "You are given facts about an item from a knowledge graph. Summarize the item, "
    "infer and fill in missing attributes, and describe what kind of user would like "
    "it, in one paragraph.";

inline constexpr std::string_view kUserInstruction =
    "You are given the items a user interacted with and their knowledge-graph facts. "
    "Describe this user's preferences in one paragraph.";

inline constexpr std::string_view kMissing = "missing";

struct PromptOptions {
  std::size_t second_order_samples = 10;  // m
  bool include_second_order = true;
  std::size_t user_char_budget = 8000;
  std::uint64_t seed = 2024;
};

struct SecondOrderGroup {
  EntityId neighbor;
  std::vector<Triple> triples;  // sampled T_e^m
};

struct ItemSubgraph {
  ItemId item = 0;
  std::optional<EntityId> entity;
  std::vector<Triple> first_order;
  std::vector<SecondOrderGroup> second_order;
};

enum class PromptKind { kItem, kUser };

inline std::string_view to_string(PromptKind k) {
  return k == PromptKind::kItem ? "item" : "user";
}

struct PromptDocument {
  PromptKind kind = PromptKind::kItem;
  std::uint64_t subject_id = 0;
  std::string system_instruction;
  std::string body;
};

/// T_v: every triple with the item's entity as head, in (relation, tail) order.
inline std::vector<Triple> extract_first_order(const KnowledgeGraph& kg, ItemId item) {
  if (item >= kg.item_entity.size() || !kg.item_entity[item]) return {};
  auto out = kg.outgoing(*kg.item_entity[item]);
  return {out.begin(), out.end()};
}

/// Uniform sample without replacement of at most m triples from
/// T_e = {(e, r, v') : v' != v}. Output keeps (relation, tail) order.
template <typename Rng>
std::vector<Triple> sample_second_order(const KnowledgeGraph& kg, EntityId neighbor,
                                        std::optional<EntityId> item_entity, std::size_t m,
                                        Rng& rng) {
  std::vector<Triple> pool;
  for (const auto& t : kg.outgoing(neighbor))
    if (!item_entity || t.tail != *item_entity) pool.push_back(t);
  if (pool.size() <= m) return pool;
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline ItemSubgraph build_item_subgraph(const KnowledgeGraph& kg, ItemId item,
                                        const PromptOptions& opt) {
  ItemSubgraph sg;
  sg.item = item;
  if (item < kg.item_entity.size()) sg.entity = kg.item_entity[item];
  sg.first_order = extract_first_order(kg, item);
  if (!opt.include_second_order) return sg;
  std::mt19937_64 rng(mix_seed(opt.seed, item));
  std::vector<EntityId> neighbors;
  for (const auto& t : sg.first_order)
    if (std::find(neighbors.begin(), neighbors.end(), t.tail) == neighbors.end())
      neighbors.push_back(t.tail);
  for (EntityId e : neighbors) {
    auto sampled = sample_second_order(kg, e, sg.entity, opt.second_order_samples, rng);
    if (!sampled.empty()) sg.second_order.push_back({e, std::move(sampled)});
  }
  return sg;
}

namespace detail {

inline std::string_view or_missing(std::string_view s) { return s.empty() ? kMissing : s; }

inline std::string item_display_name(const KnowledgeGraph& kg, ItemId item) {
  if (item < kg.item_names.size() && !kg.item_names[item].empty()) return kg.item_names[item];
  return std::string(kMissing);
}

}  // namespace detail

/// D_v: "(head, relation, tail)" per triple joined by "; ", or the placeholder
/// triple when the item has no facts.
inline std::string serialize_first_order(const KnowledgeGraph& kg, ItemId item,
                                         std::span<const Triple> triples) {
  if (triples.empty()) return "(" + detail::item_display_name(kg, item) + ", missing, missing)";
  std::string out;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& t = triples[i];
    if (i) out += "; ";
    out += '(';
    out += detail::or_missing(kg.entity_name(t.head));
    out += ", ";
    out += detail::or_missing(kg.relation_name(t.relation));
    out += ", ";
    out += detail::or_missing(kg.entity_name(t.tail));
    out += ')';
  }
  return out;
}

/// D_v': one sentence per (neighbor, relation) group.
inline std::string serialize_second_order(const KnowledgeGraph& kg,
                                          std::span<const SecondOrderGroup> groups) {
  std::string out;
  for (const auto& g : groups) {
    std::size_t i = 0;
    while (i < g.triples.size()) {
      const RelationId rel = g.triples[i].relation;
      if (!out.empty()) out += ' ';
      out += "Other items connected to ";
      out += detail::or_missing(kg.entity_name(g.neighbor));
      out += " via ";
      out += detail::or_missing(kg.relation_name(rel));
      out += ": ";
      bool first = true;
      for (; i < g.triples.size() && g.triples[i].relation == rel; ++i) {
        if (!first) out += ", ";
        first = false;
        out += detail::or_missing(kg.entity_name(g.triples[i].tail));
      }
      out += '.';
    }
  }
  return out;
}

inline PromptDocument render_item_prompt(const ItemSubgraph& sg, const KnowledgeGraph& kg) {
  PromptDocument doc;
  doc.kind = PromptKind::kItem;
  doc.subject_id = sg.item;
  doc.system_instruction = std::string(kItemInstruction);
  doc.body = serialize_first_order(kg, sg.item, sg.first_order);
  auto second = serialize_second_order(kg, sg.second_order);
  if (!second.empty()) {
    doc.body += '\n';
    doc.body += second;
  }
  return doc;
}

/// D_u: "name_v: D_v" per training item in interaction order, one per line.
/// Whole lines are dropped from the end until the body fits the budget; the
/// first line is always kept.
inline PromptDocument render_user_prompt(UserId user, const InteractionDataset& ds,
                                         const KnowledgeGraph& kg, std::size_t char_budget) {
  if (user >= ds.user_items.size() || ds.user_items[user].empty())
    throw Error(ErrorKind::kInput, "user " + std::to_string(user) + " has no training items");
  PromptDocument doc;
  doc.kind = PromptKind::kUser;
  doc.subject_id = user;
  doc.system_instruction = std::string(kUserInstruction);
  for (ItemId v : ds.user_items[user]) {
    auto triples = extract_first_order(kg, v);
    std::string line = detail::item_display_name(kg, v) + ": " +
                       serialize_first_order(kg, v, triples);
    const std::size_t extra = doc.body.empty() ? line.size() : line.size() + 1;
    if (!doc.body.empty() && doc.body.size() + extra > char_budget) break;
    if (!doc.body.empty()) doc.body += '\n';
    doc.body += line;
  }
  return doc;
}

inline std::vector<PromptDocument> render_all_item_prompts(const KnowledgeGraph& kg,
                                                           std::size_t n_items,
                                                           const PromptOptions& opt) {
  std::vector<PromptDocument> out;
  out.reserve(n_items);
  for (ItemId v = 0; v < n_items; ++v)
    out.push_back(render_item_prompt(build_item_subgraph(kg, v, opt), kg));
  return out;
}

inline std::vector<PromptDocument> render_all_user_prompts(const InteractionDataset& ds,
                                                           const KnowledgeGraph& kg,
                                                           const PromptOptions& opt) {
  std::vector<PromptDocument> out;
  out.reserve(ds.n_users);
  for (UserId u = 0; u < ds.n_users; ++u)
    out.push_back(render_user_prompt(u, ds, kg, opt.user_char_budget));
  return out;
}

/// One JSON object per line: {"kind","id","system","body"}.
inline std::string format_prompt_dump(std::span<const PromptDocument> docs) {
  std::string out;
  for (const auto& d : docs) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(d.kind);
    j["id"] = d.subject_id;
    j["system"] = d.system_instruction;
    j["body"] = d.body;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<PromptDocument> parse_prompt_dump(std::string_view text) {
  std::vector<PromptDocument> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line);
    PromptDocument d;
    d.kind = j.at("kind").get<std::string>() == "user" ? PromptKind::kUser : PromptKind::kItem;
    d.subject_id = j.at("id").get<std::uint64_t>();
    d.system_instruction = j.at("system").get<std::string>();
    d.body = j.at("body").get<std::string>();
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace colakg
