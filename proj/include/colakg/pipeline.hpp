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

// Pipeline stages over a work directory: prepare, embed, graph, train, eval,
// ablate and sweep. Each stage reads the artifacts of earlier stages from the
// work directory and writes a manifest next to its own outputs.

#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <filesystem>
#include <iostream>
#include <map>

#include "colakg/item_graph.hpp"
#include "colakg/remote_provider.hpp"
#include "colakg/trainer.hpp"

namespace colakg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

/// Flat key=value settings. Unknown keys are rejected so typos surface.
class Config {
 public:
  static const std::vector<std::pair<std::string, std::string>>& defaults() {
    static const std::vector<std::pair<std::string, std::string>> kDefaults = {
        {"interactions", ""},
        {"triples", ""},
        {"item_map", ""},
        {"work_dir", "work"},
        {"seed", "2024"},
        {"threads", "1"},
        {"deterministic", "false"},
        {"kcore", "5"},
        {"train_ratio", "0.8"},
        {"val_ratio", "0.1"},
        {"prompt_m", "10"},
        {"user_char_budget", "8000"},
        {"embed_mode", "mock"},
        {"embed_dim", "1024"},
        {"embedding_file", ""},
        {"embedding_file_no_second_order", ""},
        {"remote_chat_url", "https://api.deepseek.com/chat/completions"},
        {"remote_embed_url", ""},
        {"remote_chat_model", "deepseek-chat"},
        {"remote_embed_model", "sup-simcse-roberta-large"},
        {"remote_temperature", "0"},
        {"remote_top_p", "0.001"},
        {"remote_chat_pointer", "/choices/0/message/content"},
        {"remote_embedding_pointer", "/data/0/embedding"},
        {"remote_input_field", "input"},
        {"remote_cache_dir", ""},
        {"remote_max_in_flight", "4"},
        {"remote_max_attempts", "3"},
        {"remote_backoff_ms", "500"},
        {"graph_k", "20"},
        {"dim", "64"},
        {"attention_dim", "64"},
        {"layers", "3"},
        {"leaky_slope", "0.2"},
        {"lr", "0.001"},
        {"batch_size", "1024"},
        {"max_epochs", "200"},
        {"max_steps", "0"},
        {"l2", "1e-4"},
        {"dropout", "0.2"},
        {"patience", "20"},
        {"no_item_semantic", "false"},
        {"no_user_semantic", "false"},
        {"no_neighbor_aug", "false"},
        {"no_second_order", "false"},
        {"eval_ks", "10,20"},
        {"sweep_ks", "0,5,10,20,50"},
    };
    return kDefaults;
  }

  Config() {
    for (const auto& [k, v] : defaults()) values_[k] = v;
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorKind::kInput, "unknown config key: " + key);
    it->second = value;
  }

  /// Applies "key = value" lines; '#' starts a comment.
  void apply_text(std::string_view text, const std::string& origin) {
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
      auto end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      auto line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError(origin, line_no, "expected key = value");
      auto key = std::string(trim(line.substr(0, eq)));
      try {
        set(key, std::string(trim(line.substr(eq + 1))));
      } catch (const Error& e) {
        throw ParseError(origin, line_no, e.what());
      }
    }
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorKind::kInternal, "no config key " + key);
    return it->second;
  }

  std::uint64_t count(const std::string& key) const {
    const auto& s = str(key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw Error(ErrorKind::kInput, key + " must be a non-negative integer, got '" + s + "'");
    return v;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
      return v;
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::kInput, key + " must be a number, got '" + s + "'");
    }
  }

  bool flag(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no" || s.empty()) return false;
    throw Error(ErrorKind::kInput, key + " must be true or false, got '" + s + "'");
  }

  std::vector<std::size_t> counts(const std::string& key) const {
    std::vector<std::size_t> out;
    for (auto part : split(str(key), ',')) {
      part = trim(part);
      if (part.empty()) continue;
      std::size_t v = 0;
      auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
      if (ec != std::errc() || p != part.data() + part.size())
        throw Error(ErrorKind::kInput, key + " must be a comma-separated list of integers");
      out.push_back(v);
    }
    return out;
  }

  /// Sorted key=value lines; the basis of the config hash.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  std::string hash() const { return sha256_hex(canonical()); }
  const std::map<std::string, std::string>& values() const { return values_; }

  unsigned threads() const {
    if (flag("deterministic")) return 1;
    return static_cast<unsigned>(std::max<std::uint64_t>(1, count("threads")));
  }

 private:
  std::map<std::string, std::string> values_;
};

/// Defaults, then the optional config file, then explicit overrides.
inline Config load_config(const std::string& config_path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  Config cfg;
  if (!config_path.empty()) cfg.apply_text(read_file(config_path), config_path);
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  return cfg;
}

inline Ablation ablation_from(const Config& cfg) {
  Ablation a;
  a.no_item_semantic = cfg.flag("no_item_semantic");
  a.no_user_semantic = cfg.flag("no_user_semantic");
  a.no_neighbor_aug = cfg.flag("no_neighbor_aug");
  a.no_second_order = cfg.flag("no_second_order");
  return a;
}

inline TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.learning_rate = cfg.real("lr");
  t.batch_size = cfg.count("batch_size");
  t.max_epochs = cfg.count("max_epochs");
  t.max_steps = cfg.count("max_steps");
  t.l2 = cfg.real("l2");
  t.dropout = cfg.real("dropout");
  t.seed = cfg.count("seed");
  t.patience = cfg.count("patience");
  t.model.dim = cfg.count("dim");
  t.model.attention_dim = cfg.count("attention_dim");
  t.model.layers = cfg.count("layers");
  t.model.leaky_slope = cfg.real("leaky_slope");
  t.ablation = ablation_from(cfg);
  t.threads = cfg.threads();
  if (t.learning_rate <= 0) throw Error(ErrorKind::kInput, "lr must be positive");
  if (t.l2 < 0) throw Error(ErrorKind::kInput, "l2 must be non-negative");
  if (t.dropout < 0 || t.dropout >= 1) throw Error(ErrorKind::kInput, "dropout must lie in [0,1)");
  if (t.batch_size == 0 || t.model.dim == 0 || t.model.attention_dim == 0)
    throw Error(ErrorKind::kInput, "batch_size, dim and attention_dim must be positive");
  return t;
}

// ---------------------------------------------------------------------------
// Work directory

struct Workspace {
  fs::path dir;

  explicit Workspace(fs::path d) : dir(std::move(d)) {}

  std::string file(std::string_view name) const { return (dir / name).string(); }
  std::string train() const { return file("train.tsv"); }
  std::string val() const { return file("val.tsv"); }
  std::string test() const { return file("test.tsv"); }
  std::string vocab() const { return file("vocab.tsv"); }
  std::string prompts() const { return file("prompts.jsonl"); }
  std::string prompts_no_second_order() const { return file("prompts_no_second_order.jsonl"); }
  std::string embeddings() const { return file("embeddings.clkg"); }
  std::string embeddings_no_second_order() const { return file("embeddings_no_second_order.clkg"); }
  std::string graph() const { return file("item_graph.tsv"); }
  std::string graph_no_second_order() const { return file("item_graph_no_second_order.tsv"); }
  std::string last_checkpoint() const { return file("last.clkm"); }
  std::string best_checkpoint() const { return file("best.clkm"); }
  std::string train_log() const { return file("train_log.jsonl"); }
  std::string report_json() const { return file("report.json"); }
  std::string report_tsv() const { return file("report.tsv"); }
  std::string ablation_json() const { return file("ablation.json"); }
  std::string ablation_tsv() const { return file("ablation.tsv"); }
  std::string sweep_json() const { return file("sweep.json"); }
  std::string sweep_tsv() const { return file("sweep.tsv"); }
  std::string manifest(std::string_view command) const {
    return (dir / "manifests" / (std::string(command) + ".json")).string();
  }
};

inline bool exists(const std::string& path) {
  std::error_code ec;
  return fs::exists(path, ec);
}

/// Exclusive advisory lock on <work_dir>/.lock for the lifetime of the object.
class WorkDirLock {
 public:
  explicit WorkDirLock(const fs::path& dir) {
    fs::create_directories(dir);
    const auto path = (dir / ".lock").string();
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw Error(ErrorKind::kInternal, "cannot open lock file " + path);
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw Error(ErrorKind::kInternal,
                  "work directory " + dir.string() + " is locked by another command");
    }
  }
  ~WorkDirLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  WorkDirLock(const WorkDirLock&) = delete;
  WorkDirLock& operator=(const WorkDirLock&) = delete;

 private:
  int fd_ = -1;
};

/// Records what a command read and wrote, with content hashes.
class Manifest {
 public:
  Manifest(std::string command, const Config& cfg) : command_(std::move(command)), cfg_(cfg) {}

  void input(const std::string& label, const std::string& path) {
    inputs_[label] = {{"path", path}, {"sha256", sha256_file(path)}};
  }
  void output(const std::string& label, const std::string& path) {
    outputs_[label] = {{"path", path}, {"sha256", sha256_file(path)}};
  }
  void note(const std::string& key, nlohmann::ordered_json value) { extra_[key] = std::move(value); }

  void write(const Workspace& ws) const {
    nlohmann::ordered_json j;
    j["command"] = command_;
    j["config_hash"] = cfg_.hash();
    j["config"] = cfg_.values();
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    for (const auto& [k, v] : extra_.items()) j[k] = v;
    fs::create_directories(fs::path(ws.manifest(command_)).parent_path());
    write_file(ws.manifest(command_), j.dump(2) + "\n");
  }

 private:
  std::string command_;
  const Config& cfg_;
  nlohmann::ordered_json inputs_ = nlohmann::ordered_json::object();
  nlohmann::ordered_json outputs_ = nlohmann::ordered_json::object();
  nlohmann::ordered_json extra_ = nlohmann::ordered_json::object();
};

/// Warns when an artifact no longer matches the hash its producer recorded.
inline void check_fresh(const Workspace& ws, std::string_view producer, const std::string& path,
                        std::ostream& log) {
  if (!exists(ws.manifest(producer))) return;
  try {
    auto j = nlohmann::json::parse(read_file(ws.manifest(producer)));
    for (const auto& [label, entry] : j.at("outputs").items()) {
      if (entry.at("path").get<std::string>() != path) continue;
      if (entry.at("sha256").get<std::string>() != sha256_file(path))
        log << "warning: " << path << " changed after '" << producer << "' wrote it\n";
    }
  } catch (const nlohmann::json::exception&) {
    log << "warning: unreadable manifest " << ws.manifest(producer) << "\n";
  }
}

inline void require_stage(const std::string& path, std::string_view stage) {
  if (!exists(path))
    throw Error(ErrorKind::kMissingStage,
                "missing " + path + "; run '" + std::string(stage) + "' first");
}

// ---------------------------------------------------------------------------
// Stage results loaded back from disk

struct PreparedData {
  Vocabulary users;
  Vocabulary items;
  InteractionDataset ds;
};

inline PreparedData load_prepared(const Workspace& ws, std::ostream& log) {
  for (const auto& p : {ws.train(), ws.val(), ws.test(), ws.vocab()}) {
    require_stage(p, "prepare");
    check_fresh(ws, "prepare", p, log);
  }
  PreparedData out;
  std::tie(out.users, out.items) = parse_vocab(read_file(ws.vocab()), ws.vocab());
  auto check = [&](const std::vector<Edge>& edges, const std::string& path) {
    for (const auto& e : edges)
      if (e.user >= out.users.size() || e.item >= out.items.size())
        throw Error(ErrorKind::kInput, path + ": id outside the vocabulary");
    return edges;
  };
  out.ds = make_dataset(out.users.size(), out.items.size(),
                        check(parse_edges(read_file(ws.train()), ws.train()), ws.train()),
                        check(parse_edges(read_file(ws.val()), ws.val()), ws.val()),
                        check(parse_edges(read_file(ws.test()), ws.test()), ws.test()));
  return out;
}

inline SemanticEmbeddingTable load_table(const Workspace& ws, bool no_second_order,
                                         const PreparedData& data, std::ostream& log) {
  const auto path = no_second_order ? ws.embeddings_no_second_order() : ws.embeddings();
  require_stage(path, "embed");
  check_fresh(ws, "embed", path, log);
  auto t = load_embedding_table(path);
  t.require_complete(data.ds.n_items, data.ds.n_users);
  return t;
}

inline ItemItemGraph load_graph(const Workspace& ws, bool no_second_order, std::size_t n_items,
                                std::ostream& log) {
  const auto path = no_second_order ? ws.graph_no_second_order() : ws.graph();
  require_stage(path, "graph");
  check_fresh(ws, "graph", path, log);
  auto g = parse_item_graph(read_file(path), path);
  if (g.neighbors.size() != n_items)
    throw Error(ErrorKind::kInput, path + " covers " + std::to_string(g.neighbors.size()) +
                                       " items, dataset has " + std::to_string(n_items));
  return g;
}

/// Artifacts for training or evaluating one configuration; only the inputs
/// the enabled paths need are loaded.
inline TrainingArtifacts load_artifacts(const Workspace& ws, const PreparedData& data,
                                        const Ablation& ab, std::ostream& log) {
  TrainingArtifacts art;
  art.adjacency = NormalizedAdjacency::from_dataset(data.ds);
  const bool need_aug = !ab.no_neighbor_aug;
  const bool need_items = !ab.no_item_semantic || need_aug;
  const bool need_users = !ab.no_user_semantic;
  if (need_items || need_users) {
    auto table = load_table(ws, ab.no_second_order, data, log);
    if (need_items) art.item_semantic = table.dense(PromptKind::kItem, data.ds.n_items);
    if (need_users) art.user_semantic = table.dense(PromptKind::kUser, data.ds.n_users);
  }
  if (need_aug) art.neighbors = load_graph(ws, ab.no_second_order, data.ds.n_items, log).ids();
  return art;
}

// ---------------------------------------------------------------------------
// Stages

struct StageContext {
  Config cfg;
  std::ostream* log = &std::cerr;

  Workspace workspace() const { return Workspace(cfg.str("work_dir")); }
  std::ostream& out() const { return *log; }
};

inline void run_prepare(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto ws = ctx.workspace();
  for (const char* key : {"interactions", "triples", "item_map"})
    if (cfg.str(key).empty()) throw Error(ErrorKind::kInput, std::string("config key '") + key + "' is required");
  WorkDirLock lock(ws.dir);
  Manifest m("prepare", cfg);

  auto raw = load_interactions(cfg.str("interactions"));
  // Validate the KG inputs now so a bad path fails before anything is written.
  auto kg_probe = load_kg(cfg.str("triples"), cfg.str("item_map"), raw.items);
  m.input("interactions", cfg.str("interactions"));
  m.input("triples", cfg.str("triples"));
  m.input("item_map", cfg.str("item_map"));

  auto kept = kcore_filter(raw.edges, cfg.count("kcore"));
  auto log = reindex(raw, kept);
  if (log.edges.empty()) throw Error(ErrorKind::kInput, "no interactions survive k-core filtering");
  SplitConfig sc{cfg.real("train_ratio"), cfg.real("val_ratio"), cfg.count("seed")};
  auto ds = split_dataset(log, sc);

  write_file(ws.train(), format_edges(ds.train));
  write_file(ws.val(), format_edges(ds.val));
  write_file(ws.test(), format_edges(ds.test));
  write_file(ws.vocab(), format_vocab(log.users, log.items));
  for (auto [label, path] : {std::pair{"train", ws.train()}, {"val", ws.val()},
                             {"test", ws.test()}, {"vocab", ws.vocab()}})
    m.output(label, path);
  m.note("counts", {{"raw_edges", raw.edges.size()},
                    {"users", ds.n_users},
                    {"items", ds.n_items},
                    {"train", ds.train.size()},
                    {"val", ds.val.size()},
                    {"test", ds.test.size()}});
  m.note("kg_triples", kg_probe.triples.size());
  m.write(ws);
  ctx.out() << "prepare: " << ds.n_users << " users, " << ds.n_items << " items, "
            << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size()
            << " train/val/test edges\n";
}

inline RemoteSettings remote_settings_from(const Config& cfg, const Workspace& ws) {
  RemoteSettings s;
  s.chat_url = cfg.str("remote_chat_url");
  s.embed_url = cfg.str("remote_embed_url");
  s.chat_model = cfg.str("remote_chat_model");
  s.embed_model = cfg.str("remote_embed_model");
  s.temperature = cfg.real("remote_temperature");
  s.top_p = cfg.real("remote_top_p");
  s.dim = cfg.count("embed_dim");
  s.chat_text_pointer = cfg.str("remote_chat_pointer");
  s.embedding_pointer = cfg.str("remote_embedding_pointer");
  s.embed_input_field = cfg.str("remote_input_field");
  s.cache_dir = cfg.str("remote_cache_dir").empty() ? ws.file("cache") : cfg.str("remote_cache_dir");
  s.max_in_flight = static_cast<unsigned>(cfg.count("remote_max_in_flight"));
  s.max_attempts = static_cast<int>(std::max<std::uint64_t>(1, cfg.count("remote_max_attempts")));
  s.backoff = std::chrono::milliseconds(cfg.count("remote_backoff_ms"));
  return s;
}

struct RenderedPrompts {
  std::vector<PromptDocument> items;
  std::vector<PromptDocument> items_no_second_order;
  std::vector<PromptDocument> users;
};

inline RenderedPrompts render_prompts(const Config& cfg, const PreparedData& data) {
  auto kg = load_kg(cfg.str("triples"), cfg.str("item_map"), data.items);
  PromptOptions opt;
  opt.second_order_samples = cfg.count("prompt_m");
  opt.user_char_budget = cfg.count("user_char_budget");
  opt.seed = cfg.count("seed");
  RenderedPrompts r;
  r.items = render_all_item_prompts(kg, data.ds.n_items, opt);
  opt.include_second_order = false;
  r.items_no_second_order = render_all_item_prompts(kg, data.ds.n_items, opt);
  r.users = render_all_user_prompts(data.ds, kg, opt);
  return r;
}

inline void run_embed(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto ws = ctx.workspace();
  const auto mode = cfg.str("embed_mode");
  if (mode != "mock" && mode != "file" && mode != "remote")
    throw Error(ErrorKind::kInput, "embed_mode must be mock, file or remote");
  // Fail on a missing credential before touching anything else.
  std::string api_key;
  if (mode == "remote") api_key = require_api_key();
  WorkDirLock lock(ws.dir);
  Manifest m("embed", cfg);
  auto data = load_prepared(ws, ctx.out());
  const std::size_t n_items = data.ds.n_items, n_users = data.ds.n_users;

  if (mode == "file") {
    const auto path = cfg.str("embedding_file");
    if (path.empty()) throw Error(ErrorKind::kInput, "file mode requires embedding_file");
    const std::size_t dim = cfg.count("embed_dim");
    auto table = ingest_embedding_file(path, n_items, n_users, dim);
    m.input("embedding_file", path);
    save_embedding_table(table, ws.embeddings(), true);
    m.output("embeddings", ws.embeddings());
    const auto alt = cfg.str("embedding_file_no_second_order");
    if (!alt.empty()) {
      auto t2 = ingest_embedding_file(alt, n_items, n_users, dim);
      m.input("embedding_file_no_second_order", alt);
      save_embedding_table(t2, ws.embeddings_no_second_order(), true);
      m.output("embeddings_no_second_order", ws.embeddings_no_second_order());
    }
    m.note("provider_calls", 0);
    m.write(ws);
    ctx.out() << "embed: ingested " << n_items << " item and " << n_users << " user vectors\n";
    return;
  }

  m.input("triples", cfg.str("triples"));
  m.input("item_map", cfg.str("item_map"));
  auto prompts = render_prompts(cfg, data);
  std::vector<PromptDocument> all = prompts.items;
  all.insert(all.end(), prompts.users.begin(), prompts.users.end());
  write_file(ws.prompts(), format_prompt_dump(all));
  write_file(ws.prompts_no_second_order(), format_prompt_dump(prompts.items_no_second_order));
  m.output("prompts", ws.prompts());
  m.output("prompts_no_second_order", ws.prompts_no_second_order());

  std::unique_ptr<EmbeddingProvider> provider;
  if (mode == "mock") provider = std::make_unique<MockProvider>(cfg.count("embed_dim"));
  else provider = std::make_unique<RemoteProvider>(remote_settings_from(cfg, ws), api_key);

  // Progress files are keyed by provider and prompt content, so a resumed run
  // only reuses vectors for identical inputs.
  auto progress = [&](std::string_view name, const std::string& dump) {
    return ws.file(std::string(name) + "." +
                   sha256_hex(provider->tag() + '\0' + dump).substr(0, 16) + ".progress");
  };
  const auto calls_before = provider_call_counter().load();
  const auto main_progress = progress("embeddings", read_file(ws.prompts()));
  auto table = build_embedding_table(*provider, all, main_progress);
  const auto alt_progress = progress("embeddings_no_second_order", read_file(ws.prompts_no_second_order()));
  auto alt = build_embedding_table(*provider, prompts.items_no_second_order, alt_progress);
  alt.users = table.users;  // user prompts carry no second-order text
  table.require_complete(n_items, n_users);
  alt.require_complete(n_items, n_users);
  save_embedding_table(table, ws.embeddings(), true);
  save_embedding_table(alt, ws.embeddings_no_second_order(), true);
  m.output("embeddings", ws.embeddings());
  m.output("embeddings_no_second_order", ws.embeddings_no_second_order());
  m.note("provider", provider->tag());
  m.note("provider_calls", provider_call_counter().load() - calls_before);
  m.write(ws);
  ctx.out() << "embed: " << table.items.size() << " items, " << table.users.size()
            << " users, dim " << table.dim << " (" << provider->tag() << ")\n";
}

inline void run_graph(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto ws = ctx.workspace();
  WorkDirLock lock(ws.dir);
  Manifest m("graph", cfg);
  auto data = load_prepared(ws, ctx.out());
  const std::size_t k = cfg.count("graph_k");
  auto build = [&](bool no_second_order, const std::string& out_path) {
    auto table = load_table(ws, no_second_order, data, ctx.out());
    auto g = top_k_neighbors(table.dense(PromptKind::kItem, data.ds.n_items), k, cfg.threads());
    write_file(out_path, format_item_graph(g));
    m.input(no_second_order ? "embeddings_no_second_order" : "embeddings",
            no_second_order ? ws.embeddings_no_second_order() : ws.embeddings());
    m.output(no_second_order ? "graph_no_second_order" : "graph", out_path);
  };
  build(false, ws.graph());
  if (exists(ws.embeddings_no_second_order())) build(true, ws.graph_no_second_order());
  m.write(ws);
  ctx.out() << "graph: k=" << k << " over " << data.ds.n_items << " items\n";
}

inline std::vector<std::size_t> eval_ks(const Config& cfg) {
  auto ks = cfg.counts("eval_ks");
  if (ks.empty()) throw Error(ErrorKind::kInput, "eval_ks must list at least one k");
  for (auto k : ks)
    if (k == 0) throw Error(ErrorKind::kInput, "eval_ks entries must be positive");
  return ks;
}

inline void run_train(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto ws = ctx.workspace();
  const auto tc = train_config_from(cfg);
  WorkDirLock lock(ws.dir);
  Manifest m("train", cfg);
  auto data = load_prepared(ws, ctx.out());
  auto art = load_artifacts(ws, data, tc.ablation, ctx.out());
  const auto calls_before = provider_call_counter().load();

  std::string log_text;
  auto on_epoch = [&](const EpochLog& e, const ModelState<float>& st, bool improved) {
    log_text += format_epoch_log(e, tc.eval_k) + "\n";
    write_file(ws.train_log(), log_text);
    if (improved) save_checkpoint(st, ws.best_checkpoint());
  };
  auto res = train<float>(data.ds, art, tc, on_epoch);
  save_checkpoint(res.last, ws.last_checkpoint());
  if (!exists(ws.best_checkpoint())) save_checkpoint(res.best, ws.best_checkpoint());
  for (const auto& p : {ws.train(), ws.val(), ws.vocab()}) m.input(fs::path(p).filename().string(), p);
  if (!art.item_semantic.empty() || !art.user_semantic.empty())
    m.input("embeddings", tc.ablation.no_second_order ? ws.embeddings_no_second_order() : ws.embeddings());
  if (!art.neighbors.empty())
    m.input("graph", tc.ablation.no_second_order ? ws.graph_no_second_order() : ws.graph());
  m.output("best_checkpoint", ws.best_checkpoint());
  m.output("last_checkpoint", ws.last_checkpoint());
  m.output("train_log", ws.train_log());
  m.note("best_epoch", res.best_epoch);
  m.note("epochs", res.history.size());
  m.note("steps", res.steps);
  m.note("provider_calls", provider_call_counter().load() - calls_before);
  m.write(ws);
  ctx.out() << "train: " << res.history.size() << " epochs, best epoch " << res.best_epoch
            << " (val recall@" << tc.eval_k << " " << res.best_val_recall << ")\n";
}

/// Scores the test split with a trained state.
template <typename T>
MetricReport evaluate_state(const ModelState<T>& st, const InteractionDataset& ds,
                            const TrainingArtifacts& art, const TrainConfig& tc,
                            const std::vector<std::size_t>& ks) {
  const auto in = art.inputs(tc.ablation, tc.model, tc.threads);
  in.validate(ds.n_users, ds.n_items, st.semantic_dim());
  auto tr = forward(st, in);
  return evaluate(trace_scorer(tr), ds.n_items, EvalTargets::from_dataset(ds, EvalSplit::kTest),
                  ks, tc.threads);
}

inline void run_eval(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto ws = ctx.workspace();
  auto tc = train_config_from(cfg);
  const auto ks = eval_ks(cfg);
  WorkDirLock lock(ws.dir);
  Manifest m("eval", cfg);
  require_stage(ws.best_checkpoint(), "train");
  check_fresh(ws, "train", ws.best_checkpoint(), ctx.out());
  auto data = load_prepared(ws, ctx.out());
  auto st = load_checkpoint<float>(ws.best_checkpoint());
  if (st.n_users() != data.ds.n_users || st.n_items() != data.ds.n_items)
    throw Error(ErrorKind::kInput, "checkpoint shape does not match the prepared data");
  tc.model.dim = st.dim();
  tc.model.attention_dim = st.attention_dim();
  auto art = load_artifacts(ws, data, tc.ablation, ctx.out());
  const auto calls_before = provider_call_counter().load();
  auto rep = evaluate_state(st, data.ds, art, tc, ks);
  write_file(ws.report_json(), report_json(rep).dump(2) + "\n");
  write_file(ws.report_tsv(), report_tsv(rep));
  m.input("checkpoint", ws.best_checkpoint());
  m.input("test", ws.test());
  m.output("report_json", ws.report_json());
  m.output("report_tsv", ws.report_tsv());
  m.note("provider_calls", provider_call_counter().load() - calls_before);
  m.write(ws);
  ctx.out() << "eval:";
  for (std::size_t k : ks) ctx.out() << " recall@" << k << "=" << rep.recall(k) << " ndcg@" << k << "=" << rep.ndcg(k);
  ctx.out() << "\n";
}

// ---------------------------------------------------------------------------
// Experiment drivers

/// Loaded once and reused by every variant of an ablation or sweep.
struct ExperimentInputs {
  PreparedData data;
  SemanticEmbeddingTable table;
  std::optional<SemanticEmbeddingTable> table_no_second_order;

  static ExperimentInputs load(const Workspace& ws, std::ostream& log) {
    ExperimentInputs in;
    in.data = load_prepared(ws, log);
    in.table = load_table(ws, false, in.data, log);
    if (exists(ws.embeddings_no_second_order()))
      in.table_no_second_order = load_table(ws, true, in.data, log);
    return in;
  }
};

struct VariantResult {
  std::string name;
  Ablation ablation;
  std::size_t k = 0;
  MetricReport test;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
};

/// Trains one configuration from scratch and scores its best state on test.
/// The neighbor graph is rebuilt from the chosen embedding table with `k`.
inline VariantResult run_variant(const ExperimentInputs& in, std::string name, const Ablation& ab,
                                 std::size_t k, TrainConfig tc, const std::vector<std::size_t>& ks) {
  const auto& ds = in.data.ds;
  const SemanticEmbeddingTable* table = &in.table;
  if (ab.no_second_order) {
    if (!in.table_no_second_order)
      throw Error(ErrorKind::kMissingStage,
                  "no embeddings without second-order text; run 'embed' in mock or remote mode, "
                  "or set embedding_file_no_second_order");
    table = &*in.table_no_second_order;
  }
  tc.ablation = ab;
  TrainingArtifacts art;
  art.adjacency = NormalizedAdjacency::from_dataset(ds);
  art.item_semantic = table->dense(PromptKind::kItem, ds.n_items);
  art.user_semantic = table->dense(PromptKind::kUser, ds.n_users);
  if (!ab.no_neighbor_aug) art.neighbors = top_k_neighbors(art.item_semantic, k, tc.threads).ids();
  auto res = train<float>(ds, art, tc);
  VariantResult out;
  out.name = std::move(name);
  out.ablation = ab;
  out.k = k;
  out.test = evaluate_state(res.best, ds, art, tc, ks);
  out.best_epoch = res.best_epoch;
  out.epochs = res.history.size();
  return out;
}

inline std::vector<std::pair<std::string, Ablation>> ablation_variants() {
  std::vector<std::pair<std::string, Ablation>> v(5);
  v[0].first = "full";
  v[1].first = "w/o s_v";
  v[1].second.no_item_semantic = true;
  v[2].first = "w/o s_u";
  v[2].second.no_user_semantic = true;
  v[3].first = "w/o N_k(v)";
  v[3].second.no_neighbor_aug = true;
  v[4].first = "w/o D_v′";
  v[4].second.no_second_order = true;
  return v;
}

inline std::string variant_table_tsv(std::string_view key_name, const std::vector<VariantResult>& rows,
                                     bool key_is_k) {
  std::string out(key_name);
  const auto& ks = rows.empty() ? std::vector<std::size_t>{} : rows.front().test.ks;
  for (std::size_t k : ks) out += "\trecall@" + std::to_string(k) + "\tndcg@" + std::to_string(k);
  out += '\n';
  char buf[40];
  for (const auto& r : rows) {
    out += key_is_k ? std::to_string(r.k) : r.name;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f", r.test.overall.recall[i], r.test.overall.ndcg[i]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json variant_table_json(const std::vector<VariantResult>& rows) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["variant"] = r.name;
    j["k"] = r.k;
    j["best_epoch"] = r.best_epoch;
    j["epochs"] = r.epochs;
    j["test"] = metrics_json(r.test.ks, r.test.overall);
    arr.push_back(std::move(j));
  }
  return arr;
}

inline std::vector<VariantResult> run_ablate(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto ws = ctx.workspace();
  const auto tc = train_config_from(cfg);
  const auto ks = eval_ks(cfg);
  WorkDirLock lock(ws.dir);
  Manifest m("ablate", cfg);
  auto in = ExperimentInputs::load(ws, ctx.out());
  const std::size_t k = cfg.count("graph_k");
  std::vector<VariantResult> rows;
  for (const auto& [name, ab] : ablation_variants()) {
    rows.push_back(run_variant(in, name, ab, k, tc, ks));
    ctx.out() << "ablate: " << name << " recall@" << ks.back() << "="
              << rows.back().test.overall.recall.back() << "\n";
  }
  write_file(ws.ablation_tsv(), variant_table_tsv("variant", rows, false));
  write_file(ws.ablation_json(), variant_table_json(rows).dump(2) + "\n");
  m.input("embeddings", ws.embeddings());
  m.output("ablation_tsv", ws.ablation_tsv());
  m.output("ablation_json", ws.ablation_json());
  m.write(ws);
  return rows;
}

inline std::vector<VariantResult> run_sweep(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto ws = ctx.workspace();
  const auto tc = train_config_from(cfg);
  const auto ks = eval_ks(cfg);
  auto sweep = cfg.counts("sweep_ks");
  std::sort(sweep.begin(), sweep.end());
  sweep.erase(std::unique(sweep.begin(), sweep.end()), sweep.end());
  if (sweep.empty()) throw Error(ErrorKind::kInput, "sweep_ks must list at least one k");
  WorkDirLock lock(ws.dir);
  Manifest m("sweep", cfg);
  auto in = ExperimentInputs::load(ws, ctx.out());
  std::vector<VariantResult> rows;
  for (std::size_t k : sweep) {
    rows.push_back(run_variant(in, "k=" + std::to_string(k), {}, k, tc, ks));
    ctx.out() << "sweep: k=" << k << " recall@" << ks.back() << "="
              << rows.back().test.overall.recall.back() << "\n";
  }
  write_file(ws.sweep_tsv(), variant_table_tsv("k", rows, true));
  write_file(ws.sweep_json(), variant_table_json(rows).dump(2) + "\n");
  m.input("embeddings", ws.embeddings());
  m.output("sweep_tsv", ws.sweep_tsv());
  m.output("sweep_json", ws.sweep_json());
  m.write(ws);
  return rows;
}

}  // namespace colakg
