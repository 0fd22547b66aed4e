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

// Frozen semantic embeddings: providers, on-disk formats and the resumable
// table builder.

#pragma once

#include <openssl/evp.h>

#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>

#include "colakg/kg_text.hpp"

namespace colakg {

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::kInternal, "sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------------------
// Mock embedder

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Signed feature hashing over whitespace tokens, L2-normalized. Each token
/// contributes +-1 at index fnv1a(token) mod dim, sign from the top hash bit.
inline std::vector<float> hash_embed(std::string_view text, std::size_t dim) {
  if (dim == 0) throw Error(ErrorKind::kInput, "embedding dimension must be positive");
  std::vector<double> acc(dim, 0.0);
  std::size_t pos = 0;
  bool any = false;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  while (pos < text.size()) {
    while (pos < text.size() && is_space(text[pos])) ++pos;
    std::size_t end = pos;
    while (end < text.size() && !is_space(text[end])) ++end;
    if (end > pos) {
      const std::uint64_t h = fnv1a64(text.substr(pos, end - pos));
      acc[h % dim] += (h >> 63) ? -1.0 : 1.0;
      any = true;
    }
    pos = end;
  }
  if (!any) throw Error(ErrorKind::kInput, "cannot embed empty text");
  double norm = 0;
  for (double x : acc) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0) throw Error(ErrorKind::kInternal, "hash embedding cancelled to zero");
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] / norm);
  return out;
}

// ---------------------------------------------------------------------------
// Embedding table and formats

struct SemanticEmbeddingTable {
  std::size_t dim = 0;
  std::string provider_tag;
  std::map<std::uint64_t, std::vector<float>> items;
  std::map<std::uint64_t, std::vector<float>> users;

  auto& of(PromptKind k) { return k == PromptKind::kItem ? items : users; }
  const auto& of(PromptKind k) const { return k == PromptKind::kItem ? items : users; }

  void put(PromptKind kind, std::uint64_t id, std::vector<float> v) {
    if (v.size() != dim)
      throw Error(ErrorKind::kInput, "embedding dimension mismatch: got " +
                                         std::to_string(v.size()) + ", configured " +
                                         std::to_string(dim));
    for (float x : v)
      if (!std::isfinite(x)) throw Error(ErrorKind::kInput, "non-finite embedding component");
    of(kind)[id] = std::move(v);
  }

  std::vector<std::uint64_t> missing(PromptKind kind, std::size_t n) const {
    std::vector<std::uint64_t> out;
    const auto& m = of(kind);
    for (std::uint64_t id = 0; id < n; ++id)
      if (!m.contains(id)) out.push_back(id);
    return out;
  }

  /// Throws kIncomplete naming the missing ids.
  void require_complete(std::size_t n_items, std::size_t n_users) const {
    auto mi = missing(PromptKind::kItem, n_items);
    auto mu = missing(PromptKind::kUser, n_users);
    if (mi.empty() && mu.empty()) return;
    std::string msg = "embedding table incomplete:";
    auto list = [&msg](std::string_view kind, const std::vector<std::uint64_t>& ids) {
      if (ids.empty()) return;
      msg += " missing " + std::to_string(ids.size()) + " " + std::string(kind) + "(s) [";
      for (std::size_t i = 0; i < ids.size() && i < 50; ++i)
        msg += (i ? "," : "") + std::to_string(ids[i]);
      msg += ids.size() > 50 ? ",...]" : "]";
    };
    list("item", mi);
    list("user", mu);
    throw Error(ErrorKind::kIncomplete, msg);
  }

  Matrix<float> dense(PromptKind kind, std::size_t n) const {
    Matrix<float> out(n, dim);
    const auto& m = of(kind);
    for (std::size_t id = 0; id < n; ++id) {
      auto it = m.find(id);
      if (it == m.end())
        throw Error(ErrorKind::kIncomplete, "no embedding for " + std::string(to_string(kind)) +
                                                " " + std::to_string(id));
      std::copy(it->second.begin(), it->second.end(), out.row(id).begin());
    }
    return out;
  }

  bool operator==(const SemanticEmbeddingTable& o) const {
    return dim == o.dim && items == o.items && users == o.users;
  }
};

inline void append_float(std::string& out, float x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  out.append(buf, ptr);
}

inline std::string format_embedding_record(PromptKind kind, std::uint64_t id,
                                           std::span<const float> v) {
  std::string out(to_string(kind));
  out += '\t';
  out += std::to_string(id);
  out += '\t';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    append_float(out, v[i]);
  }
  out += '\n';
  return out;
}

inline std::string embedding_header(std::size_t dim) { return "dim=" + std::to_string(dim) + "\n"; }

/// Text format: "dim=<d>" then kind\tid\tfloats lines.
inline std::string format_embedding_text(const SemanticEmbeddingTable& t) {
  std::string out = embedding_header(t.dim);
  for (auto kind : {PromptKind::kItem, PromptKind::kUser})
    for (const auto& [id, v] : t.of(kind)) out += format_embedding_record(kind, id, v);
  return out;
}

/// With tolerate_torn_tail, a malformed final line (an interrupted append) is
/// ignored instead of raising.
inline SemanticEmbeddingTable parse_embedding_text(std::string_view text,
                                                   const std::string& origin,
                                                   bool tolerate_torn_tail = false) {
  SemanticEmbeddingTable t;
  std::size_t line_no = 0, pos = 0;
  bool header = false;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    const bool last = end == std::string_view::npos;
    if (last) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      if (!header) {
        if (!line.starts_with("dim=")) throw ParseError(origin, line_no, "missing dim= header");
        t.dim = std::stoul(std::string(line.substr(4)));
        if (t.dim == 0) throw ParseError(origin, line_no, "dim must be positive");
        header = true;
        continue;
      }
      auto cols = split(line, '\t');
      if (cols.size() != 3) throw ParseError(origin, line_no, "expected kind\\tid\\tvalues");
      PromptKind kind;
      if (cols[0] == "item") kind = PromptKind::kItem;
      else if (cols[0] == "user") kind = PromptKind::kUser;
      else throw ParseError(origin, line_no, "kind must be item or user");
      const auto id = std::stoull(std::string(cols[1]));
      std::vector<float> v;
      v.reserve(t.dim);
      const char* p = cols[2].data();
      const char* stop = p + cols[2].size();
      while (p < stop) {
        while (p < stop && *p == ' ') ++p;
        if (p == stop) break;
        float x;
        auto [next, ec] = std::from_chars(p, stop, x);
        if (ec != std::errc()) throw ParseError(origin, line_no, "bad float");
        v.push_back(x);
        p = next;
      }
      if (v.size() != t.dim)
        throw ParseError(origin, line_no, "expected " + std::to_string(t.dim) + " values");
      t.put(kind, id, std::move(v));
    } catch (const ParseError&) {
      if (tolerate_torn_tail && last && header) break;
      throw;
    } catch (const std::logic_error&) {
      if (tolerate_torn_tail && last && header) break;
      throw ParseError(origin, line_no, "bad number");
    }
  }
  if (!header) {
    if (tolerate_torn_tail) return t;
    throw ParseError(origin, 1, "missing dim= header");
  }
  return t;
}

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  std::make_unsigned_t<T> bits;
  std::memcpy(&bits, &value, sizeof bits);
  for (std::size_t i = 0; i < sizeof bits; ++i)
    out += static_cast<char>((bits >> (8 * i)) & 0xff);
}

inline void put_f32(std::string& out, float x) {
  std::uint32_t bits;
  std::memcpy(&bits, &x, 4);
  put_le(out, bits);
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(ErrorKind::kInput, "truncated binary file");
  std::make_unsigned_t<T> bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  T value;
  std::memcpy(&value, &bits, sizeof value);
  return value;
}

inline float get_f32(std::string_view in, std::size_t& pos) {
  auto bits = get_le<std::uint32_t>(in, pos);
  float x;
  std::memcpy(&x, &bits, 4);
  return x;
}

}  // namespace detail

/// Binary format: "CLKG", u32 dim, then (u8 kind, u64 id, dim x f32) records,
/// all little-endian. kind 0 = item, 1 = user.
inline std::string format_embedding_binary(const SemanticEmbeddingTable& t) {
  std::string out = "CLKG";
  detail::put_le(out, static_cast<std::uint32_t>(t.dim));
  for (auto kind : {PromptKind::kItem, PromptKind::kUser}) {
    for (const auto& [id, v] : t.of(kind)) {
      out += static_cast<char>(kind == PromptKind::kItem ? 0 : 1);
      detail::put_le(out, static_cast<std::uint64_t>(id));
      for (float x : v) detail::put_f32(out, x);
    }
  }
  return out;
}

inline SemanticEmbeddingTable parse_embedding_binary(std::string_view in) {
  if (in.substr(0, 4) != "CLKG") throw Error(ErrorKind::kInput, "bad embedding magic");
  std::size_t pos = 4;
  SemanticEmbeddingTable t;
  t.dim = detail::get_le<std::uint32_t>(in, pos);
  if (t.dim == 0) throw Error(ErrorKind::kInput, "dim must be positive");
  while (pos < in.size()) {
    const auto kind_byte = static_cast<unsigned char>(in[pos++]);
    if (kind_byte > 1) throw Error(ErrorKind::kInput, "bad record kind");
    const auto id = detail::get_le<std::uint64_t>(in, pos);
    std::vector<float> v(t.dim);
    for (auto& x : v) x = detail::get_f32(in, pos);
    t.put(kind_byte == 0 ? PromptKind::kItem : PromptKind::kUser, id, std::move(v));
  }
  return t;
}

/// Loads either format, sniffing the magic.
inline SemanticEmbeddingTable load_embedding_table(const std::string& path) {
  auto data = read_file(path);
  if (data.starts_with("CLKG")) return parse_embedding_binary(data);
  return parse_embedding_text(data, path);
}

inline void save_embedding_table(const SemanticEmbeddingTable& t, const std::string& path,
                                 bool binary = false) {
  write_file(path, binary ? format_embedding_binary(t) : format_embedding_text(t));
}

/// File mode: a pre-supplied table, checked for dimension and completeness.
/// No provider is involved.
inline SemanticEmbeddingTable ingest_embedding_file(const std::string& path, std::size_t n_items,
                                                    std::size_t n_users,
                                                    std::size_t expected_dim = 0) {
  auto t = load_embedding_table(path);
  if (expected_dim != 0 && t.dim != expected_dim)
    throw Error(ErrorKind::kInput, path + " has dim " + std::to_string(t.dim) + ", configured " +
                                       std::to_string(expected_dim));
  t.require_complete(n_items, n_users);
  return t;
}

// ---------------------------------------------------------------------------
// Providers

/// Total comprehend/embed invocations across every provider in the process.
inline std::atomic<std::uint64_t>& provider_call_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

enum class ProviderMode { kMock, kFile, kRemote };

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string tag() const = 0;
  virtual std::size_t dim() const = 0;
  virtual ProviderMode mode() const = 0;
  /// Upper bound on concurrent requests the builder may issue.
  virtual unsigned parallelism() const { return 1; }

  std::string comprehend(const PromptDocument& doc) {
    ++comprehend_calls_;
    ++provider_call_counter();
    auto text = do_comprehend(doc);
    if (trim(text).empty())
      throw Error(ErrorKind::kInternal, "empty comprehension for " +
                                            std::string(to_string(doc.kind)) + " " +
                                            std::to_string(doc.subject_id));
    return text;
  }

  std::vector<float> embed(std::string_view text) {
    ++embed_calls_;
    ++provider_call_counter();
    if (trim(text).empty()) throw Error(ErrorKind::kInput, "cannot embed empty text");
    auto v = do_embed(text);
    if (v.size() != dim())
      throw Error(ErrorKind::kInput, "provider returned dimension " + std::to_string(v.size()) +
                                         ", configured " + std::to_string(dim()));
    return v;
  }

  std::uint64_t comprehend_calls() const { return comprehend_calls_; }
  std::uint64_t embed_calls() const { return embed_calls_; }

 protected:
  virtual std::string do_comprehend(const PromptDocument& doc) = 0;
  virtual std::vector<float> do_embed(std::string_view text) = 0;

 private:
  std::atomic<std::uint64_t> comprehend_calls_{0};
  std::atomic<std::uint64_t> embed_calls_{0};
};

/// Identity comprehension plus feature-hash embedding.
class MockProvider : public EmbeddingProvider {
 public:
  explicit MockProvider(std::size_t dim) : dim_(dim) {}
  std::string tag() const override { return "mock-hash-" + std::to_string(dim_); }
  std::size_t dim() const override { return dim_; }
  ProviderMode mode() const override { return ProviderMode::kMock; }

 protected:
  std::string do_comprehend(const PromptDocument& doc) override { return doc.body; }
  std::vector<float> do_embed(std::string_view text) override { return hash_embed(text, dim_); }

 private:
  std::size_t dim_;
};

/// Content-addressed cache. Reads are lock-free file lookups; writes are
/// serialized and atomic via rename.
class ContentCache {
 public:
  explicit ContentCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  bool enabled() const { return !dir_.empty(); }

  std::optional<std::string> get(const std::string& key) const {
    if (!enabled()) return std::nullopt;
    auto path = dir_ / key;
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    return read_file(path.string());
  }

  void put(const std::string& key, std::string_view value) {
    if (!enabled()) return;
    std::lock_guard lock(mu_);
    auto tmp = dir_ / (key + ".tmp");
    write_file(tmp.string(), value);
    std::filesystem::rename(tmp, dir_ / key);
  }

  static std::string key(std::initializer_list<std::string_view> parts) {
    std::string joined;
    for (auto p : parts) {
      joined += p;
      joined += '\0';
    }
    return sha256_hex(joined);
  }

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Table builder

/// Embeds every prompt, appending finished records to progress_path so an
/// interrupted run resumes without recomputing them. Subjects already present
/// in the progress file are not sent to the provider.
inline SemanticEmbeddingTable build_embedding_table(EmbeddingProvider& provider,
                                                    std::span<const PromptDocument> prompts,
                                                    const std::string& progress_path = {}) {
  SemanticEmbeddingTable table;
  table.dim = provider.dim();
  table.provider_tag = provider.tag();

  std::ofstream progress;
  if (!progress_path.empty()) {
    std::error_code ec;
    if (std::filesystem::exists(progress_path, ec)) {
      auto prior = parse_embedding_text(read_file(progress_path), progress_path, true);
      if (prior.dim != 0 && prior.dim != table.dim)
        throw Error(ErrorKind::kInput, "progress file " + progress_path + " has dim " +
                                           std::to_string(prior.dim));
      table.items = std::move(prior.items);
      table.users = std::move(prior.users);
      // Rewrite cleanly so a torn tail line does not linger.
      auto clean = table;
      clean.dim = table.dim;
      write_file(progress_path, format_embedding_text(clean));
    } else {
      write_file(progress_path, embedding_header(table.dim));
    }
    progress.open(progress_path, std::ios::app | std::ios::binary);
  }

  std::vector<const PromptDocument*> todo;
  for (const auto& p : prompts)
    if (!table.of(p.kind).contains(p.subject_id)) todo.push_back(&p);

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next++;
      if (i >= todo.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        const auto& doc = *todo[i];
        auto v = provider.embed(provider.comprehend(doc));
        std::lock_guard lock(mu);
        table.put(doc.kind, doc.subject_id, v);
        if (progress.is_open()) {
          progress << format_embedding_record(doc.kind, doc.subject_id, v);
          progress.flush();
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const unsigned threads = std::max(1u, provider.parallelism());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<std::string> absent;
  for (const auto& p : prompts)
    if (!table.of(p.kind).contains(p.subject_id))
      absent.push_back(std::string(to_string(p.kind)) + " " + std::to_string(p.subject_id));
  if (!absent.empty()) {
    std::string msg = "embedding build left ids without vectors:";
    for (const auto& a : absent) msg += " " + a;
    throw Error(ErrorKind::kIncomplete, msg);
  }
  return table;
}

}  // namespace colakg
