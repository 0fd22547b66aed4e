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

#include "colakg/embedding.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "colakg/remote_provider.hpp"

namespace colakg {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("colakg_embedding_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Second, independently written feature hasher: istringstream tokenization,
// byte-at-a-time FNV-1a, dense double accumulation.
std::vector<double> oracle_hash_embed(const std::string& text, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    std::uint64_t h = 14695981039346656037ULL;
    for (char c : tok) {
      h = h ^ static_cast<std::uint8_t>(c);
      h = h * 1099511628211ULL;
    }
    const bool negative = (h & (1ULL << 63)) != 0;
    v[h % dim] += negative ? -1.0 : 1.0;
  }
  double n = 0;
  for (double x : v) n += x * x;
  for (double& x : v) x /= std::sqrt(n);
  return v;
}

double cos_of(std::span<const float> a, std::span<const float> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(MockProvider, IdentityComprehension) {
  MockProvider p(16);
  PromptDocument doc;
  doc.body = "B";
  EXPECT_EQ(p.comprehend(doc), "B");
}

TEST(MockProvider, DeterministicUnitNorm) {
  MockProvider p(64);
  auto a = p.embed("the quick brown fox");
  auto b = p.embed("the quick brown fox");
  EXPECT_EQ(a, b);
  for (auto text : {"x", "a b c d e f g", "Drama Drama Drama Horror"}) {
    double n = 0;
    for (float x : p.embed(text)) n += double(x) * x;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
  EXPECT_THROW(p.embed("   "), Error);
}

TEST(MockProvider, MatchesIndependentHasher) {
  for (std::size_t dim : {8u, 32u, 1024u}) {
    for (std::string text : {"aa bb", "cc dd", "Apollo 13 genre Drama", "x\ty\nz"}) {
      auto got = hash_embed(text, dim);
      auto want = oracle_hash_embed(text, dim);
      for (std::size_t i = 0; i < dim; ++i) EXPECT_NEAR(got[i], want[i], 1e-7) << text;
    }
    auto a = hash_embed("aa bb", dim), b = hash_embed("cc dd", dim);
    auto oa = oracle_hash_embed("aa bb", dim), ob = oracle_hash_embed("cc dd", dim);
    double ref = 0;
    for (std::size_t i = 0; i < dim; ++i) ref += oa[i] * ob[i];
    EXPECT_NEAR(cos_of(a, b), ref, 1e-6);
  }
}

SemanticEmbeddingTable sample_table() {
  SemanticEmbeddingTable t;
  t.dim = 3;
  t.put(PromptKind::kItem, 0, {0.1f, -2.5f, 3.0e-8f});
  t.put(PromptKind::kItem, 1, {1.0f / 3.0f, 0.0f, -0.0f});
  t.put(PromptKind::kUser, 0, {123456.789f, 1e-30f, -7.0f});
  return t;
}

TEST(EmbeddingTable, TextRoundTripIsBitwise) {
  auto t = sample_table();
  auto text = format_embedding_text(t);
  EXPECT_TRUE(text.starts_with("dim=3\nitem\t0\t"));
  EXPECT_EQ(parse_embedding_text(text, "t"), t);
}

TEST(EmbeddingTable, BinaryRoundTripAndLayout) {
  auto t = sample_table();
  auto bin = format_embedding_binary(t);
  EXPECT_EQ(bin.substr(0, 4), "CLKG");
  EXPECT_EQ(bin.size(), 4u + 4u + 3u * (1u + 8u + 3u * 4u));
  EXPECT_EQ(static_cast<unsigned char>(bin[4]), 3u);
  EXPECT_EQ(parse_embedding_binary(bin), t);
}

TEST(EmbeddingTable, RejectsBadInput) {
  EXPECT_THROW(parse_embedding_text("item\t0\t1 2\n", "t"), ParseError);
  EXPECT_THROW(parse_embedding_text("dim=2\nitem\t0\t1 2 3\n", "t"), ParseError);
  EXPECT_THROW(parse_embedding_text("dim=2\nthing\t0\t1 2\n", "t"), ParseError);
  SemanticEmbeddingTable t;
  t.dim = 2;
  EXPECT_THROW(t.put(PromptKind::kItem, 0, {1.0f}), Error);
  EXPECT_THROW(t.put(PromptKind::kItem, 0, {1.0f, std::nanf("")}), Error);
}

TEST(EmbeddingTable, IncompleteListsMissingIds) {
  auto t = sample_table();
  try {
    t.require_complete(3, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIncomplete);
    std::string msg = e.what();
    EXPECT_NE(msg.find("item(s) [2]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("user(s) [1]"), std::string::npos) << msg;
  }
  EXPECT_NO_THROW(t.require_complete(2, 1));
}

std::vector<PromptDocument> five_prompts() {
  std::vector<PromptDocument> out;
  for (std::uint64_t i = 0; i < 3; ++i)
    out.push_back({PromptKind::kItem, i, "sys", "item body " + std::to_string(i)});
  for (std::uint64_t u = 0; u < 2; ++u)
    out.push_back({PromptKind::kUser, u, "sys", "user body " + std::to_string(u)});
  return out;
}

TEST(BuildTable, CardinalityAndFreshness) {
  MockProvider p(8);
  auto prompts = five_prompts();
  auto t = build_embedding_table(p, prompts);
  EXPECT_EQ(t.items.size() + t.users.size(), 5u);
  EXPECT_EQ(t.items.at(2), hash_embed("item body 2", 8));
  EXPECT_EQ(p.embed_calls(), 5u);
}

// Fails on its third embedding, as if the process had been killed.
class FlakyProvider : public MockProvider {
 public:
  using MockProvider::MockProvider;

 protected:
  std::vector<float> do_embed(std::string_view text) override {
    if (++n_ == 3) throw std::runtime_error("interrupted");
    return MockProvider::do_embed(text);
  }

 private:
  int n_ = 0;
};

TEST(BuildTable, ResumesWithoutRecomputing) {
  auto dir = fresh_dir("resume");
  const auto progress = (dir / "progress.txt").string();
  auto prompts = five_prompts();
  FlakyProvider flaky(8);
  EXPECT_THROW(build_embedding_table(flaky, prompts, progress), std::runtime_error);

  // Simulate a torn final append on top of the two finished records.
  {
    std::ofstream out(progress, std::ios::app);
    out << "item\t2\t0.1 0.";
  }
  MockProvider p(8);
  auto t = build_embedding_table(p, prompts, progress);
  EXPECT_EQ(p.comprehend_calls(), 3u);
  EXPECT_EQ(p.embed_calls(), 3u);
  EXPECT_EQ(t.items.size() + t.users.size(), 5u);

  MockProvider clean(8);
  EXPECT_EQ(build_embedding_table(clean, prompts), t);
  // Progress file now holds the complete table.
  EXPECT_EQ(parse_embedding_text(read_file(progress), progress), t);
}

TEST(BuildTable, FileModeMakesNoProviderCalls) {
  auto dir = fresh_dir("file_mode");
  MockProvider p(8);
  auto prompts = five_prompts();
  auto t = build_embedding_table(p, prompts);
  save_embedding_table(t, (dir / "emb.bin").string(), true);
  save_embedding_table(t, (dir / "emb.txt").string(), false);

  const auto before = provider_call_counter().load();
  EXPECT_EQ(ingest_embedding_file((dir / "emb.bin").string(), 3, 2, 8), t);
  EXPECT_EQ(ingest_embedding_file((dir / "emb.txt").string(), 3, 2), t);
  EXPECT_EQ(provider_call_counter().load(), before);

  try {
    ingest_embedding_file((dir / "emb.txt").string(), 4, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIncomplete);
  }
  EXPECT_THROW(ingest_embedding_file((dir / "emb.txt").string(), 3, 2, 16), Error);
}

TEST(ContentCacheTest, KeySeparatesParts) {
  EXPECT_NE(ContentCache::key({"ab", "c"}), ContentCache::key({"a", "bc"}));
  EXPECT_EQ(ContentCache::key({"tag", "item", "text"}).size(), 64u);
  auto dir = fresh_dir("cache");
  ContentCache c(dir);
  EXPECT_FALSE(c.get("k").has_value());
  c.put("k", "value");
  EXPECT_EQ(c.get("k"), "value");
}

// Local JSON endpoints standing in for a chat and an embedding service.
class FakeService {
 public:
  FakeService() {
    server_.Post("/chat", [this](const httplib::Request& req, httplib::Response& res) {
      ++chat_hits;
      if (fail_chat) {
        res.status = 503;
        return;
      }
      auto body = nlohmann::json::parse(req.body);
      last_temperature = body.at("temperature").get<double>();
      last_top_p = body.at("top_p").get<double>();
      last_auth = req.get_header_value("Authorization");
      auto user = body.at("messages").at(1).at("content").get<std::string>();
      res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", "about " + user}}}}}}}
                          .dump(),
                      "application/json");
    });
    server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      ++embed_hits;
      auto text = nlohmann::json::parse(req.body).at("input").get<std::string>();
      res.set_content(nlohmann::json{{"data", {{{"embedding", hash_embed(text, 4)}}}}}.dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeService() {
    server_.stop();
    thread_.join();
  }

  RemoteSettings settings(const fs::path& cache) const {
    RemoteSettings s;
    s.chat_url = "http://127.0.0.1:" + std::to_string(port_) + "/chat";
    s.embed_url = "http://127.0.0.1:" + std::to_string(port_) + "/embed";
    s.dim = 4;
    s.cache_dir = cache.string();
    s.backoff = std::chrono::milliseconds(1);
    s.timeout = std::chrono::seconds(5);
    return s;
  }

  std::atomic<int> chat_hits{0}, embed_hits{0};
  std::atomic<bool> fail_chat{false};
  double last_temperature = -1, last_top_p = -1;
  std::string last_auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST(Remote, CachedSecondPassMakesNoNetworkCalls) {
  FakeService svc;
  auto cache = fresh_dir("remote_cache");
  auto prompts = five_prompts();
  RemoteProvider first(svc.settings(cache), "secret");
  auto t1 = build_embedding_table(first, prompts);
  EXPECT_EQ(first.network_calls(), 10u);
  EXPECT_EQ(svc.chat_hits, 5);
  EXPECT_EQ(svc.last_temperature, 0.0);
  EXPECT_EQ(svc.last_top_p, 0.001);
  EXPECT_EQ(svc.last_auth, "Bearer secret");
  EXPECT_EQ(t1.items.at(1), hash_embed("about item body 1", 4));

  RemoteProvider second(svc.settings(cache), "secret");
  auto t2 = build_embedding_table(second, prompts);
  EXPECT_EQ(second.network_calls(), 0u);
  EXPECT_EQ(t2, t1);
}

TEST(Remote, RetriesThreeTimesThenFailsWithStatus) {
  FakeService svc;
  svc.fail_chat = true;
  RemoteProvider p(svc.settings(fresh_dir("remote_fail")), "k");
  PromptDocument doc{PromptKind::kItem, 0, "sys", "body"};
  try {
    p.comprehend(doc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("status 503"), std::string::npos) << e.what();
  }
  EXPECT_EQ(svc.chat_hits, 3);
  EXPECT_EQ(p.network_calls(), 3u);
}

TEST(Remote, MissingCredentialIsCredentialError) {
  const char* saved = std::getenv(kApiKeyEnv);
  std::string keep = saved ? saved : "";
  unsetenv(kApiKeyEnv);
  try {
    require_api_key();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCredential);
    EXPECT_EQ(exit_code(e.kind()), 3);
  }
  setenv(kApiKeyEnv, "abc", 1);
  EXPECT_EQ(require_api_key(), "abc");
  if (saved) setenv(kApiKeyEnv, keep.c_str(), 1);
  else unsetenv(kApiKeyEnv);
}

}  // namespace
}  // namespace colakg
