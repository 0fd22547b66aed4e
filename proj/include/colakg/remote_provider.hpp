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

// JSON-over-HTTP chat and embedding endpoints with retry and a content cache.

#pragma once

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <nlohmann/json.hpp>

#include "colakg/embedding.hpp"

namespace colakg {

inline constexpr const char* kApiKeyEnv = "COLAKG_API_KEY";

struct RemoteSettings {
  std::string chat_url = "https://api.deepseek.com/chat/completions";
  std::string embed_url;
  std::string chat_model = "deepseek-chat";
  std::string embed_model = "sup-simcse-roberta-large";
  double temperature = 0.0;
  double top_p = 0.001;
  std::size_t dim = 1024;
  // JSON pointers into the response bodies, and the request field carrying
  // the embedding input.
  std::string chat_text_pointer = "/choices/0/message/content";
  std::string embedding_pointer = "/data/0/embedding";
  std::string embed_input_field = "input";
  std::string cache_dir;
  unsigned max_in_flight = 4;
  int max_attempts = 3;
  std::chrono::milliseconds backoff{500};
  std::chrono::seconds timeout{120};
};

/// Reads the credential; throws kCredential when unset.
inline std::string require_api_key() {
  const char* key = std::getenv(kApiKeyEnv);
  if (key == nullptr || *key == '\0')
    throw Error(ErrorKind::kCredential,
                std::string("remote mode requires the ") + kApiKeyEnv + " environment variable");
  return key;
}

class RemoteProvider : public EmbeddingProvider {
 public:
  RemoteProvider(RemoteSettings settings, std::string api_key)
      : settings_(std::move(settings)), api_key_(std::move(api_key)), cache_(settings_.cache_dir) {
    if (settings_.embed_url.empty())
      throw Error(ErrorKind::kInput, "remote mode requires an embedding endpoint url");
  }

  std::string tag() const override {
    return "remote:" + settings_.chat_model + "+" + settings_.embed_model + "-" +
           std::to_string(settings_.dim);
  }
  std::size_t dim() const override { return settings_.dim; }
  ProviderMode mode() const override { return ProviderMode::kRemote; }
  unsigned parallelism() const override { return std::max(1u, settings_.max_in_flight); }

  std::uint64_t network_calls() const { return network_calls_; }

 protected:
  std::string do_comprehend(const PromptDocument& doc) override {
    const auto key = ContentCache::key({tag(), to_string(doc.kind), doc.system_instruction, doc.body});
    if (auto hit = cache_.get(key)) return *hit;
    nlohmann::json req = {
        {"model", settings_.chat_model},
        {"messages",
         {{{"role", "system"}, {"content", doc.system_instruction}},
          {{"role", "user"}, {"content", doc.body}}}},
        {"temperature", settings_.temperature},
        {"top_p", settings_.top_p},
        {"stream", false},
    };
    auto resp = post(settings_.chat_url, req);
    const auto ptr = nlohmann::json::json_pointer(settings_.chat_text_pointer);
    if (!resp.contains(ptr) || !resp.at(ptr).is_string())
      throw Error(ErrorKind::kInternal, "chat response lacks " + settings_.chat_text_pointer);
    auto text = resp.at(ptr).get<std::string>();
    if (trim(text).empty()) throw Error(ErrorKind::kInternal, "empty chat response");
    cache_.put(key, text);
    return text;
  }

  std::vector<float> do_embed(std::string_view text) override {
    const auto key = ContentCache::key({tag(), "embedding", text});
    if (auto hit = cache_.get(key)) {
      auto t = parse_embedding_text(*hit, "cache:" + key);
      return t.items.at(0);
    }
    nlohmann::json req = {{"model", settings_.embed_model},
                          {settings_.embed_input_field, std::string(text)}};
    auto resp = post(settings_.embed_url, req);
    const auto ptr = nlohmann::json::json_pointer(settings_.embedding_pointer);
    if (!resp.contains(ptr) || !resp.at(ptr).is_array())
      throw Error(ErrorKind::kInternal, "embedding response lacks " + settings_.embedding_pointer);
    auto v = resp.at(ptr).get<std::vector<float>>();
    if (v.size() == settings_.dim) {
      cache_.put(key, embedding_header(v.size()) + format_embedding_record(PromptKind::kItem, 0, v));
    }
    return v;
  }

 private:
  nlohmann::json post(const std::string& url, const nlohmann::json& body) {
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    const std::string origin = url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    const std::string payload = body.dump();

    std::string last = "no attempt made";
    for (int attempt = 0; attempt < settings_.max_attempts; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(settings_.backoff * (1 << (attempt - 1)));
      ++network_calls_;
      httplib::Client client(origin);
      client.set_read_timeout(settings_.timeout.count(), 0);
      client.set_bearer_token_auth(api_key_);
      auto res = client.Post(path, payload, "application/json");
      if (!res) {
        last = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last = "status " + std::to_string(res->status);
        continue;
      }
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        last = std::string("invalid JSON: ") + e.what();
      }
    }
    throw Error(ErrorKind::kInternal, "request to " + url + " failed after " +
                                          std::to_string(settings_.max_attempts) +
                                          " attempts; last " + last);
  }

  RemoteSettings settings_;
  std::string api_key_;
  ContentCache cache_;
  std::atomic<std::uint64_t> network_calls_{0};
};

}  // namespace colakg
