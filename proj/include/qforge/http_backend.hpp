#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>

#include "httplib.h"

#include "qforge/gateway.hpp"
#include "qforge/jsonl.hpp"
#include "qforge/pool.hpp"

namespace qforge {

struct HttpBackendConfig {
  std::string backend_id = "remote";
  std::string base_url;            // e.g. "http://localhost:8080"
  std::string path = "/v1/generate";
  std::string model;
  std::string api_key_env;         // env var holding the bearer token
  double rate_per_sec = 2.0;
  int burst = 4;
  int max_retries = 5;             // total attempts before giving up
  int initial_backoff_ms = 250;    // doubles per retry
  int max_backoff_ms = 8000;
  int max_in_flight = 8;
  int timeout_sec = 120;
};

// JSON-over-HTTP transport. One POST per generation:
//   {model, messages:[{role, text, image_refs}], temperature, top_p,
//    max_tokens} -> {text, finish_reason, usage:{prompt_tokens,
//    completion_tokens}}
// Transient failures (connect errors, 408/429/5xx) are retried with
// exponential backoff; a request fails only after max_retries attempts.
// A token bucket and an in-flight cap are shared across threads.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg,
                       std::set<Role> roles = {Role::target, Role::verifier,
                                               Role::synthesizer, Role::judge})
      : cfg_(std::move(cfg)),
        roles_(std::move(roles)),
        bucket_(cfg_.rate_per_sec, cfg_.burst),
        in_flight_(cfg_.max_in_flight) {
    if (cfg_.base_url.empty()) throw ConfigError("http backend: empty base_url");
    if (cfg_.max_retries < 1)
      throw ConfigError("http backend: max_retries must be >= 1");
    if (!cfg_.api_key_env.empty()) {
      if (const char* key = std::getenv(cfg_.api_key_env.c_str()))
        api_key_ = key;
    }
  }

  const std::string& id() const override { return cfg_.backend_id; }
  bool supports(Role role) const override { return roles_.count(role) > 0; }
  const HttpBackendConfig& config() const { return cfg_; }

  Completion generate(const Prompt& prompt) override {
    SemaphoreGuard guard(in_flight_);
    const std::string body = request_body(prompt).dump();
    const auto start = std::chrono::steady_clock::now();

    int backoff_ms = cfg_.initial_backoff_ms;
    std::string last_failure = "no attempt made";
    for (int attempt = 1; attempt <= cfg_.max_retries; ++attempt) {
      bucket_.acquire();
      httplib::Client client(cfg_.base_url);
      client.set_connection_timeout(cfg_.timeout_sec, 0);
      client.set_read_timeout(cfg_.timeout_sec, 0);
      if (!api_key_.empty())
        client.set_default_headers(
            {{"Authorization", "Bearer " + api_key_}});

      auto res = client.Post(cfg_.path, body, "application/json");
      if (res && res->status == 200) {
        Completion c = parse_completion(res->body);
        c.latency_ms = static_cast<int>(
            std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - start)
                .count());
        return c;
      }
      if (res && !transient(res->status))
        throw TransportError(cfg_.backend_id + ": HTTP " +
                             std::to_string(res->status) + " from " +
                             cfg_.path);
      last_failure = res ? "HTTP " + std::to_string(res->status)
                         : "connection error (" +
                               httplib::to_string(res.error()) + ")";
      if (attempt < cfg_.max_retries) {
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
        backoff_ms = std::min(backoff_ms * 2, cfg_.max_backoff_ms);
      }
    }
    throw TransportError(cfg_.backend_id + ": giving up after " +
                         std::to_string(cfg_.max_retries) + " attempts (" +
                         last_failure + ")");
  }

 private:
  static bool transient(int status) {
    return status == 408 || status == 429 || status >= 500;
  }

  json request_body(const Prompt& prompt) const {
    json messages = json::array();
    for (const auto& m : prompt.messages) {
      json msg{{"role", m.role}, {"text", m.text}};
      if (!m.image_refs.empty()) msg["image_refs"] = m.image_refs;
      messages.push_back(std::move(msg));
    }
    return json{{"model", cfg_.model},
                {"messages", std::move(messages)},
                {"temperature", prompt.decode.temperature},
                {"top_p", prompt.decode.top_p},
                {"max_tokens", prompt.decode.max_tokens}};
  }

  Completion parse_completion(const std::string& body) const {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("text"))
      throw TransportError(cfg_.backend_id + ": malformed response body");
    Completion c;
    c.text = j["text"].get<std::string>();
    c.finish_reason = finish_reason_from_string(
        j.value("finish_reason", std::string("stop")));
    if (c.finish_reason == FinishReason::error && !c.text.empty())
      throw TransportError(cfg_.backend_id +
                           ": finish_reason=error with non-empty text");
    if (j.contains("usage")) {
      c.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
      c.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
    return c;
  }

  HttpBackendConfig cfg_;
  std::set<Role> roles_;
  std::string api_key_;
  TokenBucket bucket_;
  Semaphore in_flight_;
};

}  // namespace qforge
