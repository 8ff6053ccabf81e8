#include <chrono>
#include <cstdlib>
#include <random>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "meea/clients.hpp"

namespace meea {

namespace {

std::string body_excerpt(const std::string& body) {
  if (body.size() <= 200) return body;
  return body.substr(0, 200) + "...";
}

bool transient_status(int status) { return status == 429 || (status >= 500 && status < 600); }

// host part ("http://host:port") and optional path prefix
std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
  size_t scheme = base_url.find("://");
  if (scheme == std::string::npos) {
    throw std::invalid_argument("base_url must include a scheme: " + base_url);
  }
  size_t slash = base_url.find('/', scheme + 3);
  if (slash == std::string::npos) return {base_url, ""};
  std::string prefix = base_url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base_url.substr(0, slash), prefix};
}

}  // namespace

std::string role_name(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  throw std::logic_error("bad role");
}

Role role_from_name(const std::string& name) {
  if (name == "system") return Role::System;
  if (name == "user") return Role::User;
  if (name == "assistant") return Role::Assistant;
  throw std::invalid_argument("unknown message role: " + name);
}

Message::Message(Role role_, std::string content_)
    : role(role_), content(std::move(content_)) {
  if (content.empty() && role != Role::System) {
    throw std::invalid_argument("only system messages may be empty");
  }
}

void EndpointConfig::validate() const {
  if (base_url.empty()) throw std::invalid_argument("endpoint base_url must be set");
  if (timeout_ms <= 0) throw std::invalid_argument("endpoint timeout_ms must be > 0");
  if (max_retries < 0) throw std::invalid_argument("endpoint max_retries must be >= 0");
  if (requests_per_minute <= 0) {
    throw std::invalid_argument("endpoint requests_per_minute must be > 0");
  }
}

bool offline_mode() {
  const char* v = std::getenv("MEEA_OFFLINE");
  return v != nullptr && std::string(v) == "1";
}

HttpChatEndpoint::HttpChatEndpoint(EndpointConfig config) : config_(std::move(config)) {
  config_.validate();
  tokens_ = static_cast<double>(config_.requests_per_minute);
  last_refill_ = std::chrono::steady_clock::now();
}

void HttpChatEndpoint::acquire_token() {
  std::unique_lock lock(bucket_mutex_);
  for (;;) {
    auto now = std::chrono::steady_clock::now();
    double elapsed = std::chrono::duration<double>(now - last_refill_).count();
    last_refill_ = now;
    tokens_ = std::min(static_cast<double>(config_.requests_per_minute),
                       tokens_ + elapsed * config_.requests_per_minute / 60.0);
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    double wait_s = (1.0 - tokens_) * 60.0 / config_.requests_per_minute;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
    lock.lock();
  }
}

std::string HttpChatEndpoint::post_json(const std::string& path, const std::string& body) {
  if (offline_mode()) {
    throw endpoint_error("network use forbidden by MEEA_OFFLINE=1");
  }
  auto [host, prefix] = split_base_url(config_.base_url);

  httplib::Client client(host);
  client.set_connection_timeout(std::chrono::milliseconds(config_.timeout_ms));
  client.set_read_timeout(std::chrono::milliseconds(config_.timeout_ms));
  client.set_write_timeout(std::chrono::milliseconds(config_.timeout_ms));

  httplib::Headers headers;
  if (!config_.auth_token_env_var.empty()) {
    const char* token = std::getenv(config_.auth_token_env_var.c_str());
    if (token == nullptr || *token == '\0') {
      throw endpoint_error("auth token env var " + config_.auth_token_env_var +
                           " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  static thread_local std::mt19937 jitter_rng{std::random_device{}()};
  std::uniform_int_distribution<int> jitter_ms(0, 100);

  int last_status = 0;
  std::string last_message;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      int backoff = 500 * (1 << (attempt - 1)) + jitter_ms(jitter_rng);
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
    }
    acquire_token();
    auto res = client.Post(prefix + path, headers, body, "application/json");
    if (!res) {
      last_status = 0;
      last_message = "transport failure: " + httplib::to_string(res.error());
      continue;  // connection errors and timeouts are transient
    }
    if (res->status == 200) return res->body;
    if (transient_status(res->status)) {
      last_status = res->status;
      last_message = "HTTP " + std::to_string(res->status) + ": " + body_excerpt(res->body);
      continue;
    }
    throw endpoint_error("HTTP " + std::to_string(res->status) + ": " +
                             body_excerpt(res->body),
                         res->status, /*transient=*/false);
  }
  throw endpoint_error("retries exhausted after " + std::to_string(config_.max_retries + 1) +
                           " attempts; last: " + last_message,
                       last_status, /*transient=*/true);
}

std::string HttpChatEndpoint::complete(const std::vector<Message>& history,
                                       const std::string& prompt) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : history) {
    messages.push_back({{"role", role_name(m.role)}, {"content", m.content}});
  }
  messages.push_back({{"role", "user"}, {"content", prompt}});
  nlohmann::json body{{"model", config_.model_name}, {"messages", messages}};

  std::string raw = post_json("/v1/chat/completions", body.dump());
  try {
    nlohmann::json parsed = nlohmann::json::parse(raw);
    return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const std::exception& ex) {
    throw endpoint_error(std::string("malformed completion response: ") + ex.what() +
                         " in " + body_excerpt(raw));
  }
}

}  // namespace meea
