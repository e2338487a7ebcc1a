#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmprior/csvio.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/rng.hpp"

namespace lmprior {

struct ChatMessage {
  std::string role;  // "system" or "user"
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.1;
  std::string model_id;
  std::optional<int> max_tokens;

  void validate() const {
    if (messages.empty()) throw ArgumentError("ChatRequest: need at least one message");
    if (!(temperature >= 0.0)) throw ArgumentError("ChatRequest: temperature must be >= 0");
    for (const auto& m : messages) {
      if (m.role != "system" && m.role != "user") {
        throw ArgumentError("ChatRequest: role must be 'system' or 'user', got '" + m.role + "'");
      }
    }
  }
};

enum class ProviderKind { http_openai_compatible, mock, replay };

inline ProviderKind provider_kind_from_string(const std::string& s) {
  if (s == "http_openai_compatible" || s == "http") return ProviderKind::http_openai_compatible;
  if (s == "mock") return ProviderKind::mock;
  if (s == "replay") return ProviderKind::replay;
  throw ConfigError("unknown provider kind '" + s + "'");
}

inline std::string to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::http_openai_compatible: return "http_openai_compatible";
    case ProviderKind::mock: return "mock";
    case ProviderKind::replay: return "replay";
  }
  return "unknown";
}

struct ProviderConfig {
  ProviderKind kind = ProviderKind::mock;
  std::string endpoint;        // http kind only, e.g. http://host:port/v1/chat/completions
  std::string credential_env;  // name of the env var holding the API key
  int requests_per_minute = 60;
  int retry_limit = 3;

  void validate() const {
    if (retry_limit < 0) throw ConfigError("ProviderConfig: retry_limit must be >= 0");
    if (kind == ProviderKind::http_openai_compatible) {
      if (requests_per_minute <= 0) {
        throw ConfigError("ProviderConfig: requests_per_minute must be > 0 for http providers");
      }
      if (endpoint.empty()) throw ConfigError("ProviderConfig: http provider needs an endpoint");
    }
  }
};

/// Injectable time source so rate limiting and backoff are testable without
/// real waiting.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() = 0;  // seconds on a monotonic axis
  virtual void sleep_for(double seconds) = 0;
};

class SystemClock final : public Clock {
 public:
  double now() override {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
  }
  void sleep_for(double seconds) override {
    if (seconds > 0) std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
  }
};

/// Virtual clock for tests; sleeping advances time instantly.
class ManualClock final : public Clock {
 public:
  double now() override {
    std::lock_guard<std::mutex> lock(mu_);
    return t_;
  }
  void sleep_for(double seconds) override {
    std::lock_guard<std::mutex> lock(mu_);
    if (seconds > 0) t_ += seconds;
  }
  void advance(double seconds) { sleep_for(seconds); }
  double total_slept() {
    std::lock_guard<std::mutex> lock(mu_);
    return t_;
  }

 private:
  std::mutex mu_;
  double t_ = 0.0;
};

/// Admits at most `per_minute` calls in any sliding 60-second window.
class RateLimiter {
 public:
  RateLimiter(int per_minute, std::shared_ptr<Clock> clock)
      : cap_(per_minute), clock_(std::move(clock)) {
    if (cap_ <= 0) throw ArgumentError("RateLimiter: capacity must be > 0");
  }

  void admit() {
    for (;;) {
      double wait = 0.0;
      {
        std::lock_guard<std::mutex> lock(mu_);
        const double now = clock_->now();
        while (!admissions_.empty() && admissions_.front() <= now - 60.0) {
          admissions_.pop_front();
        }
        if (static_cast<int>(admissions_.size()) < cap_) {
          admissions_.push_back(now);
          return;
        }
        wait = admissions_.front() + 60.0 - now;
      }
      clock_->sleep_for(wait > 0.0 ? wait : 1e-3);
    }
  }

 private:
  int cap_;
  std::shared_ptr<Clock> clock_;
  std::mutex mu_;
  std::deque<double> admissions_;
};

/// Stable content hash of a request; the replay cache is addressed by it.
inline std::string request_cache_key(const ChatRequest& request) {
  std::string canon = request.model_id;
  canon.push_back('\x1f');
  canon += format_double(request.temperature);
  for (const auto& m : request.messages) {
    canon.push_back('\x1e');
    canon += m.role;
    canon.push_back('\x1f');
    canon += m.content;
  }
  const std::uint64_t h = fnv1a64(canon);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline nlohmann::json request_to_json(const ChatRequest& request) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : request.messages) {
    msgs.push_back({{"role", m.role}, {"content", m.content}});
  }
  nlohmann::json body{{"model", request.model_id},
                      {"messages", std::move(msgs)},
                      {"temperature", request.temperature}};
  if (request.max_tokens) body["max_tokens"] = *request.max_tokens;
  return body;
}

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

}  // namespace detail

/// Remove reasoning-model thinking segments delimited by <think>...</think>.
/// An unterminated opener drops the rest of the text.
inline std::string strip_think_segments(std::string_view text) {
  static constexpr std::string_view kOpen = "<think>";
  static constexpr std::string_view kClose = "</think>";
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t open = text.find(kOpen, pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    out.append(text.substr(pos, open - pos));
    const std::size_t close = text.find(kClose, open + kOpen.size());
    if (close == std::string_view::npos) break;
    pos = close + kClose.size();
  }
  return out;
}

/// Longest balanced-brace object substring, respecting JSON string literals
/// and escapes.  Quotes outside any object are prose and are ignored.
inline std::optional<std::string> extract_json_object(std::string_view text) {
  std::optional<std::string> best;
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (depth > 0 && in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"' && depth > 0) {
      in_string = true;
    } else if (c == '{') {
      if (depth == 0) start = i;
      ++depth;
    } else if (c == '}') {
      if (depth > 0) {
        --depth;
        if (depth == 0) {
          const std::size_t len = i - start + 1;
          if (!best || len > best->size()) best = std::string(text.substr(start, len));
        }
      }
    }
  }
  return best;
}

/// Chat-completion access with a read-through cache, rate limiting, and
/// retrying transport.  Shareable across threads.
class Gateway {
 public:
  using MockHandler = std::function<std::string(const ChatRequest&)>;

  Gateway(ProviderConfig config, std::filesystem::path cache_dir,
          std::shared_ptr<Clock> clock = std::make_shared<SystemClock>(),
          std::uint64_t jitter_seed = 0)
      : config_(std::move(config)),
        cache_dir_(std::move(cache_dir)),
        clock_(std::move(clock)),
        jitter_engine_(make_engine(derive_seed(jitter_seed, "gateway-jitter"))) {
    config_.validate();
    if (config_.kind == ProviderKind::http_openai_compatible) {
      limiter_ = std::make_unique<RateLimiter>(config_.requests_per_minute, clock_);
    }
    if (!cache_dir_.empty()) std::filesystem::create_directories(cache_dir_);
  }

  void set_mock_handler(MockHandler handler) {
    std::lock_guard<std::mutex> lock(mock_mu_);
    mock_handler_ = std::move(handler);
  }

  const ProviderConfig& config() const { return config_; }

  /// Transport invocations so far; replayed experiments must leave this at 0.
  int network_calls() const { return network_calls_.load(); }

  /// complete() calls so far; completions minus network calls = cache hits.
  int completions() const { return completions_.load(); }

  std::string complete(const ChatRequest& request) {
    request.validate();
    completions_.fetch_add(1);
    const std::string key = request_cache_key(request);
    if (auto cached = cache_lookup(key)) return *cached;
    if (config_.kind == ProviderKind::replay) {
      throw CacheMissError("replay cache has no record for request " + key, key);
    }
    const std::string response = transport_with_retries(request);
    cache_store(key, request, response);
    return response;
  }

  /// complete(), then parse the reply as a JSON object.  Malformed replies
  /// trigger a re-ask with an explicit JSON-only reminder appended.
  nlohmann::json complete_json(const ChatRequest& request, int max_json_retries = 3) {
    ChatRequest attempt = request;
    std::string last_raw;
    for (int round = 0; round <= max_json_retries; ++round) {
      if (round > 0) {
        attempt.messages.push_back({"user", "Respond with valid JSON only."});
      }
      last_raw = complete(attempt);
      const std::string cleaned = strip_think_segments(last_raw);
      if (auto candidate = extract_json_object(cleaned)) {
        nlohmann::json parsed =
            nlohmann::json::parse(*candidate, /*cb=*/nullptr, /*allow_exceptions=*/false);
        if (!parsed.is_discarded() && parsed.is_object()) return parsed;
      }
    }
    throw ElicitationParseError(
        "no parseable JSON object after " + std::to_string(max_json_retries) + " retries",
        last_raw);
  }

 private:
  std::optional<std::string> cache_lookup(const std::string& key) {
    std::lock_guard<std::mutex> lock(cache_mu_);
    if (auto it = memory_cache_.find(key); it != memory_cache_.end()) return it->second;
    if (cache_dir_.empty()) return std::nullopt;
    const auto path = cache_dir_ / (key + ".json");
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    nlohmann::json record = nlohmann::json::parse(read_text_file(path));
    std::string response = record.at("response").get<std::string>();
    memory_cache_.emplace(key, response);
    return response;
  }

  void cache_store(const std::string& key, const ChatRequest& request,
                   const std::string& response) {
    std::lock_guard<std::mutex> lock(cache_mu_);
    if (memory_cache_.count(key)) return;  // append-only: first writer wins
    memory_cache_.emplace(key, response);
    if (cache_dir_.empty()) return;
    nlohmann::json record{{"key", key},
                          {"request", request_to_json(request)},
                          {"response", response},
                          {"timestamp", detail::utc_timestamp()}};
    const auto path = cache_dir_ / (key + ".json");
    const auto tmp = cache_dir_ / (key + ".json.tmp");
    write_text_file(tmp, record.dump(2) + "\n");
    std::filesystem::rename(tmp, path);
  }

  std::string transport_with_retries(const ChatRequest& request) {
    std::string last_error;
    for (int attempt = 0; attempt <= config_.retry_limit; ++attempt) {
      if (attempt > 0) {
        const double base = std::ldexp(1.0, attempt - 1);  // 1s, 2s, 4s, ...
        double factor;
        {
          std::lock_guard<std::mutex> lock(jitter_mu_);
          factor = std::uniform_real_distribution<double>(0.8, 1.2)(jitter_engine_);
        }
        clock_->sleep_for(base * factor);
      }
      try {
        return transport_once(request);
      } catch (const TransportError& e) {
        last_error = e.what();
      }
    }
    throw TransportError("transport failed after " + std::to_string(config_.retry_limit) +
                         " retries: " + last_error);
  }

  std::string transport_once(const ChatRequest& request) {
    network_calls_.fetch_add(1);
    if (config_.kind == ProviderKind::mock) {
      MockHandler handler;
      {
        std::lock_guard<std::mutex> lock(mock_mu_);
        handler = mock_handler_;
      }
      if (!handler) throw ConfigError("mock provider has no handler configured");
      return handler(request);
    }
    if (limiter_) limiter_->admit();
    return http_post(request);
  }

  std::string http_post(const ChatRequest& request);

  ProviderConfig config_;
  std::filesystem::path cache_dir_;
  std::shared_ptr<Clock> clock_;
  std::unique_ptr<RateLimiter> limiter_;

  std::mutex cache_mu_;
  std::unordered_map<std::string, std::string> memory_cache_;

  std::mutex mock_mu_;
  MockHandler mock_handler_;

  std::mutex jitter_mu_;
  std::mt19937_64 jitter_engine_;

  std::atomic<int> network_calls_{0};
  std::atomic<int> completions_{0};
};

}  // namespace lmprior

#include "lmprior/gateway_http.hpp"
