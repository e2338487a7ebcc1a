#include <atomic>
#include <memory>
#include <filesystem>

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include "lmprior/gateway.hpp"
#include "support/test_support.hpp"

using namespace lmprior;
using testsupport::ScratchDir;

namespace {

ChatRequest simple_request(const std::string& content) {
  ChatRequest r;
  r.model_id = "test-model";
  r.temperature = 0.1;
  r.messages = {{"system", "be brief"}, {"user", content}};
  return r;
}

std::unique_ptr<Gateway> make_mock_gateway(const std::filesystem::path& cache_dir,
                                           Gateway::MockHandler handler, int retry_limit = 3,
                                           std::shared_ptr<Clock> clock = nullptr) {
  ProviderConfig config;
  config.kind = ProviderKind::mock;
  config.retry_limit = retry_limit;
  auto gateway = std::make_unique<Gateway>(
      config, cache_dir, clock ? std::move(clock) : std::make_shared<SystemClock>());
  gateway->set_mock_handler(std::move(handler));
  return gateway;
}

}  // namespace

TEST_CASE("request_cache_key is stable and sensitive to every field", "[gateway]") {
  const ChatRequest base = simple_request("hello");
  const std::string key = request_cache_key(base);
  CHECK(key.size() == 16);
  CHECK(key.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(request_cache_key(base) == key);

  ChatRequest other = base;
  other.model_id = "other-model";
  CHECK(request_cache_key(other) != key);

  other = base;
  other.temperature = 0.2;
  CHECK(request_cache_key(other) != key);

  other = base;
  other.messages[1].content = "hello!";
  CHECK(request_cache_key(other) != key);

  other = base;
  other.messages[1].role = "system";
  CHECK(request_cache_key(other) != key);

  other = base;
  other.messages.push_back({"user", ""});
  CHECK(request_cache_key(other) != key);

  // Message boundaries are framed: ("ab","c") must differ from ("a","bc").
  ChatRequest left = simple_request("x");
  left.messages = {{"user", "ab"}, {"user", "c"}};
  ChatRequest right = simple_request("x");
  right.messages = {{"user", "a"}, {"user", "bc"}};
  CHECK(request_cache_key(left) != request_cache_key(right));
}

TEST_CASE("completions are cached on disk and replayed read-through", "[gateway]") {
  ScratchDir dir("gateway_cache");
  std::atomic<int> handler_calls{0};
  auto handler = [&handler_calls](const ChatRequest& r) {
    handler_calls.fetch_add(1);
    return "reply to: " + r.messages.back().content;
  };

  const ChatRequest request = simple_request("ping");
  {
    auto gateway = make_mock_gateway(dir.path(), handler);
    CHECK(gateway->complete(request) == "reply to: ping");
    CHECK(gateway->complete(request) == "reply to: ping");
    CHECK(handler_calls.load() == 1);
    CHECK(gateway->network_calls() == 1);
    CHECK(gateway->completions() == 2);

    // The record carries the full request, the response, and the key.
    const auto path = dir.path() / (request_cache_key(request) + ".json");
    REQUIRE(std::filesystem::exists(path));
    const auto record = nlohmann::json::parse(testsupport::read_file(path));
    CHECK(record.at("key") == request_cache_key(request));
    CHECK(record.at("response") == "reply to: ping");
    CHECK(record.at("request").at("model") == "test-model");
    CHECK(record.at("request").at("messages").size() == 2);
    CHECK(record.contains("timestamp"));
  }

  // A fresh gateway over the same directory reads through without transport.
  auto warm = make_mock_gateway(dir.path(), handler);
  CHECK(warm->complete(request) == "reply to: ping");
  CHECK(warm->network_calls() == 0);
  CHECK(handler_calls.load() == 1);
}

TEST_CASE("replay provider serves only from cache", "[gateway]") {
  ScratchDir dir("gateway_replay");
  const ChatRequest request = simple_request("cached?");
  {
    auto recorder = make_mock_gateway(
        dir.path(), [](const ChatRequest&) { return "recorded"; });
    recorder->complete(request);
  }

  ProviderConfig replay_config;
  replay_config.kind = ProviderKind::replay;
  Gateway replay(replay_config, dir.path());
  CHECK(replay.complete(request) == "recorded");
  CHECK(replay.network_calls() == 0);

  const ChatRequest missing = simple_request("never seen");
  CHECK_THROWS_AS(replay.complete(missing), CacheMissError);
  try {
    replay.complete(missing);
  } catch (const CacheMissError& e) {
    CHECK(e.key() == request_cache_key(missing));
  }
  CHECK(replay.network_calls() == 0);
}

TEST_CASE("transport errors are retried with jittered exponential backoff", "[gateway]") {
  ScratchDir dir("gateway_retry");
  auto clock = std::make_shared<ManualClock>();
  std::atomic<int> attempts{0};
  auto flaky = [&attempts](const ChatRequest&) -> std::string {
    if (attempts.fetch_add(1) < 2) throw TransportError("transient");
    return "finally";
  };
  auto gateway = make_mock_gateway(dir.path(), flaky, 3, clock);
  CHECK(gateway->complete(simple_request("retry me")) == "finally");
  CHECK(attempts.load() == 3);
  CHECK(gateway->network_calls() == 3);
  // Two backoffs of 1s and 2s, each jittered by at most +-20%.
  const double slept = clock->total_slept();
  CHECK(slept >= 0.8 * 1.0 + 0.8 * 2.0);
  CHECK(slept <= 1.2 * 1.0 + 1.2 * 2.0);
}

TEST_CASE("retry budget exhaustion surfaces a TransportError", "[gateway]") {
  ScratchDir dir("gateway_retry_fail");
  auto clock = std::make_shared<ManualClock>();
  std::atomic<int> attempts{0};
  auto broken = [&attempts](const ChatRequest&) -> std::string {
    attempts.fetch_add(1);
    throw TransportError("down");
  };
  auto gateway = make_mock_gateway(dir.path(), broken, 2, clock);
  CHECK_THROWS_AS(gateway->complete(simple_request("doomed")), TransportError);
  CHECK(attempts.load() == 3);  // first try + 2 retries
}

TEST_CASE("backoff jitter is deterministic in the gateway seed", "[gateway]") {
  auto run_once = [](std::uint64_t seed) {
    ScratchDir dir("gateway_jitter");
    auto clock = std::make_shared<ManualClock>();
    ProviderConfig config;
    config.kind = ProviderKind::mock;
    config.retry_limit = 4;
    Gateway gateway(config, dir.path(), clock, seed);
    std::atomic<int> attempts{0};
    gateway.set_mock_handler([&attempts](const ChatRequest&) -> std::string {
      if (attempts.fetch_add(1) < 3) throw TransportError("transient");
      return "ok";
    });
    gateway.complete(simple_request("jitter"));
    return clock->total_slept();
  };
  CHECK(run_once(5) == run_once(5));
}

TEST_CASE("rate limiter admits bursts and then waits out the window", "[gateway]") {
  auto clock = std::make_shared<ManualClock>();
  RateLimiter limiter(3, clock);
  limiter.admit();
  limiter.admit();
  limiter.admit();
  CHECK(clock->total_slept() == 0.0);
  limiter.admit();  // must wait for the first admission to leave the window
  CHECK(clock->total_slept() >= 60.0);
  CHECK(clock->total_slept() <= 60.1);
  // After the wait there is room again without further sleeping.
  const double before = clock->total_slept();
  limiter.admit();
  limiter.admit();
  CHECK(clock->total_slept() == before);
}

TEST_CASE("think segments are stripped before JSON extraction", "[gateway]") {
  CHECK(strip_think_segments("plain text") == "plain text");
  CHECK(strip_think_segments("<think>secret</think>answer") == "answer");
  CHECK(strip_think_segments("a<think>x</think>b<think>y</think>c") == "abc");
  CHECK(strip_think_segments("before<think>never closed") == "before");
}

TEST_CASE("JSON object extraction finds the longest balanced object", "[gateway]") {
  CHECK(extract_json_object(R"({"a": 1})") == R"({"a": 1})");
  CHECK(extract_json_object(R"(Sure! Here it is: {"a": {"b": 2}} hope that helps)") ==
        R"({"a": {"b": 2}})");
  // Braces inside string literals must not confuse the scanner.
  CHECK(extract_json_object(R"({"text": "curly } inside"})") ==
        R"({"text": "curly } inside"})");
  CHECK(extract_json_object(R"({"esc": "a\"}b"})") == R"({"esc": "a\"}b"})");
  // Apostrophes and quotes in surrounding prose are not string openers.
  CHECK(extract_json_object(R"(it's "quoted" prose {"k": 1})") == R"({"k": 1})");
  // Longest object wins when several are present.
  CHECK(extract_json_object(R"({"a":1} and {"b": {"c": 2}})") == R"({"b": {"c": 2}})");
  CHECK_FALSE(extract_json_object("no json here"));
  CHECK_FALSE(extract_json_object("{never closed"));
}

TEST_CASE("complete_json re-asks until the reply parses", "[gateway]") {
  ScratchDir dir("gateway_json");
  std::atomic<int> calls{0};
  ChatRequest last_seen;
  auto handler = [&](const ChatRequest& r) -> std::string {
    last_seen = r;
    const int call = calls.fetch_add(1);
    if (call == 0) return "not json at all";
    return R"(<think>deliberating</think>Here you go: {"value": 42})";
  };
  auto gateway = make_mock_gateway(dir.path(), handler);
  const auto parsed = gateway->complete_json(simple_request("give json"));
  CHECK(parsed.at("value") == 42);
  CHECK(calls.load() == 2);
  // The re-ask appended an explicit JSON-only instruction.
  REQUIRE(last_seen.messages.size() == 3);
  CHECK(last_seen.messages.back().content == "Respond with valid JSON only.");

  // Persistent garbage exhausts the retry budget and keeps the raw reply.
  auto hopeless = make_mock_gateway(
      dir.path(), [](const ChatRequest&) { return "still not json"; });
  try {
    hopeless->complete_json(simple_request("impossible"), 2);
    FAIL("expected ElicitationParseError");
  } catch (const ElicitationParseError& e) {
    CHECK(e.raw_text() == "still not json");
  }
}

TEST_CASE("mock provider without a handler is a configuration error", "[gateway]") {
  ScratchDir dir("gateway_nohandler");
  ProviderConfig config;
  config.kind = ProviderKind::mock;
  config.retry_limit = 0;
  Gateway gateway(config, dir.path());
  CHECK_THROWS_AS(gateway.complete(simple_request("anyone there?")), ConfigError);
}

TEST_CASE("http provider configuration is validated eagerly", "[gateway]") {
  ProviderConfig config;
  config.kind = ProviderKind::http_openai_compatible;
  config.endpoint = "";
  ScratchDir dir("gateway_http");
  CHECK_THROWS_AS(Gateway(config, dir.path()), ConfigError);
  config.endpoint = "http://localhost:1/v1/chat/completions";
  config.requests_per_minute = 0;
  CHECK_THROWS_AS(Gateway(config, dir.path()), ConfigError);
}

TEST_CASE("invalid chat requests are rejected before transport", "[gateway]") {
  ScratchDir dir("gateway_badreq");
  auto gateway = make_mock_gateway(dir.path(), [](const ChatRequest&) { return "x"; });
  ChatRequest empty;
  empty.model_id = "m";
  CHECK_THROWS_AS(gateway->complete(empty), ArgumentError);
  ChatRequest bad_role = simple_request("x");
  bad_role.messages[0].role = "assistant";
  CHECK_THROWS_AS(gateway->complete(bad_role), ArgumentError);
  CHECK(gateway->network_calls() == 0);
}
