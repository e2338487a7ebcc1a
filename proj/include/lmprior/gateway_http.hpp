#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>

// httplib drags in glibc's resolv.h, whose `_res` macro corrupts any later
// declaration using that identifier (Eigen does).
#ifdef _res
#undef _res
#endif

#include <nlohmann/json.hpp>

#include "lmprior/errors.hpp"
#include "lmprior/gateway.hpp"

namespace lmprior {

namespace detail {

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;  // /v1/chat/completions
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint URL missing scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

inline std::string Gateway::http_post(const ChatRequest& request) {
  const auto url = detail::split_url(config_.endpoint);
  httplib::Client client(url.base);
  client.set_connection_timeout(30, 0);
  client.set_read_timeout(120, 0);

  httplib::Headers headers;
  if (!config_.credential_env.empty()) {
    const char* credential = std::getenv(config_.credential_env.c_str());
    if (credential == nullptr || *credential == '\0') {
      throw ConfigError("credential environment variable '" + config_.credential_env +
                        "' is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + credential);
  }

  const std::string body = request_to_json(request).dump();
  auto result = client.Post(url.path, headers, body, "application/json");
  if (!result) {
    throw TransportError("HTTP request to " + config_.endpoint +
                         " failed: " + httplib::to_string(result.error()));
  }
  if (result->status < 200 || result->status >= 300) {
    throw TransportError("HTTP status " + std::to_string(result->status) + " from " +
                         config_.endpoint + ": " + result->body);
  }
  nlohmann::json reply =
      nlohmann::json::parse(result->body, /*cb=*/nullptr, /*allow_exceptions=*/false);
  if (reply.is_discarded()) {
    throw TransportError("provider returned non-JSON body: " + result->body);
  }
  try {
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("provider reply missing choices[0].message.content: ") +
                         e.what());
  }
}

}  // namespace lmprior
