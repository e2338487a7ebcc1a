#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>

namespace lmprior {

/// Warning sink; defaults to stderr.  Tests may swap it to capture messages.
inline std::function<void(const std::string&)>& warning_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& msg) {
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::cerr << "[warn] " << msg << '\n';
  };
  return sink;
}

inline void log_warning(const std::string& message) { warning_sink()(message); }

}  // namespace lmprior
