#pragma once

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace fbn {

// Error taxonomy mirrored by the CLI exit codes: usage 2, data 3, numeric 4.
class usage_error : public std::runtime_error {
 public:
  explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

class data_error : public std::runtime_error {
 public:
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

// FBN_LOG=quiet|info|debug (default info).
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("FBN_LOG");
    if (env == nullptr) return LogLevel::kInfo;
    const std::string s(env);
    if (s == "quiet" || s == "0") return LogLevel::kQuiet;
    if (s == "debug" || s == "2") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::fprintf(stderr, "[fbn] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) std::fprintf(stderr, "[fbn:debug] %s\n", msg.c_str());
}

}  // namespace fbn
