#pragma once

// One JSON object per line on a stream (stderr by default).

#include "json.hpp"

#include <chrono>
#include <iostream>
#include <mutex>
#include <string>

#include "stereo_traj/errors.hpp"

namespace stereo_traj {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline const char* to_string(LogLevel l) {
  switch (l) {
    case LogLevel::error: return "error";
    case LogLevel::warn: return "warn";
    case LogLevel::info: return "info";
    case LogLevel::debug: return "debug";
  }
  return "?";
}

inline LogLevel log_level_from_string(const std::string& s) {
  if (s == "error") return LogLevel::error;
  if (s == "warn") return LogLevel::warn;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  throw ParseError("unknown log level '" + s + "'");
}

class Logger {
 public:
  explicit Logger(LogLevel level = LogLevel::warn, std::ostream* out = &std::cerr)
      : level_(level), out_(out) {}

  LogLevel level() const { return level_; }
  bool enabled(LogLevel l) const { return out_ && l <= level_; }

  void log(LogLevel l, const std::string& event, nlohmann::json fields = nlohmann::json::object()) {
    if (!enabled(l)) return;
    nlohmann::ordered_json line;
    line["level"] = to_string(l);
    line["event"] = event;
    for (auto it = fields.begin(); it != fields.end(); ++it) line[it.key()] = it.value();
    const std::lock_guard lock(mutex_);
    *out_ << line.dump() << '\n';
  }

  void error(const std::string& e, nlohmann::json f = nlohmann::json::object()) { log(LogLevel::error, e, std::move(f)); }
  void warn(const std::string& e, nlohmann::json f = nlohmann::json::object()) { log(LogLevel::warn, e, std::move(f)); }
  void info(const std::string& e, nlohmann::json f = nlohmann::json::object()) { log(LogLevel::info, e, std::move(f)); }
  void debug(const std::string& e, nlohmann::json f = nlohmann::json::object()) { log(LogLevel::debug, e, std::move(f)); }

  static Logger& silent() {
    static Logger l(LogLevel::error, nullptr);
    return l;
  }

 private:
  LogLevel level_;
  std::ostream* out_;
  std::mutex mutex_;
};

/// Wall-clock seconds since construction.
class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace stereo_traj
