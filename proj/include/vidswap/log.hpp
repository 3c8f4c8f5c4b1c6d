#pragma once

#include <functional>
#include <json.hpp>
#include <string>

// Structured line-record logging: each record is one JSON object per line.

namespace vidswap {

using LogSink = std::function<void(const std::string& line)>;

/// Replaces the sink (default: stderr). Returns the previous one.
LogSink set_log_sink(LogSink sink);

void log_record(const std::string& level, const std::string& event, nlohmann::json fields = {});

inline void log_info(const std::string& event, nlohmann::json fields = {}) {
  log_record("info", event, std::move(fields));
}
inline void log_warn(const std::string& event, nlohmann::json fields = {}) {
  log_record("warn", event, std::move(fields));
}

}  // namespace vidswap
