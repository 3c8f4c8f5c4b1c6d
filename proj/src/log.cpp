#include "vidswap/log.hpp"

#include <iostream>
#include <mutex>

namespace vidswap {

namespace {

std::mutex g_mutex;

LogSink& sink() {
  static LogSink s = [](const std::string& line) { std::cerr << line << '\n'; };
  return s;
}

}  // namespace

LogSink set_log_sink(LogSink s) {
  std::lock_guard<std::mutex> lock(g_mutex);
  auto prev = std::move(sink());
  sink() = std::move(s);
  return prev;
}

void log_record(const std::string& level, const std::string& event, nlohmann::json fields) {
  nlohmann::json rec = {{"level", level}, {"event", event}};
  if (fields.is_object()) {
    for (auto& [k, v] : fields.items()) rec[k] = v;
  }
  const auto line = rec.dump();
  std::lock_guard<std::mutex> lock(g_mutex);
  if (sink()) sink()(line);
}

}  // namespace vidswap
