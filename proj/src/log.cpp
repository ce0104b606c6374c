#include "cmhe/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <optional>

namespace cmhe::log {
namespace {

std::mutex g_mutex;
std::optional<Level> g_threshold;
Sink g_sink;

Level parse_level(const char* text) {
  if (text == nullptr) return Level::warning;
  const std::string_view v{text};
  if (v == "debug") return Level::debug;
  if (v == "info") return Level::info;
  if (v == "warning" || v == "warn") return Level::warning;
  if (v == "error") return Level::error;
  if (v == "off" || v == "none") return Level::off;
  return Level::warning;
}

const char* label(Level level) {
  switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warning: return "warning";
    case Level::error: return "error";
    case Level::off: break;
  }
  return "";
}

}  // namespace

Level threshold() {
  std::lock_guard lock{g_mutex};
  if (!g_threshold) g_threshold = parse_level(std::getenv("CMHE_LOG_LEVEL"));
  return *g_threshold;
}

void set_threshold(Level level) {
  std::lock_guard lock{g_mutex};
  g_threshold = level;
}

void set_sink(Sink sink) {
  std::lock_guard lock{g_mutex};
  g_sink = std::move(sink);
}

void write(Level level, std::string_view message) {
  // the sink sees everything so tests can observe warnings regardless of verbosity
  Sink sink;
  {
    std::lock_guard lock{g_mutex};
    sink = g_sink;
  }
  if (sink) {
    sink(level, message);
    return;
  }
  if (level < threshold()) return;
  std::lock_guard lock{g_mutex};
  std::cerr << "[cmhe " << label(level) << "] " << message << '\n';
}

}  // namespace cmhe::log
