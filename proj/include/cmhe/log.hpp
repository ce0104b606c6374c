#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace cmhe::log {

enum class Level { debug = 0, info = 1, warning = 2, error = 3, off = 4 };

// Threshold is read once from CMHE_LOG_LEVEL (debug|info|warning|error|off),
// defaulting to warning.
Level threshold();
void set_threshold(Level level);

using Sink = std::function<void(Level, std::string_view)>;

// Replaces the stderr sink; pass an empty function to restore it.
void set_sink(Sink sink);

void write(Level level, std::string_view message);

inline void debug(std::string_view m) { write(Level::debug, m); }
inline void info(std::string_view m) { write(Level::info, m); }
inline void warning(std::string_view m) { write(Level::warning, m); }
inline void error(std::string_view m) { write(Level::error, m); }

}  // namespace cmhe::log
