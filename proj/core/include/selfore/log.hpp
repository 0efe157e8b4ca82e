#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace selfore::log {

enum class Level { debug, info, warn };

using Sink = std::function<void(Level, std::string_view)>;

// Replaces the process-wide sink; returns the previous one. The default sink
// writes info and warn lines to stderr.
Sink set_sink(Sink sink);
void set_min_level(Level level);

void write(Level level, std::string_view message);
inline void debug(std::string_view m) { write(Level::debug, m); }
inline void info(std::string_view m) { write(Level::info, m); }
inline void warn(std::string_view m) { write(Level::warn, m); }

}  // namespace selfore::log
