#include "selfore/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace selfore::log {
namespace {

std::mutex g_mutex;
Level g_min_level = Level::info;

void default_sink(Level level, std::string_view message) {
  const char* tag = level == Level::warn ? "warn" : level == Level::info ? "info" : "debug";
  std::cerr << "[selfore " << tag << "] " << message << '\n';
}

Sink& sink_ref() {
  static Sink sink = default_sink;
  return sink;
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  return std::exchange(sink_ref(), sink ? std::move(sink) : Sink(default_sink));
}

void set_min_level(Level level) {
  std::lock_guard lock(g_mutex);
  g_min_level = level;
}

void write(Level level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (level < g_min_level) return;
  sink_ref()(level, message);
}

}  // namespace selfore::log
