#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string_view>

namespace relmetric::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::warn};
  return level;
}

inline void set_level(Level level) { threshold().store(level); }

inline void write(Level level, std::string_view msg) {
  if (level < threshold().load()) return;
  static std::mutex mu;
  static constexpr const char* names[] = {"debug", "info", "warn", "error"};
  std::lock_guard lock(mu);
  std::clog << "[relmetric " << names[static_cast<int>(level)] << "] " << msg << '\n';
}

template <typename... Args>
void emit(Level level, const Args&... args) {
  if (level < threshold().load()) return;
  std::ostringstream os;
  (os << ... << args);
  write(level, os.str());
}

template <typename... Args>
void info(const Args&... args) { emit(Level::info, args...); }

template <typename... Args>
void warn(const Args&... args) { emit(Level::warn, args...); }

}  // namespace relmetric::log
