#pragma once

// Structured one-line log events on stderr:
//   2026-10-18T11:29:00.123Z INFO listening addr=0.0.0.0:7331

#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>

namespace thalamus::log {

enum class Level { debug, info, warn, error };

using Field = std::pair<std::string_view, std::string>;

void set_level(Level level);
void event(Level level, std::string_view name, std::initializer_list<Field> fields = {});

inline void info(std::string_view name, std::initializer_list<Field> fields = {}) { event(Level::info, name, fields); }
inline void warn(std::string_view name, std::initializer_list<Field> fields = {}) { event(Level::warn, name, fields); }
inline void error(std::string_view name, std::initializer_list<Field> fields = {}) { event(Level::error, name, fields); }
inline void debug(std::string_view name, std::initializer_list<Field> fields = {}) { event(Level::debug, name, fields); }

/// Current UTC time as "YYYY-MM-DDTHH:MM:SS.mmmZ".
std::string utc_now();

}  // namespace thalamus::log
