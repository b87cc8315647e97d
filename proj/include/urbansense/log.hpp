#pragma once

#include <functional>
#include <string>

namespace urbansense::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

void write(Level level, const std::string& message);

inline void debug(const std::string& m) { write(Level::Debug, m); }
inline void info(const std::string& m) { write(Level::Info, m); }
inline void warn(const std::string& m) { write(Level::Warn, m); }
inline void error(const std::string& m) { write(Level::Error, m); }

/// Replaces the stderr sink (tests capture warnings this way). Pass nullptr to restore.
void set_sink(std::function<void(Level, const std::string&)> sink);

/// Minimum level written to stderr; initialised from URBANSENSE_LOG (debug|info|warn|error).
void set_level(Level level);

}  // namespace urbansense::log
