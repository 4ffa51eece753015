#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace chemtown::log {

enum class Level { debug, info, warn, error };

using Sink = std::function<void(Level, std::string_view)>;

/// Replace the global sink (default writes to stderr). Pass nullptr to restore the default.
void set_sink(Sink sink);

/// When off (default), debug/info messages are dropped.
void set_verbose(bool verbose);

void write(Level level, std::string_view message);

inline void debug(std::string_view m) { write(Level::debug, m); }
inline void info(std::string_view m) { write(Level::info, m); }
inline void warn(std::string_view m) { write(Level::warn, m); }
inline void error(std::string_view m) { write(Level::error, m); }

std::string_view level_name(Level level);

} // namespace chemtown::log
