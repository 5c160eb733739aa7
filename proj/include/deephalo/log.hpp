#pragma once

// Leveled stderr logging. The level comes from DEEPHALO_LOG
// (error, info or debug; default info).

#include <string>

namespace deephalo::log {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

Level level();
void set_level(Level l);
/// Parses error/info/debug; throws Error otherwise.
Level parse_level(const std::string& s);

void error(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

}  // namespace deephalo::log
