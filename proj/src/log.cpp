#include "deephalo/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>

#include "deephalo/errors.hpp"

namespace deephalo::log {

namespace {

Level from_env() {
  const char* v = std::getenv("DEEPHALO_LOG");
  if (v == nullptr || *v == '\0') return Level::kInfo;
  try {
    return parse_level(v);
  } catch (const Error&) {
    std::cerr << "[warn] ignoring DEEPHALO_LOG=" << v << " (expected error, info or debug)\n";
    return Level::kInfo;
  }
}

std::atomic<int>& current() {
  static std::atomic<int> l{static_cast<int>(from_env())};
  return l;
}

void emit(Level l, const char* tag, const std::string& msg) {
  if (static_cast<int>(l) > current().load()) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << '[' << tag << "] " << msg << '\n';
}

}  // namespace

Level level() { return static_cast<Level>(current().load()); }
void set_level(Level l) { current().store(static_cast<int>(l)); }

Level parse_level(const std::string& s) {
  if (s == "error") return Level::kError;
  if (s == "info") return Level::kInfo;
  if (s == "debug") return Level::kDebug;
  throw Error("unknown log level '" + s + "'");
}

void error(const std::string& msg) { emit(Level::kError, "error", msg); }
void info(const std::string& msg) { emit(Level::kInfo, "info", msg); }
void debug(const std::string& msg) { emit(Level::kDebug, "debug", msg); }

}  // namespace deephalo::log
