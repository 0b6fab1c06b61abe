#include "intflow/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace intflow {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* v = std::getenv("INTFLOW_LOG");
    if (v == nullptr) return LogLevel::info;
    if (std::strcmp(v, "error") == 0) return LogLevel::error;
    if (std::strcmp(v, "debug") == 0) return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

namespace {
void emit(const char* tag, const std::string& msg) {
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}
}  // namespace

void log_error(const std::string& msg) { emit("error", msg); }

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) emit("info", msg);
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) emit("debug", msg);
}

}  // namespace intflow
