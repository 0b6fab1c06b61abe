#pragma once

#include <string>

namespace intflow {

enum class LogLevel : int { error = 0, info = 1, debug = 2 };

// Level comes from the INTFLOW_LOG environment variable (error|info|debug),
// read once; default is info.
LogLevel log_level();

void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace intflow
