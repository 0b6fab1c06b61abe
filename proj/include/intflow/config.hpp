#pragma once

#include <string>

#include "intflow/trainer.hpp"

namespace intflow {

// Parse error carrying the offending line number.
class ConfigParseError : public ConfigError {
 public:
  ConfigParseError(int line, const std::string& msg)
      : ConfigError("line " + std::to_string(line) + ": " + msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Line-based `key = value` text with `#` comments. Learning rate and momentum
// take the exact form `mantissa*2^exp`; decimal literals for them are
// rejected so every configured value is on its grid by construction. Layers
// are `layer.<i> = dense IN OUT [flags]` or `conv IN OUT K S P [flags]` with
// flags among nobn, norelu, fp. See the README for the full key list.
TrainConfig parse_config(const std::string& text);

std::string render_config(const TrainConfig& cfg);

}  // namespace intflow
