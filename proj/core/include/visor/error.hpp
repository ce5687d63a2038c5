#pragma once

#include <stdexcept>
#include <string>

namespace visor {

// Runtime failures (numerics, I/O, bad artifacts). CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user input: malformed config, unknown keys, missing required fields.
// CLI maps these to exit code 1.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace visor
