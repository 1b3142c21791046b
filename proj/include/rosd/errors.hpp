#pragma once

#include <stdexcept>
#include <string>

namespace rosd {

/// Invalid configuration value (unknown enum name, out-of-range knob, mismatched architecture).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed or out-of-range input data (shape mismatch, context overflow, empty batch).
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// A documented precondition on the caller was violated.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace rosd
