#pragma once

#include <stdexcept>
#include <string>

namespace conforma {

/// Invalid user-supplied configuration (bad file, bad field, unknown model).
/// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Numeric procedure failed (non-convergence, failed bracket, NaN input).
/// The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace conforma
