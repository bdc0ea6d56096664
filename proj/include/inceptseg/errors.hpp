#pragma once

#include <stdexcept>
#include <string>

namespace iseg {

// Error taxonomy mirrors the CLI exit codes: config/validation -> 2,
// numerical failure -> 3, I/O failure -> 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& m) : std::runtime_error(m) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace iseg
