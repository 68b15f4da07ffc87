#pragma once

#include <stdexcept>
#include <string>

namespace textpolicy {

// Base for everything thrown on purpose. Subclasses map to CLI exit codes:
// ConfigError -> 2, DataError -> 3, DivergenceError -> 4, anything else -> 1.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error(what) {}
};

// Non-finite values, invalid distributions, domain violations.
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(what) {}
};

// Missing or malformed input files, unknown tokens, bad checkpoints.
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(what) {}
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& what) : Error(what) {}
};

}  // namespace textpolicy
