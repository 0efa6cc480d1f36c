#pragma once

#include <stdexcept>
#include <string>

namespace itergp {

// Configuration problems: unknown keys, unparsable or out-of-range values.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Data problems: missing files, malformed CSV, shape mismatches on disk.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failures: factorization breakdown even after jitter escalation,
// solver stalls that cannot be recovered.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace itergp
