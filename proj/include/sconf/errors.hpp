#pragma once

#include <stdexcept>
#include <string>

namespace sconf {

// Error taxonomy mirrors the CLI exit codes: ConfigError -> 1, everything
// else thrown by the library -> 2.

// Bad user input: unparseable config, missing field, invalid flag value.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent data files and records (bad magic, label out of
// range, truncated payload). Messages name the offending record where known.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric failure at run time: non-finite values, degenerate inputs.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sconf
