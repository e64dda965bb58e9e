#pragma once

#include <stdexcept>
#include <string>

namespace untrack {

// Error taxonomy shared by every module. The CLI maps these onto exit codes:
// UsageError/ConfigError -> 2, FormatError -> 3, NumericError -> 4.

struct SizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed on-disk data (bad magic, truncated payload, unparsable manifest).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad command line / config file input.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inconsistent run setup (checkpoint vs dataset dims, invalid ablation axis).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace untrack
