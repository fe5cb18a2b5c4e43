#pragma once

#include <stdexcept>
#include <string>

namespace affordsplat {

// Error taxonomy used across the library. The CLI maps these to exit codes:
// ConfigError -> 2, DataError (and subclasses) -> 3, NumericError -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : DataError {
  using DataError::DataError;
};

struct PairingError : DataError {
  using DataError::DataError;
};

struct SplitError : DataError {
  using DataError::DataError;
};

struct AlignmentError : DataError {
  using DataError::DataError;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UndefinedLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace affordsplat
