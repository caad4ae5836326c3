#pragma once

#include <stdexcept>
#include <string>

namespace fedwarm {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vectors or batches whose shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN/Inf or was asked to operate outside its domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or infeasible input data (CSV rows, partitions, schedules).
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An operation needs history that does not exist yet (no pilot, no saved models).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedwarm
