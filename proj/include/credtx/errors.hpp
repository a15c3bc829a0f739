#pragma once

#include <stdexcept>
#include <string>

namespace credtx {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, diverged training, non-finite objective.
class NumericError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Preprocessing statistics applied or fitted outside the training split.
class LeakageError : public DataError {
 public:
  using DataError::DataError;
};

// AUC/KS requested on single-class labels.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace credtx
