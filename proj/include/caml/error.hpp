#pragma once

#include <stdexcept>
#include <string>

namespace caml {

// Exception hierarchy. The CLI maps each family onto a process exit code:
// UsageError -> 1, DataError (and subclasses) -> 2, NumericalError -> 3.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class CorruptFileError : public DataError {
 public:
  using DataError::DataError;
};

class HashMismatchError : public DataError {
 public:
  using DataError::DataError;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace caml
