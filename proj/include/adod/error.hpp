#pragma once

#include <stdexcept>
#include <string>

namespace adod {

// Exception categories map one-to-one onto CLI exit codes:
// ValidationError -> 2, IoError -> 1, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace adod
