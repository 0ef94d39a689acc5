#pragma once

#include <stdexcept>
#include <string>

namespace twoscale {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument values (non-finite points, eps <= 0, size mismatches).
class InputError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration; the CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A solver produced non-finite values.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Flow Jacobian too far from volume preserving to be inverted safely.
class DegenerateFlowError : public Error {
 public:
  using Error::Error;
};

// Requested an order or checkpoint that has not been computed.
class SequencingError : public Error {
 public:
  using Error::Error;
};

// Reading or writing a file failed; the message names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace twoscale
