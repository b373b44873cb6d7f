#pragma once

#include <stdexcept>
#include <string>

namespace dib {

// Bad argument or violated precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed file contents (wrong magic, bad header).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Two inputs that must agree do not (e.g. image and label counts).
class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values, broken spectra, solver failures.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation invoked in the wrong state (e.g. backward twice on one tape).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace dib
