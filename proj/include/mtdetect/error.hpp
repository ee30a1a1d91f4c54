#pragma once

#include <stdexcept>
#include <string>

namespace mtd {

/// Base class of every error raised by the library. The CLI maps
/// InputError subclasses to exit code 1 and NumericalError subclasses to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// matcore
class NotSemistable : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class DefectiveZeroEigenvalue : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class NotHurwitz : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class NumericalFailure : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class NotPSD : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class HorizonTooShort : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// gridmodel
class ParseError : public InputError {
 public:
  ParseError(const std::string& source, int line, int column,
             const std::string& message)
      : InputError(source + ":" + std::to_string(line) + ":" +
                   std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};
class ValidationError : public InputError {
 public:
  using InputError::InputError;
};
class SingularNetwork : public InputError {
 public:
  using InputError::InputError;
};
class InfeasibleDispatch : public InputError {
 public:
  using InputError::InputError;
};
class UnknownStateLabel : public InputError {
 public:
  using InputError::InputError;
};

// clustering
class DimensionMismatch : public InputError {
 public:
  using InputError::InputError;
};
class ZeroRestriction : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class CompletionFailure : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// simkit
class UnknownTarget : public InputError {
 public:
  using InputError::InputError;
};
class NonFinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace mtd
