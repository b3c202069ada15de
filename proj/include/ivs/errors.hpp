#pragma once

#include <stdexcept>
#include <string>

namespace ivs {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input and configuration problems. The CLI maps these to exit code 2.
class DomainError : public Error { using Error::Error; };
class BoundsError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class ModeError : public Error { using Error::Error; };
class FitError : public Error { using Error::Error; };

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

// Numerical failures. The CLI maps these to exit code 3.
class NumericalError : public Error { using Error::Error; };

class SolverError : public NumericalError {
 public:
  SolverError(const std::string& what, int iterations)
      : NumericalError(what + " after " + std::to_string(iterations) + " iterations"),
        iterations_(iterations) {}
  int iterations() const noexcept { return iterations_; }

 private:
  int iterations_;
};

class MissingGradientError : public Error { using Error::Error; };

}  // namespace ivs
