#pragma once

#include <stdexcept>
#include <string>

namespace agmb {

// Base of every error raised by the library. Numeric failures (rank
// deficiency, degenerate statistics) derive from NumericError so callers can
// map them to a distinct exit status.
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

class UsageError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class FitError : public NumericError {
 public:
  using NumericError::NumericError;
};

class InsufficientDataError : public FitError {
 public:
  using FitError::FitError;
};

class DegenerateInputError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace agmb
