#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace debias {

// Base for every error raised by the library. Callers that only care about
// "something went wrong" catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class EvaluatorOutOfRange : public Error {
 public:
  using Error::Error;
};

class OwnWeightZero : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class BadKappa : public Error {
 public:
  using Error::Error;
};

class LogOfZero : public Error {
 public:
  using Error::Error;
};

class NonPositiveW : public Error {
 public:
  using Error::Error;
};

class TaskMismatch : public Error {
 public:
  using Error::Error;
};

class RankDeficient : public Error {
 public:
  using Error::Error;
};

class Separable : public Error {
 public:
  Separable(const std::string& what, double coefficient_norm)
      : Error(what), coefficient_norm_(coefficient_norm) {}
  double coefficient_norm() const noexcept { return coefficient_norm_; }

 private:
  double coefficient_norm_;
};

class RejectionStall : public Error {
 public:
  using Error::Error;
};

class UnknownPreset : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

// Malformed input text. `line` is 1-based and counts the header row;
// `column` is 1-based (0 when the whole line is at fault).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
              what),
        line_(line),
        column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace debias
