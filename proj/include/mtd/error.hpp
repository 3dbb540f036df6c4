#pragma once

#include <stdexcept>
#include <string>

namespace mtd {

// Thrown on violated preconditions (bad sizes, out-of-range labels, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input line; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that does not match the expected schema (e.g. unknown label).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(int epoch)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace mtd
