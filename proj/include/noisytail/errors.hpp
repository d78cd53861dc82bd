#pragma once

#include <stdexcept>
#include <string>

namespace noisytail {

// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kValidation = 2,
  kIo = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Bad argument to an operation (shape mismatch, non-finite entry, ...).
class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what)
      : Error("invalid input: " + what, ExitCode::kValidation) {}
};

// A configuration or spec object violates its invariants.
class InvalidSpec : public Error {
 public:
  explicit InvalidSpec(const std::string& what)
      : Error("invalid spec: " + what, ExitCode::kValidation) {}
};

// A data file could not be parsed. Line numbers are 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what, ExitCode::kIo),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("I/O error: " + what, ExitCode::kIo) {}
};

// Non-finite values produced during a computation.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error("numeric failure: " + what, ExitCode::kNumeric) {}
};

}  // namespace noisytail
