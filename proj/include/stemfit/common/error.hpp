// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace stemfit {

// Every failure the tools can report maps onto one of these; the CLI turns
// them into exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents: bad magic, version, truncation, digest mismatch.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckFailure : public Error {
 public:
  using Error::Error;
};

// Operand shapes or dimensions that do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ExitCode : int {
  kOk = 0,
  kGeneric = 1,
  kConfig = 2,
  kIo = 3,
  kNumeric = 4,
  kCheck = 5,
};

ExitCode exit_code(const std::exception& e) noexcept;

}  // namespace stemfit
