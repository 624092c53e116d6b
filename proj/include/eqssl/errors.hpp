#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eqssl {

/// Invalid argument passed to an operation (shape mismatch, non-finite input).
class ArgumentError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration (bad ranges, odd embedding size, ...).
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the offending line (1-based, 0 if unknown).
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
        file_(file),
        line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

private:
  std::string file_;
  std::size_t line_;
};

/// Raised when optimization produces a non-finite loss or gradient.
class TrainingError : public std::runtime_error {
public:
  TrainingError(const std::string& what, long step)
      : std::runtime_error(what), step_(step) {}

  long step() const noexcept { return step_; }

private:
  long step_;
};

}  // namespace eqssl
