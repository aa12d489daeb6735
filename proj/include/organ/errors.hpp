#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace organ {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Array or layer shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument outside its documented domain (probabilities, counts, clip bounds).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// An API called in the wrong order, e.g. backward() before any forward pass.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Mismatched lengths between arguments that must correspond one-to-one.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Vocabulary encode/decode failures.
class EncodingError : public Error {
 public:
  using Error::Error;
};

/// A name (objective, verb, config key) that is not registered.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration keys or values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or unwritable files, malformed on-disk formats.
class FileError : public Error {
 public:
  using Error::Error;
};

/// A text format that failed to parse at a known line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A reward or loss that turned into NaN/Inf during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace organ
