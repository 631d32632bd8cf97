#pragma once

#include <stdexcept>
#include <string>

namespace refgame {

/// Base of every error the library throws. `kind()` is a stable short tag
/// used by the CLI for machine-parsable error lines.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "runtime"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

class DistributionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "distribution"; }
};

class DomainError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "domain"; }
};

class LookupError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "lookup"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

class CorruptionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "corrupt"; }
};

class SchemaError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "schema"; }
};

}  // namespace refgame
