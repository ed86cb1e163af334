#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ehrisk {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range input to a model or service operation.
class InvalidInputError : public Error {
  public:
    using Error::Error;
};

/// Invalid configuration: degenerate cohort, bad generator settings, unknown keys.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Operation called on an object in the wrong state (e.g. an untrained model).
class StateError : public Error {
  public:
    using Error::Error;
};

/// Request exceeds a hard capacity limit (e.g. exact Shapley over too many groups).
class CapacityError : public Error {
  public:
    using Error::Error;
};

class VersionError : public Error {
  public:
    using Error::Error;
};

/// Parse failure in a line-oriented file. `line()` is 1-based.
class ParseError : public Error {
  public:
    ParseError(std::size_t line, const std::string &what);
    [[nodiscard]] std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

/// I/O failure in the persistence layer. The write that raised it was not acknowledged.
class StorageError : public Error {
  public:
    using Error::Error;
};

class NotFoundError : public Error {
  public:
    using Error::Error;
};

/// A write references an entity that does not exist.
class ReferentialError : public Error {
  public:
    using Error::Error;
};

}  // namespace ehrisk
