#pragma once

#include <stdexcept>
#include <string>

namespace cmi {

// Every library failure derives from Error so callers can catch one type and
// still map the concrete kind onto an exit code.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error {
  public:
    using Error::Error;
};

class ShapeMismatchError : public InvalidInputError {
  public:
    using InvalidInputError::InvalidInputError;
};

// Zero-norm vector where a direction is required.
class DegenerateError : public Error {
  public:
    using Error::Error;
};

class CapabilityError : public Error {
  public:
    using Error::Error;
};

class PairingError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class DataError : public Error {
  public:
    using Error::Error;
};

class UndefinedMetricError : public Error {
  public:
    using Error::Error;
};

class ValidationError : public Error {
  public:
    using Error::Error;
};

} // namespace cmi
