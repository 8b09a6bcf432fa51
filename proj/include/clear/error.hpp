#pragma once

#include <stdexcept>
#include <string>

namespace clear {

/// Base class for every error raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ZeroVectorError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct InvalidTemperatureError : Error {
  using Error::Error;
};

struct DegenerateBatchError : Error {
  using Error::Error;
};

struct NumericalInstabilityError : Error {
  using Error::Error;
};

struct IncompatibleCheckpointError : Error {
  using Error::Error;
};

struct ReferenceError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct DegenerateDatasetError : Error {
  using Error::Error;
};

struct InsufficientDataError : Error {
  using Error::Error;
};

struct PoolTooSmallError : Error {
  using Error::Error;
};

struct MissingQrelsError : Error {
  using Error::Error;
};

struct InvalidScheduleError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace clear
