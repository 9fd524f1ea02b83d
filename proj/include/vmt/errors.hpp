#pragma once

#include <stdexcept>
#include <string>

namespace vmt {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes incompatible with the requested operation.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf surfaced where every value must stay finite.
struct NumericError : Error {
  using Error::Error;
};

// Bad argument value (weights, batch sizes, labels, ...).
struct ValueError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace vmt
