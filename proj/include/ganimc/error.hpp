#pragma once

#include <stdexcept>
#include <string>

namespace ganimc {

// Base for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents do not line up; the message names the offending dimensions.
class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// An operation precondition was violated (stride, padding, non-scalar loss, ...).
class ContractError : public Error {
public:
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// File-system level failure (missing file, unwritable path).
class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// File exists but its content is not what we support (bit depth, magic, version).
class FormatError : public Error {
public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Config file violations; message lists every violation at once.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf detected where finite values are required.
class NumericError : public Error {
public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Checkpoint tensors incompatible with the network being loaded into.
class ImportError : public Error {
public:
  explicit ImportError(const std::string& msg) : Error(msg) {}
};

// Statistical fit could not be produced (degenerate samples, empty selection).
class FitError : public Error {
public:
  explicit FitError(const std::string& msg) : Error(msg) {}
};

}  // namespace ganimc
