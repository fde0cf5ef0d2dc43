#pragma once

#include <stdexcept>
#include <string>

namespace sarxai {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or incompatible serialized data (bad magic, checksum, version).
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Relative Max-Sensitivity requested for an explanation whose norm is zero
// while its perturbed counterparts are not.
class DegenerateExplanationError : public Error {
 public:
  using Error::Error;
};

}  // namespace sarxai
