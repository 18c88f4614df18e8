#pragma once

#include <stdexcept>
#include <string>

namespace dtsnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape or channel bookkeeping mismatch. The message names the offending dim.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration (unknown key, bad value). CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unusable input data (bad WAV, missing pair, too-short clip). CLI exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during training or evaluation. CLI exit code 4.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace dtsnet
