#pragma once

#include <stdexcept>
#include <string>

namespace rdkv {

// Base for every error raised by the library. The CLI prints what() after an
// `error:` prefix.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-contract input data (files, grids, weights).
class InputError : public Error {
 public:
  using Error::Error;
};

// Least-squares calibration produced a non-decaying curve (beta <= 1).
class CalibrationError : public Error {
 public:
  CalibrationError(const std::string& what, double slope) : Error(what), slope_(slope) {}
  double slope() const noexcept { return slope_; }

 private:
  double slope_;
};

// Budget outside [N*b_min, N*b_max] or bounds out of range.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace rdkv
