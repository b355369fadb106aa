#pragma once

#include <stdexcept>
#include <string>

namespace covmt {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad parameter values, inconsistent options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or degenerate input data (CSV problems, zero-variance columns,
/// dimension mismatches).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: singular matrix, Cholesky breakdown, non-convergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Raised when the FDP search stops at k = 1 with gamma > 0, in which case
/// FDP-adjusted p-values cannot be produced. Carries the rejection count at
/// k = 1 and the requested gamma so callers can report the exact state.
class FdpNotProducible : public Error {
 public:
  FdpNotProducible(int r1, double gamma)
      : Error("FDP-adjusted p-values cannot be produced: with gamma = " +
              std::to_string(gamma) + " the search stops at k = 1 (R_1 = " +
              std::to_string(r1) + ", and 1 > gamma*(R_1 + 1))"),
        r1_(r1),
        gamma_(gamma) {}

  int r1() const { return r1_; }
  double gamma() const { return gamma_; }

 private:
  int r1_;
  double gamma_;
};

}  // namespace covmt
