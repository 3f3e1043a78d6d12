#pragma once

#include <stdexcept>
#include <string>

namespace npde {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters, model specs or experiment configs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward twice on a consumed graph.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset or checkpoint files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File-system failures (missing paths, unwritable outputs).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during training or a solver step.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Solver time step violating the advective CFL bound.
class StepSizeError : public NumericalError {
 public:
  StepSizeError(const std::string& what, double courant)
      : NumericalError(what), courant_(courant) {}
  double courant() const { return courant_; }

 private:
  double courant_;
};

}  // namespace npde
