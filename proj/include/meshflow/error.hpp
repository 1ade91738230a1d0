#pragma once

#include <stdexcept>
#include <string>

namespace meshflow {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (carries the line or byte offset in the message).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Input violates a structural invariant (index range, labels, watertightness).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range numeric parameter (non-positive scale, alpha, dt, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class DegenerateNormalError : public Error {
 public:
  DegenerateNormalError(std::size_t vertex, const std::string& what)
      : Error(what), vertex_(vertex) {}
  std::size_t vertex() const { return vertex_; }

 private:
  std::size_t vertex_;
};

class ConnectivityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value encountered during integration or optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Requested quantity was not computed (e.g. divergence integral disabled).
class StateError : public Error {
 public:
  using Error::Error;
};

class OptimizationError : public Error {
 public:
  using Error::Error;
};

/// Metric is undefined for the given inputs (e.g. both segmentations empty).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace meshflow
