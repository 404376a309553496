#pragma once

#include <stdexcept>
#include <string>

namespace qsd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (bad kernel, bad grid, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Kernel failed one of the construction invariants.
class InvalidKernel : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// An iterative solver stopped before reaching its tolerance.
class NotConverged : public Error {
 public:
  NotConverged(const std::string& what, double last_residual)
      : Error(what), last_residual_(last_residual) {}
  double last_residual() const noexcept { return last_residual_; }

 private:
  double last_residual_;
};

/// Surviving mass fell below the representable range.
class HorizonTooLarge : public Error {
 public:
  using Error::Error;
};

/// A certificate or bound could not be established on the probed range.
class CertificationFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace qsd
