#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdde {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of the operation (off-grid time, bad exponent, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A model or experiment is missing required declarations or is malformed.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure failed at a known time step.
class StepError : public Error {
 public:
  StepError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class IntegrationError : public StepError {
 public:
  using StepError::StepError;
};

class WeightError : public StepError {
 public:
  using StepError::StepError;
};

/// Monte Carlo estimation could not produce a usable estimate.
class EstimationError : public Error {
 public:
  using Error::Error;
};

/// A numerical solver or search failed (singular system, resolution floor reached, ...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdde
