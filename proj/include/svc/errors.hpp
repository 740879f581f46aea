#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace svc {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// A numerical procedure did not reach a trustworthy answer.
class NumericError : public Error {
 public:
  using Error::Error;
};

class LinearSolveError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Exponent constraints cannot be satisfied for the given singularity index.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// A kernel fit missed its requested tolerance; carries the best error reached.
class ApproximationError : public Error {
 public:
  ApproximationError(const std::string& what, double best_error)
      : Error(what), best_error_(best_error) {}
  double best_error() const noexcept { return best_error_; }

 private:
  double best_error_;
};

// A simulated path left the finite range.
class BlowUpError : public Error {
 public:
  BlowUpError(const std::string& what, std::size_t path, std::size_t step)
      : Error(what), path_(path), step_(step) {}
  std::size_t path() const noexcept { return path_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t path_;
  std::size_t step_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace svc
