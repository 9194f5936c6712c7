#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nvmag {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Iterative routine failed to converge; carries the last residual.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Eigenvector overlap too small to assign a spin label.
class DegenerateLabeling : public Error {
 public:
  DegenerateLabeling(const std::string& what, std::vector<double> overlaps)
      : Error(what), overlaps_(std::move(overlaps)) {}
  const std::vector<double>& overlaps() const noexcept { return overlaps_; }

 private:
  std::vector<double> overlaps_;
};

class FitError : public Error {
 public:
  FitError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class SeedingError : public FitError {
 public:
  explicit SeedingError(const std::string& what) : FitError(what, 0.0) {}
};

class UnclassifiableError : public Error {
 public:
  using Error::Error;
};

/// (f-, f+) pair does not correspond to any physical field.
class InconsistentFrequencies : public Error {
 public:
  using Error::Error;
};

class ConesDisjoint : public Error {
 public:
  ConesDisjoint(const std::string& what, double discriminant)
      : Error(what), discriminant_(discriminant) {}
  double discriminant() const noexcept { return discriminant_; }

 private:
  double discriminant_;
};

class InconsistentCones : public Error {
 public:
  using Error::Error;
};

class AmbiguousSolution : public Error {
 public:
  using Error::Error;
};

class DegenerateEllipse : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace nvmag
