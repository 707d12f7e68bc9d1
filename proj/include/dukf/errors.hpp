#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dukf {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values detected at an op boundary or inside an integrator.
class NumericError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(std::size_t pivot, double value)
      : Error("matrix is not positive definite: leading minor " +
              std::to_string(pivot + 1) + " has pivot " +
              std::to_string(value)),
        pivot_(pivot) {}
  std::size_t pivot() const { return pivot_; }

 private:
  std::size_t pivot_;
};

class TapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error(key + ": " + what), key_(key), detail_(what) {}
  const std::string& key() const { return key_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string key_;
  std::string detail_;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Filter failure during a rollout; carries the step at which it happened.
class FilterDivergence : public Error {
 public:
  FilterDivergence(std::size_t step, const std::string& why)
      : Error("filter diverged at step " + std::to_string(step) + ": " + why),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace dukf
