#ifndef REMOVALNET_ERRORS_HPP
#define REMOVALNET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad architecture id, invalid hyperparameters, malformed config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Split index or layer range outside the model.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// Empty sample sets and other violated input domains.
class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint whose tensors do not match its registered architecture.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// White-box metric requested for models of different architectures.
class MetricInapplicable : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage that could not complete.
class StageError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value during an optimization loop; carries the iteration.
class IterationError : public Error {
 public:
  IterationError(const std::string& what, long iteration)
      : Error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

class TrainingError : public IterationError {
 public:
  using IterationError::IterationError;
};

class AttackError : public IterationError {
 public:
  using IterationError::IterationError;
};

class RemovalError : public IterationError {
 public:
  using IterationError::IterationError;
};

}  // namespace rnet

#endif  // REMOVALNET_ERRORS_HPP
