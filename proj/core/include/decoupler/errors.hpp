#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace decoupler {

/// Base class for every error raised by the toolkit.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor or layout mismatch (matrix/vector dimensions, embedding width).
struct ShapeError : Error {
    using Error::Error;
};

/// Invalid argument values or malformed domain objects.
struct ValidationError : Error {
    using Error::Error;
};

/// Caller violated an operation precondition (e.g. attacking a sample the
/// model already misclassifies).
struct PreconditionError : Error {
    using Error::Error;
};

/// Problem instance exceeds a hard resource cap (e.g. the exhaustive-search
/// datapoint limit).
struct CapacityError : Error {
    using Error::Error;
};

/// File parsing or schema validation failure.
struct LoadError : Error {
    using Error::Error;
};

/// File system failure, message carries the offending path.
struct IoError : Error {
    using Error::Error;
};

/// Optimization diverged; remembers the epoch where the loss went non-finite.
class TrainingError : public Error {
  public:
    TrainingError(const std::string& msg, std::size_t epoch) : Error(msg), epoch_(epoch) {}

    std::size_t epoch() const { return epoch_; }

  private:
    std::size_t epoch_;
};

}  // namespace decoupler
