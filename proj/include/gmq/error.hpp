#pragma once

#include <stdexcept>
#include <string>

namespace gmq {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (u ∉ (0,1), x non-finite, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Tensor or vector dimensions that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Triangular factor with a (numerically) zero diagonal.
class SingularMatrixError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss during optimization.
class TrainingDivergedError : public Error {
public:
    TrainingDivergedError(const std::string& phase, int epoch)
        : Error(phase + " training diverged at epoch " + std::to_string(epoch)),
          epoch_(epoch) {}
    [[nodiscard]] int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// Not enough data for a statistic (too few paths, too few columns, ...).
class InsufficientDataError : public Error {
public:
    using Error::Error;
};

/// Inputs that cannot be aligned in time or horizon.
class AlignmentError : public Error {
public:
    using Error::Error;
};

/// Iterative procedure that failed to bracket or converge.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// Malformed file, checkpoint or configuration.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace gmq
