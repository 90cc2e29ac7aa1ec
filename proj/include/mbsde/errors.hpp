#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mbsde {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A point or parameter lies outside the region where an operation is defined.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Non-finite or singular numerical data (singular metric, NaN drift, ...).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// An ODE trajectory left the chart domain.
class EscapeError : public Error {
public:
    EscapeError(const std::string& what, double exit_time)
        : Error(what), exit_time_(exit_time) {}
    double exit_time() const noexcept { return exit_time_; }

private:
    double exit_time_;
};

/// An iterative method failed to reach its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> residuals)
        : Error(what), residuals_(std::move(residuals)) {}
    const std::vector<double>& residuals() const noexcept { return residuals_; }

private:
    std::vector<double> residuals_;
};

/// The requested object is not uniquely defined (e.g. antipodal endpoints).
class AmbiguityError : public Error {
public:
    using Error::Error;
};

/// Regression design matrix is rank deficient.
class BasisError : public Error {
public:
    using Error::Error;
};

/// Unknown name in a registry of builtins or estimates.
class RegistryError : public Error {
public:
    using Error::Error;
};

/// Result is too unreliable to be returned (e.g. heavy horizon truncation).
class ReliabilityError : public Error {
public:
    using Error::Error;
};

/// Operation not available for the given configuration.
class UnsupportedError : public Error {
public:
    using Error::Error;
};

/// Invalid experiment configuration; `field()` is the dotted path of the offending entry.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace mbsde
