#pragma once

#include <stdexcept>
#include <string>

namespace featvis {

/// Base class for every error raised by the library. The CLI maps the
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input data: wrong shapes, non-finite values, out-of-range arguments.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Infeasible or inconsistent configuration (perplexity too large, C > count, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A layer name that does not resolve, or a layer without a predecessor.
class ResolutionError : public Error {
public:
    using Error::Error;
};

/// Optimization produced a non-finite loss or gradient.
class NumericError : public Error {
public:
    NumericError(const std::string& what, int iteration, std::string term)
        : Error(what), iteration_(iteration), term_(std::move(term)) {}

    int iteration() const noexcept { return iteration_; }
    const std::string& term() const noexcept { return term_; }

private:
    int iteration_;
    std::string term_;
};

/// File-system or serialization failure.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace featvis
