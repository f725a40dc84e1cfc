#pragma once

#include <stdexcept>
#include <string>

namespace ucsim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text. Carries the source name and 1-based line number.
class ParseError : public Error {
public:
    ParseError(const std::string& source, int line, const std::string& what)
        : Error(source + ":" + std::to_string(line) + ": " + what), source_(source), line_(line) {}

    const std::string& source() const noexcept { return source_; }
    int line() const noexcept { return line_; }

private:
    std::string source_;
    int line_;
};

/// Input parsed but violates a model invariant (disconnected grid, bad parameter, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Numerical failure during a solve or an integration run.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Iterative method hit its iteration cap.
class ConvergenceError : public NumericError {
public:
    using NumericError::NumericError;
};

/// A comparison needs a settled simulation and the run did not settle.
class NotSettledError : public Error {
public:
    using Error::Error;
};

} // namespace ucsim
