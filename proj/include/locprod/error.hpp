#pragma once

#include <stdexcept>
#include <string>

namespace locprod {

// Input could not be tokenized/parsed (carries the 1-based row number).
class ParseError : public std::runtime_error {
public:
    ParseError(std::string msg, long row = -1)
        : std::runtime_error(std::move(msg)), row_(row) {}
    long row() const noexcept { return row_; }

private:
    long row_;
};

// A value is outside the mathematical domain of an operation
// (e.g. nonpositive level before logging).
class DataDomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Structural violation of the panel contract (duplicates, moving firms, ...).
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Rank-deficient least-squares system; carries the reciprocal condition
// estimate of the scaled design.
class SingularMatrixError : public std::runtime_error {
public:
    SingularMatrixError(std::string msg, double rcond)
        : std::runtime_error(std::move(msg)), rcond_(rcond) {}
    double rcond() const noexcept { return rcond_; }

private:
    double rcond_ = 0.0;
};

// Non-finite objective, divergence, or other numerical breakdown.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad run configuration (CLI / config file level).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}
