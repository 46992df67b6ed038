#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace gcalc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid argument values (NaN payoffs, zero path counts, controls outside the box, ...).
class InputError : public Error {
public:
    using Error::Error;
};

/// Space grid too coarse for the transition stencil.
class ResolutionError : public Error {
public:
    using Error::Error;
};

/// Exponential weight e^{beta T} would leave the double range.
class OverflowError : public Error {
public:
    using Error::Error;
};

/// D_n <= 0 in the ratio-decay construction.
class DegenerateDenominatorError : public Error {
public:
    using Error::Error;
};

/// Operation called outside its contract (e.g. classical oracle on a non-degenerate box).
class MisuseError : public Error {
public:
    using Error::Error;
};

/// A driver returned a non-finite value.
class DriverError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Picard iteration did not reach the tolerance; carries the distance trace.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> trace)
        : Error(what), trace_(std::move(trace)) {}

    const std::vector<double>& trace() const noexcept { return trace_; }

private:
    std::vector<double> trace_;
};

} // namespace gcalc
