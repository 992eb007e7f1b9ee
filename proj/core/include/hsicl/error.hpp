#pragma once

#include <stdexcept>
#include <string>

namespace hsicl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad command line or API misuse (e.g. backward on a non-scalar).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Sizes that do not fit (patch larger than cube, stride too large).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Operands whose shapes disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Parameter outside its documented range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Malformed text input; message carries the line number.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Unreadable, truncated or corrupt files.
class FormatError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf, failed inversion, degenerate signal.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Contrastive batch where every anchor lacks negatives.
class DegenerateBatchError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Metric undefined for the given data (e.g. constant truth).
class UndefinedMetricError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace hsicl
