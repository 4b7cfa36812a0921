#pragma once

#include <stdexcept>
#include <string>

namespace mpol {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file or inconsistent shapes.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Payload length disagrees with the header.
class CorruptionError : public FormatError {
public:
    using FormatError::FormatError;
};

class UnsupportedError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Out-of-range argument (kernel width, threshold, time-point, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class CalibrationError : public Error {
public:
    using Error::Error;
};

/// Weight manifest failed validation. The message names the offending layer.
class ModelError : public Error {
public:
    using Error::Error;
};

/// A statistic is undefined for the given input (e.g. empty mask).
class UndefinedResultError : public Error {
public:
    using Error::Error;
};

}  // namespace mpol
