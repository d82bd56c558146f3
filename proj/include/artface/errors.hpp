#pragma once

#include <stdexcept>
#include <string>

namespace artface {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or payload.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A value violates a documented precondition or invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Singular or collapsed point configuration (TPS, similarity fit, region boxes).
class DegenerateError : public Error {
public:
    using Error::Error;
};

/// RANSAC could not find a transform with enough support.
class RegistrationError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// Optimistic-concurrency or state-transition conflict.
class ConflictError : public Error {
public:
    using Error::Error;
};

/// External process or I/O failure.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace artface
