#pragma once

#include <stdexcept>
#include <string>

namespace orf {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto its exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad parameter values, mismatched dimensions, violated preconditions.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
public:
    DimensionMismatch(const std::string& where, long expected, long got)
        : InvalidArgument(where + ": dimension mismatch (expected " + std::to_string(expected) +
                          ", got " + std::to_string(got) + ")") {}
};

// NaN/Inf in inputs or produced during an update.
class NumericError : public Error {
public:
    using Error::Error;
};

// A synthetic task could not be certified to satisfy its low-noise margin.
class CertificationError : public Error {
public:
    using Error::Error;
};

// Rejection sampler gave up because acceptance fell below the floor.
class SamplerAbort : public Error {
public:
    using Error::Error;
};

// File missing, unwritable, or malformed.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace orf
