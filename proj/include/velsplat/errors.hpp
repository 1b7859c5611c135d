#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace velsplat {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates a precondition (non-positive scale,
/// zero-norm quaternion, ...).
class InvalidParameterError : public Error {
public:
    using Error::Error;
};

/// Temporal variance too small to condition on time.
class DegenerateTemporalError : public Error {
public:
    using Error::Error;
};

/// Bad configuration: unknown key, out-of-range value, shape mismatch.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Structured file is malformed; carries the byte offset of the failure.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (byte " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}

    std::size_t byte_offset() const { return byte_offset_; }

private:
    std::size_t byte_offset_ = 0;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace velsplat
