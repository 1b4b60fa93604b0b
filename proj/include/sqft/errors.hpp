#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace sqft {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// Spatial grid cannot represent the evolved wave packet.
class ResolutionError : public Error {
public:
    using Error::Error;
};

/// Integrator step too large for the requested positivity tolerance.
class StepSizeError : public Error {
public:
    using Error::Error;
};

class UnsupportedCase : public Error {
public:
    using Error::Error;
};

/// Fock-space truncation drops more probability than the configured bound.
class TruncationError : public Error {
public:
    using Error::Error;
};

class GridMismatch : public Error {
public:
    using Error::Error;
};

/// Configuration or schema problem; `field` names the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

inline void require(bool cond, const std::string& msg)
{
    if (!cond) throw InvalidParameter(msg);
}

namespace detail {
inline std::string sci(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}
}  // namespace detail

}  // namespace sqft
