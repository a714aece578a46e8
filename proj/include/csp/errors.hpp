#pragma once

#include <stdexcept>
#include <string>

namespace csp {

// Base class for all toolkit failures. The CLI maps ConfigError to exit
// code 2 and every other Error to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration, unusable paths, invalid flags, unresolved auth tokens.
struct ConfigError : Error {
    using Error::Error;
};

// A caller violated a documented operation precondition.
struct PreconditionError : Error {
    using Error::Error;
};

// Transient backend failures that survived the retry budget.
struct TransportError : Error {
    TransportError(const std::string& msg, int last_status)
        : Error(msg), last_status(last_status) {}
    int last_status = 0;
};

// Non-transient request rejection (4xx other than throttling).
struct RequestError : Error {
    RequestError(const std::string& msg, int status) : Error(msg), status(status) {}
    int status = 0;
};

// Structural inconsistency in input data (duplicate reports, cross-patient mixes).
struct IntegrityError : Error {
    using Error::Error;
};

}  // namespace csp
