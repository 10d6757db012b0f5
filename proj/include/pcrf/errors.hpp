#pragma once

#include <stdexcept>
#include <string>

namespace pcrf {

/// Malformed or degenerate input data (manifests, frames, images).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments supplied by the caller.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace pcrf
