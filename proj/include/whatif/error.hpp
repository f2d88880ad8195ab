#pragma once

#include <stdexcept>
#include <string>

namespace whatif {

/// Invalid arguments or configuration supplied by the caller.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed input data, failed ingestion, or a model that cannot be fitted
/// or evaluated.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Linear system that cannot be solved at the requested regularization.
class SingularSystem : public DataError {
public:
    using DataError::DataError;
};

} // namespace whatif
