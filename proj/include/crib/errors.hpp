#pragma once

#include <stdexcept>
#include <string>

namespace crib {

// Error classes map onto CLI exit codes: 1 = invalid config, 2 = missing
// inputs, 3 = invariant/data violation.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingInputError : std::runtime_error {
    explicit MissingInputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvariantError : std::runtime_error {
    explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace crib
