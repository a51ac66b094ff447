#pragma once

#include <stdexcept>
#include <string>

namespace hfl {

// Invalid or out-of-range configuration. CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A violation of the protocol's invariants at runtime (backup-store miss,
// misrouted update, broken update relation). CLI maps this to exit code 2.
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (IDX files, dataset payloads).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Mismatched vector/matrix dimensions.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void require_same_size(std::size_t a, std::size_t b, const char* where) {
    if (a != b) {
        throw DimensionError(std::string(where) + ": dimension mismatch (" +
                             std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
}

} // namespace hfl
