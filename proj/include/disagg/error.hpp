#pragma once

#include <stdexcept>
#include <string>

namespace disagg {

/// Invalid user configuration (bad field, out-of-range fraction, ...).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Array extents that do not agree.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside a function's mathematical domain (nonpositive variance, ...).
class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dataset or file that cannot be read or fails validation.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Misuse of an API object (stale cache, mismatched optimizer state).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Non-finite loss or gradient during optimization.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace disagg
