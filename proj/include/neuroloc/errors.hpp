#pragma once

#include <stdexcept>
#include <string>

namespace neuroloc {

/// Operand shapes do not satisfy an operation's contract.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite value, degenerate quaternion, zero-norm key and similar.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// API misuse: backward twice, non-scalar loss, unsorted timestamps.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed pose file, CSV, config, or checkpoint.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace neuroloc
