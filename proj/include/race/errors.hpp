#pragma once

#include <stdexcept>
#include <string>

namespace race {

// Error categories map onto the process exit-code contract:
//   0 success, 2 input error, 3 numeric failure, 1 anything else.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable/unwritable files.
struct IoError : Error {
    using Error::Error;
};

// Malformed input content (bad JSON line, bad config syntax, bad file magic).
struct ParseError : Error {
    using Error::Error;
};

// Inputs that parse but violate a contract (duplicate id, bad ratios, id out of range).
struct ValidationError : Error {
    using Error::Error;
};

// Tensor shape mismatch; message names the primitive and the offending shapes.
struct ShapeError : Error {
    using Error::Error;
};

// NaN/Inf loss and friends.
struct NumericError : Error {
    using Error::Error;
};

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return 3;
    if (dynamic_cast<const Error*>(&e)) return 2;
    return 1;
}

}  // namespace race
