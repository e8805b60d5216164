#pragma once

#include <stdexcept>
#include <string>

namespace gpreg {

// Base class for all library errors.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (flags, config file, parameter domains).
struct config_error : error {
    using error::error;
};

// File I/O failure; message carries the offending path.
struct io_error : error {
    using error::error;
};

// Malformed input file contents; message names the line number.
struct parse_error : error {
    using error::error;
};

// An operation received an empty cloud / empty index set.
struct empty_input_error : error {
    using error::error;
};

// Numerical failure (indefinite covariance, singular system, non-finite value).
// `pivot` is the failing Cholesky pivot index when known, -1 otherwise.
struct numeric_error : error {
    explicit numeric_error(const std::string& msg, int pivot_index = -1)
        : error(msg), pivot(pivot_index) {}
    int pivot = -1;
};

}  // namespace gpreg
