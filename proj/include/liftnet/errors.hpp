#pragma once

#include <stdexcept>
#include <string>

namespace liftnet {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or index mismatch between operands. Maps to CLI exit code 1.
struct DimensionError : Error {
    using Error::Error;
};

/// Bad user input: malformed files, invalid plans/configs. Maps to CLI exit code 1.
struct ValidationError : Error {
    using Error::Error;
};

/// Numerical failure: divergence, non-convergence, non-finite values. CLI exit code 2.
struct NumericalError : Error {
    using Error::Error;
};

} // namespace liftnet
