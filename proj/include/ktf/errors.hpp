#pragma once

#include <stdexcept>
#include <string>

namespace ktf {

// Error families map to CLI exit codes: ConfigError -> 2, DataError -> 3,
// NumericError -> 4. Anything else is a plain failure (1).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatches abort the current computation; they are numeric-contract
// violations, not data problems.
struct ShapeError : NumericError {
    using NumericError::NumericError;
};

}  // namespace ktf
