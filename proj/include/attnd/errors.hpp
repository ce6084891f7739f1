#pragma once

#include <stdexcept>
#include <string>

namespace attnd {

// Shape disagreement between tensors or between a tensor and a config.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller handed us data that violates a precondition (bad index, missing
// rationale, over-long sequence, ...).
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// API used out of order (backward twice, stage-2 on an unfrozen state, ...).
struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

// A file exists but its bytes are not what the format says they should be.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Underlying I/O failed; message carries the path.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace attnd
