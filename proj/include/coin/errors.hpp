#pragma once

#include <stdexcept>
#include <string>

namespace coin {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Collapsed embeddings, zero-variance data, non-finite values.
struct DegenerateError : Error {
    using Error::Error;
};

// Out-of-range scalar arguments, labels, batch sizes.
struct ParameterError : Error {
    using Error::Error;
};

// Malformed checkpoint or spec file; message names the offending field.
struct ParseError : Error {
    using Error::Error;
};

// Semantically invalid experiment spec; message names the offending field.
struct ValidationError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace coin
