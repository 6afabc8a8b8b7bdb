// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace bootmae {

// Shared epsilon for layer norm, pixel-target normalization and variance
// guards. Fixed on purpose: tests pin exact values against it.
inline constexpr double kEps = 1e-6;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor extents do not line up for the requested operation.
struct ShapeError : Error {
    using Error::Error;
};

// A caller violated a documented precondition (plan mismatch, token counts,
// injecting into a block without a cross-attention sub-block, ...).
struct ContractError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite values where finite math is required; aborts the current step.
struct NumericError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

// File-format and filesystem failures (checkpoints, images, configs).
struct IoError : Error {
    using Error::Error;
};

}  // namespace bootmae
