#pragma once

#include <stdexcept>
#include <string>

namespace patchedit {

// Base for everything thrown by this library.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user-facing configuration (job file, CLI flags, constructor params).
struct config_error : error {
    using error::error;
};

// Tensor shape disagreements between operands.
struct dimension_error : error {
    using error::error;
};

// Patch geometry that cannot exist (odd half-heights, misaligned bands).
struct geometry_error : error {
    using error::error;
};

// Canvas does not tile into the requested patch grid.
struct tiling_error : error {
    using error::error;
};

// Resize with a non-integer or non-dividing factor.
struct resize_error : error {
    using error::error;
};

// Metric preconditions violated (empty mask, window larger than image).
struct metric_error : error {
    using error::error;
};

// Malformed input file; carries a byte offset where known.
struct parse_error : error {
    using error::error;
};

// Optimization blew past its divergence guard.
struct divergence_error : error {
    using error::error;
};

// Patches presented to a synchronized step at mismatched timesteps.
struct sync_barrier_error : error {
    using error::error;
};

} // namespace patchedit
