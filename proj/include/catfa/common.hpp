#pragma once

#include <stdexcept>
#include <string>

namespace catfa {

// Error taxonomy. Everything user-facing funnels into one of these so the
// C API and the CLI can map failures onto stable status/exit codes.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad shapes, dtype mismatches, invalid op arguments.
struct shape_error : error {
    using error::error;
};

// Bad run configuration, bad file contents, unusable inputs.
struct config_error : error {
    using error::error;
};

// Failures at run time: non-finite values, uninitialized state, I/O.
struct runtime_fault : error {
    using error::error;
};

// Padding behaviour for spatial convolutions. Zero is the default everywhere;
// reflect/circular exist so the positional-signal experiments can swap the
// border treatment of the depthwise convolution inside the token mixer.
enum class PadMode { zero, reflect, circular };

// Normalization layers behave differently in training vs. evaluation.
enum class Mode { train, eval };

inline const char* pad_mode_name(PadMode m) {
    switch (m) {
        case PadMode::zero: return "zero";
        case PadMode::reflect: return "reflect";
        case PadMode::circular: return "circular";
    }
    return "?";
}

} // namespace catfa
