#pragma once

#include <cstdint>
#include <vector>

#include "catfa/rng.hpp"
#include "catfa/tensor.hpp"

namespace catfa {

// Synthetic segmentation data: anti-aliased ellipses and rectangles of a
// distinct intensity over correlated background noise, with exact binary
// interiors as masks. Deterministic per seed.

struct SynthSample {
    TensorT<float> image; // 3 x H x W, values in [0, 1]
    TensorT<float> mask;  // 1 x H x W, values in {0, 1}
};

enum class SynthTask {
    // 1..3 shapes anywhere in the image, all labeled foreground; mask
    // foreground fraction constrained to [0.05, 0.6].
    anywhere,
    // Position is the only label signal: one target shape in the top-left
    // quadrant (labeled foreground) plus a look-alike distractor in each
    // other quadrant (labeled background).
    quadrant,
};

std::vector<SynthSample> make_synth_dataset(int n, int hw, uint64_t seed,
                                            SynthTask task = SynthTask::anywhere);

} // namespace catfa
