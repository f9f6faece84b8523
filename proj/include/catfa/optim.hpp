#pragma once

#include "catfa/params.hpp"

namespace catfa {

// Decoupled-weight-decay Adam. Decay multiplies the parameter by
// (1 - lr * weight_decay) before the moment-driven update is subtracted, so
// regularization never enters the moment estimates.
struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// One update over every parameter that has an allocated gradient. Moments are
// allocated lazily; each parameter keeps its own step counter for bias
// correction.
template <typename T>
void adamw_step(ParamStore<T>& store, const AdamWConfig& cfg);

} // namespace catfa
