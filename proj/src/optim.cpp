#include "catfa/optim.hpp"

#include <cmath>

namespace catfa {

template <typename T>
void adamw_step(ParamStore<T>& store, const AdamWConfig& cfg) {
    if (cfg.lr < 0 || cfg.eps <= 0 || cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 ||
        cfg.beta2 >= 1 || cfg.weight_decay < 0)
        throw config_error("adamw: lr/wd must be >= 0, eps > 0, betas in [0,1)");
    for (auto& up : store.items()) {
        Param<T>& p = *up;
        if (p.grad.size() == 0) continue; // never touched by a backward pass
        if (p.m.size() == 0) {
            p.m = TensorT<T>(p.value.shape());
            p.v = TensorT<T>(p.value.shape());
        }
        p.steps += 1;
        const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
        const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
        const T decay = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);
        const T c1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(p.steps)));
        const T c2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(p.steps)));
        for (int64_t i = 0; i < p.value.size(); ++i) {
            const T g = p.grad[i];
            p.m[i] = b1 * p.m[i] + (T(1) - b1) * g;
            p.v[i] = b2 * p.v[i] + (T(1) - b2) * g * g;
            const T mhat = p.m[i] / c1;
            const T vhat = p.v[i] / c2;
            p.value[i] = p.value[i] * decay - lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template void adamw_step<float>(ParamStore<float>&, const AdamWConfig&);
template void adamw_step<double>(ParamStore<double>&, const AdamWConfig&);

} // namespace catfa
