#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "catfa/rng.hpp"
#include "catfa/tensor.hpp"

namespace catfa {

// One learnable tensor with its gradient accumulator and AdamW moments. The
// grad/moment buffers are allocated on first use so that forward-only models
// stay light.
template <typename T>
struct Param {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;
    TensorT<T> m;
    TensorT<T> v;
    int64_t steps = 0; // per-parameter AdamW step counter (bias correction)
};

enum class Init { trunc_normal, zeros, ones };

// Owns every learnable tensor of a model. Parameters are registered in build
// order and initialized by drawing from a single seeded stream in that order,
// so one seed pins every weight bit-for-bit.
// Glorot/Xavier scale from the tensor shape, so that layers roughly preserve
// activation variance regardless of width. Shapes follow the layer
// conventions used throughout: {out,in} for linear maps, {co,ci,kh,kw} for
// convolutions, {c,kh,kw} for depthwise kernels. A flat 0.02 would shrink the
// signal several-fold per un-normalized layer and leave the head emitting a
// constant at initialization.
inline double glorot_std(const std::vector<int>& shape) {
    double fan_in = 0, fan_out = 0;
    switch (shape.size()) {
        case 2:
            fan_in = shape[1];
            fan_out = shape[0];
            break;
        case 3: // depthwise: each channel sees only its own kh*kw window
            fan_in = fan_out = static_cast<double>(shape[1]) * shape[2];
            break;
        case 4:
            fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
            fan_out = static_cast<double>(shape[0]) * shape[2] * shape[3];
            break;
        default:
            return 0.02;
    }
    return std::sqrt(2.0 / (fan_in + fan_out));
}

template <typename T>
class ParamStore {
public:
    explicit ParamStore(uint64_t seed) : rng_(seed) {}

    Param<T>* create(const std::string& name, std::vector<int> shape, Init init) {
        if (by_name_.count(name))
            throw config_error("parameter registered twice: " + name);
        auto p = std::make_unique<Param<T>>();
        p->name = name;
        p->value = TensorT<T>(std::move(shape));
        switch (init) {
            case Init::trunc_normal: {
                const double std = glorot_std(p->value.shape());
                for (int64_t i = 0; i < p->value.size(); ++i)
                    p->value[i] = static_cast<T>(rng_.trunc_normal(std));
                break;
            }
            case Init::zeros:
                break;
            case Init::ones:
                for (int64_t i = 0; i < p->value.size(); ++i) p->value[i] = T(1);
                break;
        }
        Param<T>* raw = p.get();
        by_name_[name] = raw;
        items_.push_back(std::move(p));
        return raw;
    }

    Param<T>* find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    const std::vector<std::unique_ptr<Param<T>>>& items() const { return items_; }

    void zero_grads() {
        for (auto& p : items_) {
            if (p->grad.size() == 0)
                p->grad = TensorT<T>(p->value.shape());
            else
                for (int64_t i = 0; i < p->grad.size(); ++i) p->grad[i] = T(0);
        }
    }

    // Gradient accumulation target for a parameter; allocates lazily so block
    // backwards can run outside a full training step.
    static TensorT<T>& grad_of(Param<T>* p) {
        if (p->grad.size() == 0) p->grad = TensorT<T>(p->value.shape());
        return p->grad;
    }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& p : items_) n += p->value.size();
        return n;
    }

private:
    Rng rng_;
    std::vector<std::unique_ptr<Param<T>>> items_;
    std::unordered_map<std::string, Param<T>*> by_name_;
};

} // namespace catfa
