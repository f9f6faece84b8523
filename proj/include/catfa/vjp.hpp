#pragma once

#include <functional>
#include <string>
#include <vector>

#include "catfa/ops.hpp"

namespace catfa {

// Attributes a primitive may need beyond its tensor inputs. Only the fields
// relevant to the named primitive are read.
struct OpAttrs {
    int stride = 1;
    int padding = 0;
    PadMode pad_mode = PadMode::zero;
    int axis = 0;
    double eps = 1e-5;
    double momentum = 0.1;
    int out_h = 0;           // bilinear_upsample target extents
    int out_w = 0;
    std::vector<int> shape;  // reshape target
};

// A primitive evaluated together with its reverse-mode pullback: the pullback
// maps a cotangent of the output to cotangents of every tensor input, in
// input order.
template <typename T>
struct Vjp {
    TensorT<T> output;
    std::function<std::vector<TensorT<T>>(const TensorT<T>&)> pullback;
};

// Supported primitive names: conv2d, depthwise_conv2d, transposed_conv2d,
// layer_norm, batch_norm, gelu, sigmoid, softmax, global_avg_pool,
// channel_pool, bilinear_upsample, matmul, concat, add, mul, reshape.
// Unknown names raise config_error.
std::vector<std::string> vjp_primitive_names();

template <typename T>
Vjp<T> make_vjp(const std::string& primitive, const std::vector<TensorT<T>>& inputs,
                const OpAttrs& attrs = {});

// Convenience: evaluate the pullback directly at one cotangent.
template <typename T>
std::vector<TensorT<T>> vjp_of(const std::string& primitive,
                               const std::vector<TensorT<T>>& inputs, const OpAttrs& attrs,
                               const TensorT<T>& cotangent);

} // namespace catfa
