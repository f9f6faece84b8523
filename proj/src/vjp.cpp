#include "catfa/vjp.hpp"

#include <memory>

namespace catfa {

namespace {

void need_inputs(const std::string& name, size_t have, size_t want) {
    if (have != want)
        throw shape_error("vjp " + name + ": expected " + std::to_string(want) +
                          " inputs, got " + std::to_string(have));
}

} // namespace

std::vector<std::string> vjp_primitive_names() {
    return {"conv2d",      "depthwise_conv2d", "transposed_conv2d", "layer_norm",
            "batch_norm",  "gelu",             "sigmoid",           "softmax",
            "global_avg_pool", "channel_pool", "bilinear_upsample", "matmul",
            "concat",      "add",              "mul",               "reshape"};
}

template <typename T>
Vjp<T> make_vjp(const std::string& primitive, const std::vector<TensorT<T>>& inputs,
                const OpAttrs& attrs) {
    Vjp<T> r;

    if (primitive == "conv2d") {
        need_inputs(primitive, inputs.size(), 3);
        const TensorT<T> x = inputs[0], w = inputs[1];
        r.output = conv2d(x, w, inputs[2], attrs.stride, attrs.padding, attrs.pad_mode);
        r.pullback = [x, w, attrs](const TensorT<T>& ct) {
            TensorT<T> dw(w.shape()), db({w.dim(0)});
            TensorT<T> dx = conv2d_backward(x, w, attrs.stride, attrs.padding, attrs.pad_mode,
                                            ct, &dw, &db);
            return std::vector<TensorT<T>>{dx, dw, db};
        };
        return r;
    }

    if (primitive == "depthwise_conv2d") {
        need_inputs(primitive, inputs.size(), 3);
        const TensorT<T> x = inputs[0], w = inputs[1];
        r.output = depthwise_conv2d(x, w, inputs[2], attrs.stride, attrs.padding, attrs.pad_mode);
        r.pullback = [x, w, attrs](const TensorT<T>& ct) {
            TensorT<T> dw(w.shape()), db({w.dim(0)});
            TensorT<T> dx = depthwise_conv2d_backward(x, w, attrs.stride, attrs.padding,
                                                      attrs.pad_mode, ct, &dw, &db);
            return std::vector<TensorT<T>>{dx, dw, db};
        };
        return r;
    }

    if (primitive == "transposed_conv2d") {
        need_inputs(primitive, inputs.size(), 3);
        const TensorT<T> x = inputs[0], w = inputs[1];
        r.output = transposed_conv2d(x, w, inputs[2], attrs.stride);
        r.pullback = [x, w, attrs](const TensorT<T>& ct) {
            TensorT<T> dw(w.shape()), db({w.dim(1)});
            TensorT<T> dx = transposed_conv2d_backward(x, w, attrs.stride, ct, &dw, &db);
            return std::vector<TensorT<T>>{dx, dw, db};
        };
        return r;
    }

    if (primitive == "layer_norm") {
        need_inputs(primitive, inputs.size(), 3);
        const TensorT<T> gamma = inputs[1];
        auto cache = std::make_shared<NormCache<T>>();
        r.output = layer_norm(inputs[0], gamma, inputs[2], attrs.eps, cache.get());
        r.pullback = [cache, gamma](const TensorT<T>& ct) {
            TensorT<T> dg({gamma.dim(0)}), db({gamma.dim(0)});
            TensorT<T> dx = layer_norm_backward(*cache, gamma, ct, &dg, &db);
            return std::vector<TensorT<T>>{dx, dg, db};
        };
        return r;
    }

    if (primitive == "batch_norm") {
        // Differentiates the train-mode application (batch statistics). The
        // running-statistics side effect does not influence the output.
        need_inputs(primitive, inputs.size(), 3);
        const TensorT<T> gamma = inputs[1];
        auto cache = std::make_shared<NormCache<T>>();
        BatchNormState<T> state;
        r.output = batch_norm(inputs[0], gamma, inputs[2], state, Mode::train, attrs.eps,
                              attrs.momentum, cache.get());
        r.pullback = [cache, gamma](const TensorT<T>& ct) {
            TensorT<T> dg({gamma.dim(0)}), db({gamma.dim(0)});
            TensorT<T> dx = batch_norm_backward(*cache, gamma, ct, &dg, &db);
            return std::vector<TensorT<T>>{dx, dg, db};
        };
        return r;
    }

    if (primitive == "gelu") {
        need_inputs(primitive, inputs.size(), 1);
        const TensorT<T> x = inputs[0];
        r.output = gelu(x);
        r.pullback = [x](const TensorT<T>& ct) {
            return std::vector<TensorT<T>>{gelu_backward(x, ct)};
        };
        return r;
    }

    if (primitive == "sigmoid") {
        need_inputs(primitive, inputs.size(), 1);
        r.output = sigmoid(inputs[0]);
        const TensorT<T> y = r.output;
        r.pullback = [y](const TensorT<T>& ct) {
            return std::vector<TensorT<T>>{sigmoid_backward(y, ct)};
        };
        return r;
    }

    if (primitive == "softmax") {
        need_inputs(primitive, inputs.size(), 1);
        r.output = softmax(inputs[0], attrs.axis);
        const TensorT<T> y = r.output;
        const int axis = attrs.axis;
        r.pullback = [y, axis](const TensorT<T>& ct) {
            return std::vector<TensorT<T>>{softmax_backward(y, ct, axis)};
        };
        return r;
    }

    if (primitive == "global_avg_pool") {
        need_inputs(primitive, inputs.size(), 1);
        const int h = inputs[0].dim(2), w = inputs[0].dim(3);
        r.output = global_avg_pool(inputs[0]);
        r.pullback = [h, w](const TensorT<T>& ct) {
            return std::vector<TensorT<T>>{global_avg_pool_backward(ct, h, w)};
        };
        return r;
    }

    if (primitive == "channel_pool") {
        need_inputs(primitive, inputs.size(), 1);
        const TensorT<T> x = inputs[0];
        r.output = channel_pool(x);
        r.pullback = [x](const TensorT<T>& ct) {
            return std::vector<TensorT<T>>{channel_pool_backward(x, ct)};
        };
        return r;
    }

    if (primitive == "bilinear_upsample") {
        need_inputs(primitive, inputs.size(), 1);
        const int h = inputs[0].dim(2), w = inputs[0].dim(3);
        r.output = bilinear_upsample(inputs[0], attrs.out_h, attrs.out_w);
        r.pullback = [h, w](const TensorT<T>& ct) {
            return std::vector<TensorT<T>>{bilinear_upsample_backward(ct, h, w)};
        };
        return r;
    }

    if (primitive == "matmul") {
        need_inputs(primitive, inputs.size(), 2);
        const TensorT<T> a = inputs[0], b = inputs[1];
        r.output = matmul(a, b);
        r.pullback = [a, b](const TensorT<T>& ct) {
            TensorT<T> da(a.shape()), db(b.shape());
            matmul_backward(a, b, ct, &da, &db);
            return std::vector<TensorT<T>>{da, db};
        };
        return r;
    }

    if (primitive == "concat") {
        if (inputs.empty()) throw shape_error("vjp concat: no inputs");
        r.output = concat(inputs, attrs.axis);
        const std::vector<TensorT<T>> parts = inputs;
        const int axis = attrs.axis;
        r.pullback = [parts, axis](const TensorT<T>& ct) {
            return concat_backward(parts, axis, ct);
        };
        return r;
    }

    if (primitive == "add") {
        need_inputs(primitive, inputs.size(), 2);
        r.output = add(inputs[0], inputs[1]);
        r.pullback = [](const TensorT<T>& ct) { return std::vector<TensorT<T>>{ct, ct}; };
        return r;
    }

    if (primitive == "mul") {
        need_inputs(primitive, inputs.size(), 2);
        const TensorT<T> a = inputs[0], b = inputs[1];
        r.output = mul(a, b);
        r.pullback = [a, b](const TensorT<T>& ct) {
            return std::vector<TensorT<T>>{mul(ct, b), mul(ct, a)};
        };
        return r;
    }

    if (primitive == "reshape") {
        need_inputs(primitive, inputs.size(), 1);
        const std::vector<int> from = inputs[0].shape();
        r.output = inputs[0].reshaped(attrs.shape);
        r.pullback = [from](const TensorT<T>& ct) {
            return std::vector<TensorT<T>>{ct.reshaped(from)};
        };
        return r;
    }

    throw config_error("vjp_of: unsupported primitive '" + primitive + "'");
}

template <typename T>
std::vector<TensorT<T>> vjp_of(const std::string& primitive,
                               const std::vector<TensorT<T>>& inputs, const OpAttrs& attrs,
                               const TensorT<T>& cotangent) {
    Vjp<T> v = make_vjp(primitive, inputs, attrs);
    if (!v.output.same_shape(cotangent))
        throw shape_error("vjp_of " + primitive + ": cotangent shape " + cotangent.shape_str() +
                          " does not match output shape " + v.output.shape_str());
    return v.pullback(cotangent);
}

template Vjp<float> make_vjp<float>(const std::string&, const std::vector<TensorT<float>>&,
                                    const OpAttrs&);
template Vjp<double> make_vjp<double>(const std::string&, const std::vector<TensorT<double>>&,
                                      const OpAttrs&);
template std::vector<TensorT<float>> vjp_of<float>(const std::string&,
                                                   const std::vector<TensorT<float>>&,
                                                   const OpAttrs&, const TensorT<float>&);
template std::vector<TensorT<double>> vjp_of<double>(const std::string&,
                                                     const std::vector<TensorT<double>>&,
                                                     const OpAttrs&, const TensorT<double>&);

} // namespace catfa
