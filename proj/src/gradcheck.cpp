#include "catfa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "catfa/loss.hpp"
#include "catfa/model.hpp"
#include "catfa/vjp.hpp"

namespace catfa {

namespace {

// Relative error with a floor: entries below the floor are only checkable in
// absolute terms, since central differences in float64 bottom out around
// 1e-10 once the forward pass's own rounding is divided by 2h.
double rel_err(double a, double f) {
    return std::fabs(a - f) / std::max({std::fabs(a), std::fabs(f), 2e-6});
}

TensorT<double> randt(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    TensorT<double> t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
    return t;
}

} // namespace

double fd_max_rel_err(TensorT<double>& values, const TensorT<double>& analytic,
                      const std::function<double()>& s, int sample_stride, double h) {
    check_same_shape(values, analytic, "fd check");
    if (sample_stride < 1) sample_stride = 1;
    double worst = 0;
    for (int64_t i = 0; i < values.size(); i += sample_stride) {
        const double orig = values[i];
        values[i] = orig + h;
        const double sp = s();
        values[i] = orig - h;
        const double sm = s();
        values[i] = orig;
        const double fd = (sp - sm) / (2 * h);
        worst = std::max(worst, rel_err(analytic[i], fd));
    }
    return worst;
}

namespace {

// ---- primitive targets ------------------------------------------------------

GradCheckRow check_primitive(const std::string& name, uint64_t seed, bool corrupt) {
    Rng rng(seed);
    std::vector<TensorT<double>> inputs;
    OpAttrs attrs;
    if (name == "conv2d") {
        inputs = {randt(rng, {2, 3, 6, 5}), randt(rng, {4, 3, 3, 3}), randt(rng, {4})};
        attrs.padding = 1;
    } else if (name == "depthwise_conv2d") {
        inputs = {randt(rng, {2, 3, 6, 5}), randt(rng, {3, 3, 3}), randt(rng, {3})};
        attrs.padding = 1;
    } else if (name == "transposed_conv2d") {
        inputs = {randt(rng, {2, 3, 4, 3}), randt(rng, {3, 2, 2, 2}), randt(rng, {2})};
        attrs.stride = 2;
    } else if (name == "layer_norm") {
        inputs = {randt(rng, {2, 5, 3, 4}), randt(rng, {5}, 0.5, 1.5), randt(rng, {5})};
        attrs.eps = 1e-6;
    } else if (name == "batch_norm") {
        inputs = {randt(rng, {3, 4, 3, 2}), randt(rng, {4}, 0.5, 1.5), randt(rng, {4})};
        attrs.eps = 1e-5;
    } else if (name == "gelu" || name == "sigmoid") {
        inputs = {randt(rng, {2, 3, 4, 5}, -2.0, 2.0)};
    } else if (name == "softmax") {
        inputs = {randt(rng, {2, 6, 3, 4}, -2.0, 2.0)};
        attrs.axis = 1;
    } else if (name == "global_avg_pool") {
        inputs = {randt(rng, {2, 3, 5, 4})};
    } else if (name == "channel_pool") {
        inputs = {randt(rng, {2, 5, 4, 3})};
    } else if (name == "bilinear_upsample") {
        inputs = {randt(rng, {1, 2, 3, 4})};
        attrs.out_h = 6;
        attrs.out_w = 8;
    } else if (name == "matmul") {
        inputs = {randt(rng, {5, 4}), randt(rng, {4, 6})};
    } else if (name == "concat") {
        inputs = {randt(rng, {2, 3, 2, 2}), randt(rng, {2, 5, 2, 2})};
        attrs.axis = 1;
    } else if (name == "add" || name == "mul") {
        inputs = {randt(rng, {2, 3, 4, 2}), randt(rng, {2, 3, 4, 2})};
    } else if (name == "reshape") {
        inputs = {randt(rng, {2, 3, 4, 2})};
        attrs.shape = {6, 8};
    } else {
        throw config_error("gradcheck: no fixture for primitive '" + name + "'");
    }

    Vjp<double> vjp = make_vjp(name, inputs, attrs);
    const TensorT<double> w = randt(rng, vjp.output.shape());
    std::vector<TensorT<double>> grads = vjp.pullback(w);
    if (corrupt && grads[0].size() > 0) grads[0][0] += 0.5;

    const auto s = [&]() { return dot(w, make_vjp(name, inputs, attrs).output); };
    GradCheckRow row{name, 0.0, 1e-6, false};
    for (size_t k = 0; k < inputs.size(); ++k)
        row.max_rel_err = std::max(row.max_rel_err, fd_max_rel_err(inputs[k], grads[k], s));
    row.pass = std::isfinite(row.max_rel_err) && row.max_rel_err < row.tol;
    return row;
}

// ---- composite block targets ----------------------------------------------------

// Runs the shared check recipe: one backward for the analytic gradients, then
// finite differences over the input tensors and every registered parameter.
template <typename Forward, typename Backward>
GradCheckRow check_composite(const std::string& label, ParamStore<double>& store,
                             std::vector<TensorT<double>*> block_inputs, Rng& rng,
                             Forward forward, Backward backward, bool corrupt) {
    store.zero_grads();
    const TensorT<double> out = forward();
    const TensorT<double> w = randt(rng, out.shape());
    std::vector<TensorT<double>> dinputs = backward(w);
    if (corrupt && !dinputs.empty() && dinputs[0].size() > 0) dinputs[0][0] += 0.5;

    // Differencing against the unperturbed output before the dot product
    // removes the large constant term (residual paths copy the input straight
    // through), which would otherwise eat most of the finite-difference
    // precision through cancellation.
    const auto s = [&]() { return dot(w, sub(forward(), out)); };
    GradCheckRow row{label, 0.0, 1e-4, false};
    const bool debug = std::getenv("CATFA_GRADCHECK_DEBUG") != nullptr;
    for (size_t k = 0; k < block_inputs.size(); ++k) {
        const double e = fd_max_rel_err(*block_inputs[k], dinputs[k], s);
        if (debug) std::fprintf(stderr, "  %s input%zu err=%.3e\n", label.c_str(), k, e);
        row.max_rel_err = std::max(row.max_rel_err, e);
    }
    for (const auto& p : store.items()) {
        const double e = fd_max_rel_err(p->value, p->grad, s);
        if (debug) std::fprintf(stderr, "  %s %s err=%.3e\n", label.c_str(), p->name.c_str(), e);
        row.max_rel_err = std::max(row.max_rel_err, e);
    }
    row.pass = std::isfinite(row.max_rel_err) && row.max_rel_err < row.tol;
    return row;
}

GradCheckRow check_block(const std::string& name, uint64_t seed, bool corrupt) {
    Rng rng(seed);
    ParamStore<double> store(seed + 1);

    if (name == "convnext_block") {
        auto p = ConvNeXtParams<double>::create(store, "b", 6);
        TensorT<double> x = randt(rng, {2, 6, 7, 5});
        ConvNeXtCache<double> cache;
        return check_composite(
            name, store, {&x}, rng,
            [&]() { return convnext_block(x, p, &cache); },
            [&](const TensorT<double>& w) {
                return std::vector<TensorT<double>>{convnext_block_backward(w, p, cache)};
            },
            corrupt);
    }
    if (name == "conv_g_next_block") {
        auto p = ConvGNeXtParams<double>::create(store, "b", 5);
        TensorT<double> x = randt(rng, {2, 5, 6, 4});
        ConvGNeXtCache<double> cache;
        return check_composite(
            name, store, {&x}, rng,
            [&]() { return conv_g_next_block(x, p, Mode::train, &cache); },
            [&](const TensorT<double>& w) {
                return std::vector<TensorT<double>>{conv_g_next_block_backward(w, p, cache)};
            },
            corrupt);
    }
    if (name == "patch_merge") {
        auto p = PatchMergeParams<double>::create(store, "b", 3, 6, 3, 2);
        TensorT<double> x = randt(rng, {2, 3, 8, 8});
        PatchMergeCache<double> cache;
        return check_composite(
            name, store, {&x}, rng,
            [&]() { return patch_merge(x, p, &cache); },
            [&](const TensorT<double>& w) {
                return std::vector<TensorT<double>>{patch_merge_backward(w, p, cache)};
            },
            corrupt);
    }
    if (name == "d_fcn") {
        auto p = DfcnParams<double>::create(store, "b", 6, 6, PadMode::zero);
        TensorT<double> z = randt(rng, {2, 6, 6, 5});
        TensorT<double> t = randt(rng, {2, 6, 6, 5});
        DfcnCache<double> cache;
        return check_composite(
            name, store, {&z, &t}, rng,
            [&]() { return d_fcn(z, t, p, &cache); },
            [&](const TensorT<double>& w) {
                auto [dz, dt] = d_fcn_backward(w, p, cache);
                return std::vector<TensorT<double>>{std::move(dz), std::move(dt)};
            },
            corrupt);
    }
    if (name == "attention") {
        auto p = AttentionParams<double>::create(store, "b", 8, 2, 4);
        TensorT<double> x = randt(rng, {1, 8, 8, 8});
        AttentionCache<double> cache;
        return check_composite(
            name, store, {&x}, rng,
            [&]() { return context_addition_attention(x, p, &cache); },
            [&](const TensorT<double>& w) {
                return std::vector<TensorT<double>>{
                    context_addition_attention_backward(w, p, cache)};
            },
            corrupt);
    }
    if (name == "cat_block") {
        auto p = CatBlockParams<double>::create(store, "b", 8, 2, 4, 8, PadMode::zero);
        TensorT<double> x = randt(rng, {1, 8, 8, 8});
        CatBlockCache<double> cache;
        return check_composite(
            name, store, {&x}, rng,
            [&]() { return cat_block(x, p, &cache); },
            [&](const TensorT<double>& w) {
                return std::vector<TensorT<double>>{cat_block_backward(w, p, cache)};
            },
            corrupt);
    }
    if (name == "cctfa") {
        auto p = CctfaParams<double>::create(store, "b", 6);
        TensorT<double> t = randt(rng, {2, 6, 5, 4});
        TensorT<double> c = randt(rng, {2, 6, 5, 4});
        CctfaCache<double> cache;
        return check_composite(
            name, store, {&t, &c}, rng,
            [&]() { return cctfa(t, c, p, &cache); },
            [&](const TensorT<double>& w) {
                auto [dt, dc] = cctfa_backward(w, p, cache);
                return std::vector<TensorT<double>>{std::move(dt), std::move(dc)};
            },
            corrupt);
    }
    if (name == "safg") {
        auto p = SafgParams<double>::create(store, "b", 6);
        TensorT<double> skip = randt(rng, {2, 6, 5, 4});
        TensorT<double> dec = randt(rng, {2, 6, 5, 4});
        SafgCache<double> cache;
        return check_composite(
            name, store, {&skip, &dec}, rng,
            [&]() { return safg(skip, dec, p, &cache); },
            [&](const TensorT<double>& w) {
                auto [ds, dd] = safg_backward(w, p, cache);
                return std::vector<TensorT<double>>{std::move(ds), std::move(dd)};
            },
            corrupt);
    }
    throw config_error("gradcheck: no fixture for block '" + name + "'");
}

// ---- full model target ------------------------------------------------------------

GradCheckRow check_model(uint64_t seed, bool corrupt) {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.input_hw = 32;
    Model<double> model(cfg, seed);
    Rng rng(seed + 7);
    TensorT<double> x = randt(rng, {1, 3, 32, 32}, 0.0, 1.0);
    TensorT<double> r({1, 1, 32, 32});
    for (int64_t i = 0; i < r.size(); ++i) r[i] = rng.uniform() < 0.35 ? 1.0 : 0.0;
    const double eps = 1e-6;

    model.params().zero_grads();
    ModelCache<double> cache;
    TensorT<double> prob = model.forward(x, Mode::train, &cache);
    TensorT<double> dp;
    generalized_dice_loss(prob, r, eps, &dp);
    model.backward(dp, cache);

    const auto s = [&]() {
        return generalized_dice_loss<double>(model.forward(x, Mode::train), r, eps, nullptr);
    };

    GradCheckRow row{"model", 0.0, 1e-3, false};
    const int64_t total = model.params().total_size();
    const int64_t stride = std::max<int64_t>(1, total / 100);
    int64_t index = 0;
    bool corrupted = false;
    for (const auto& p : model.params().items()) {
        for (int64_t i = 0; i < p->value.size(); ++i, ++index) {
            if (index % stride != 0) continue;
            double analytic = p->grad[i];
            if (corrupt && !corrupted) {
                analytic += 0.5;
                corrupted = true;
            }
            const double orig = p->value[i];
            const double h = 1e-5;
            p->value[i] = orig + h;
            const double sp = s();
            p->value[i] = orig - h;
            const double sm = s();
            p->value[i] = orig;
            row.max_rel_err = std::max(row.max_rel_err, rel_err(analytic, (sp - sm) / (2 * h)));
        }
    }
    row.pass = std::isfinite(row.max_rel_err) && row.max_rel_err < row.tol;
    return row;
}

const std::vector<std::string>& block_names() {
    static const std::vector<std::string> names = {
        "convnext_block", "conv_g_next_block", "patch_merge", "d_fcn",
        "attention",      "cat_block",         "cctfa",       "safg"};
    return names;
}

} // namespace

std::vector<GradCheckRow> grad_check(const std::string& scope, uint64_t seed, bool corrupt) {
    std::vector<GradCheckRow> rows;
    const bool all = scope == "all";
    bool matched = false;
    if (all || scope == "primitives") {
        matched = true;
        bool first = true;
        for (const std::string& name : vjp_primitive_names()) {
            rows.push_back(check_primitive(name, seed, corrupt && first));
            first = false;
        }
    }
    if (all || scope == "blocks") {
        matched = true;
        bool first = true;
        for (const std::string& name : block_names()) {
            rows.push_back(check_block(name, seed, corrupt && first));
            first = false;
        }
    }
    if (all || scope == "model") {
        matched = true;
        rows.push_back(check_model(seed, corrupt));
    }
    if (!matched)
        throw config_error("gradcheck: unknown scope '" + scope +
                           "' (expected primitives, blocks, model, or all)");
    return rows;
}

} // namespace catfa
