#include "catfa/blocks.hpp"

namespace catfa {

namespace {

template <typename T>
TensorT<T>& grad_of(Param<T>* p) {
    return ParamStore<T>::grad_of(p);
}

} // namespace

// ---- encoder residual block ---------------------------------------------------

template <typename T>
ConvNeXtParams<T> ConvNeXtParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                            int channels) {
    ConvNeXtParams<T> p;
    p.dw_w = store.create(prefix + ".dw_w", {channels, 7, 7}, Init::trunc_normal);
    p.dw_b = store.create(prefix + ".dw_b", {channels}, Init::zeros);
    p.ln_g = store.create(prefix + ".ln_g", {channels}, Init::ones);
    p.ln_b = store.create(prefix + ".ln_b", {channels}, Init::zeros);
    p.pw1_w = store.create(prefix + ".pw1_w", {4 * channels, channels, 1, 1}, Init::trunc_normal);
    p.pw1_b = store.create(prefix + ".pw1_b", {4 * channels}, Init::zeros);
    p.pw2_w = store.create(prefix + ".pw2_w", {channels, 4 * channels, 1, 1}, Init::trunc_normal);
    p.pw2_b = store.create(prefix + ".pw2_b", {channels}, Init::zeros);
    return p;
}

template <typename T>
TensorT<T> convnext_block(const TensorT<T>& x, const ConvNeXtParams<T>& p,
                          ConvNeXtCache<T>* cache) {
    TensorT<T> dw_out = depthwise_conv2d(x, p.dw_w->value, p.dw_b->value, 1, 3);
    NormCache<T> ln_cache;
    TensorT<T> ln_out =
        layer_norm(dw_out, p.ln_g->value, p.ln_b->value, p.ln_eps, cache ? &ln_cache : nullptr);
    TensorT<T> h1 = conv2d(ln_out, p.pw1_w->value, p.pw1_b->value, 1, 0);
    TensorT<T> branch = conv2d(gelu(h1), p.pw2_w->value, p.pw2_b->value, 1, 0);
    TensorT<T> y = add(x, branch);
    if (cache) {
        cache->x = x;
        cache->dw_out = std::move(dw_out);
        cache->ln = std::move(ln_cache);
        cache->ln_out = std::move(ln_out);
        cache->h1 = std::move(h1);
    }
    return y;
}

template <typename T>
TensorT<T> convnext_block_backward(const TensorT<T>& dy, const ConvNeXtParams<T>& p,
                                   const ConvNeXtCache<T>& cache) {
    TensorT<T> g1 = gelu(cache.h1);
    TensorT<T> dg1 = conv2d_backward(g1, p.pw2_w->value, 1, 0, PadMode::zero, dy,
                                     &grad_of(p.pw2_w), &grad_of(p.pw2_b));
    TensorT<T> dh1 = gelu_backward(cache.h1, dg1);
    TensorT<T> dln = conv2d_backward(cache.ln_out, p.pw1_w->value, 1, 0, PadMode::zero, dh1,
                                     &grad_of(p.pw1_w), &grad_of(p.pw1_b));
    TensorT<T> ddw =
        layer_norm_backward(cache.ln, p.ln_g->value, dln, &grad_of(p.ln_g), &grad_of(p.ln_b));
    TensorT<T> dx = depthwise_conv2d_backward(cache.x, p.dw_w->value, 1, 3, PadMode::zero, ddw,
                                              &grad_of(p.dw_w), &grad_of(p.dw_b));
    add_into(dx, dy); // residual path
    return dx;
}

// ---- decoder residual block -----------------------------------------------------

template <typename T>
ConvGNeXtParams<T> ConvGNeXtParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                              int channels) {
    ConvGNeXtParams<T> p;
    p.dw_w = store.create(prefix + ".dw_w", {channels, 7, 7}, Init::trunc_normal);
    p.dw_b = store.create(prefix + ".dw_b", {channels}, Init::zeros);
    p.bn_g = store.create(prefix + ".bn_g", {channels}, Init::ones);
    p.bn_b = store.create(prefix + ".bn_b", {channels}, Init::zeros);
    p.pw1_w = store.create(prefix + ".pw1_w", {4 * channels, channels, 1, 1}, Init::trunc_normal);
    p.pw1_b = store.create(prefix + ".pw1_b", {4 * channels}, Init::zeros);
    p.pw2_w = store.create(prefix + ".pw2_w", {channels, 4 * channels, 1, 1}, Init::trunc_normal);
    p.pw2_b = store.create(prefix + ".pw2_b", {channels}, Init::zeros);
    p.extra_w = store.create(prefix + ".extra_w", {channels, channels, 1, 1}, Init::trunc_normal);
    p.extra_b = store.create(prefix + ".extra_b", {channels}, Init::zeros);
    return p;
}

template <typename T>
TensorT<T> conv_g_next_block(const TensorT<T>& x, ConvGNeXtParams<T>& p, Mode mode,
                             ConvGNeXtCache<T>* cache) {
    TensorT<T> dw_out = depthwise_conv2d(x, p.dw_w->value, p.dw_b->value, 1, 3);
    NormCache<T> bn_cache;
    TensorT<T> bn_out = batch_norm(dw_out, p.bn_g->value, p.bn_b->value, p.bn_state, mode,
                                   p.bn_eps, p.bn_momentum, cache ? &bn_cache : nullptr);
    TensorT<T> h1 = conv2d(bn_out, p.pw1_w->value, p.pw1_b->value, 1, 0);
    TensorT<T> pw2_out = conv2d(gelu(h1), p.pw2_w->value, p.pw2_b->value, 1, 0);
    TensorT<T> branch = conv2d(pw2_out, p.extra_w->value, p.extra_b->value, 1, 0);
    TensorT<T> u = add(x, branch);
    TensorT<T> y = gelu(u);
    if (cache) {
        cache->x = x;
        cache->dw_out = std::move(dw_out);
        cache->bn = std::move(bn_cache);
        cache->bn_out = std::move(bn_out);
        cache->h1 = std::move(h1);
        cache->pw2_out = std::move(pw2_out);
        cache->u = std::move(u);
    }
    return y;
}

template <typename T>
TensorT<T> conv_g_next_block_backward(const TensorT<T>& dy, const ConvGNeXtParams<T>& p,
                                      const ConvGNeXtCache<T>& cache) {
    TensorT<T> du = gelu_backward(cache.u, dy);
    TensorT<T> dpw2 = conv2d_backward(cache.pw2_out, p.extra_w->value, 1, 0, PadMode::zero, du,
                                      &grad_of(p.extra_w), &grad_of(p.extra_b));
    TensorT<T> g1 = gelu(cache.h1);
    TensorT<T> dg1 = conv2d_backward(g1, p.pw2_w->value, 1, 0, PadMode::zero, dpw2,
                                     &grad_of(p.pw2_w), &grad_of(p.pw2_b));
    TensorT<T> dh1 = gelu_backward(cache.h1, dg1);
    TensorT<T> dbn = conv2d_backward(cache.bn_out, p.pw1_w->value, 1, 0, PadMode::zero, dh1,
                                     &grad_of(p.pw1_w), &grad_of(p.pw1_b));
    TensorT<T> ddw =
        batch_norm_backward(cache.bn, p.bn_g->value, dbn, &grad_of(p.bn_g), &grad_of(p.bn_b));
    TensorT<T> dx = depthwise_conv2d_backward(cache.x, p.dw_w->value, 1, 3, PadMode::zero, ddw,
                                              &grad_of(p.dw_w), &grad_of(p.dw_b));
    add_into(dx, du); // residual path
    return dx;
}

// ---- strided patch merging ----------------------------------------------------------

template <typename T>
PatchMergeParams<T> PatchMergeParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                                int in_ch, int out_ch, int kernel, int stride) {
    if (stride > kernel)
        throw config_error("patch_merge: stride " + std::to_string(stride) +
                           " exceeds kernel " + std::to_string(kernel));
    PatchMergeParams<T> p;
    p.kernel = kernel;
    p.stride = stride;
    p.padding = stride < kernel ? kernel / 2 : 0;
    p.w = store.create(prefix + ".w", {out_ch, in_ch, kernel, kernel}, Init::trunc_normal);
    p.b = store.create(prefix + ".b", {out_ch}, Init::zeros);
    p.ln_g = store.create(prefix + ".ln_g", {out_ch}, Init::ones);
    p.ln_b = store.create(prefix + ".ln_b", {out_ch}, Init::zeros);
    return p;
}

template <typename T>
TensorT<T> patch_merge(const TensorT<T>& x, const PatchMergeParams<T>& p,
                       PatchMergeCache<T>* cache) {
    const int h = x.dim(2), w = x.dim(3);
    if (h % p.stride != 0 || w % p.stride != 0)
        throw shape_error("patch_merge: spatial extents " + std::to_string(h) + "x" +
                          std::to_string(w) + " must be divisible by stride " +
                          std::to_string(p.stride));
    TensorT<T> conv_out = conv2d(x, p.w->value, p.b->value, p.stride, p.padding);
    NormCache<T> ln_cache;
    TensorT<T> y =
        layer_norm(conv_out, p.ln_g->value, p.ln_b->value, p.ln_eps, cache ? &ln_cache : nullptr);
    if (cache) {
        cache->x = x;
        cache->conv_out = std::move(conv_out);
        cache->ln = std::move(ln_cache);
    }
    return y;
}

template <typename T>
TensorT<T> patch_merge_backward(const TensorT<T>& dy, const PatchMergeParams<T>& p,
                                const PatchMergeCache<T>& cache) {
    TensorT<T> dconv =
        layer_norm_backward(cache.ln, p.ln_g->value, dy, &grad_of(p.ln_g), &grad_of(p.ln_b));
    return conv2d_backward(cache.x, p.w->value, p.stride, p.padding, PadMode::zero, dconv,
                           &grad_of(p.w), &grad_of(p.b));
}

// ---- explicit instantiations ---------------------------------------------------------

#define CATFA_INSTANTIATE_BLOCKS(T)                                                               \
    template struct ConvNeXtParams<T>;                                                            \
    template TensorT<T> convnext_block<T>(const TensorT<T>&, const ConvNeXtParams<T>&,            \
                                          ConvNeXtCache<T>*);                                     \
    template TensorT<T> convnext_block_backward<T>(const TensorT<T>&, const ConvNeXtParams<T>&,   \
                                                   const ConvNeXtCache<T>&);                      \
    template struct ConvGNeXtParams<T>;                                                           \
    template TensorT<T> conv_g_next_block<T>(const TensorT<T>&, ConvGNeXtParams<T>&, Mode,        \
                                             ConvGNeXtCache<T>*);                                 \
    template TensorT<T> conv_g_next_block_backward<T>(const TensorT<T>&,                          \
                                                      const ConvGNeXtParams<T>&,                  \
                                                      const ConvGNeXtCache<T>&);                  \
    template struct PatchMergeParams<T>;                                                          \
    template TensorT<T> patch_merge<T>(const TensorT<T>&, const PatchMergeParams<T>&,             \
                                       PatchMergeCache<T>*);                                      \
    template TensorT<T> patch_merge_backward<T>(const TensorT<T>&, const PatchMergeParams<T>&,    \
                                                const PatchMergeCache<T>&);

CATFA_INSTANTIATE_BLOCKS(float)
CATFA_INSTANTIATE_BLOCKS(double)

#undef CATFA_INSTANTIATE_BLOCKS

} // namespace catfa
