#pragma once

#include "catfa/ops.hpp"
#include "catfa/params.hpp"

namespace catfa {

// Convolutional building blocks: the inverted-bottleneck residual block with
// a 7x7 depthwise mixer (layer-normed for the encoder branch, batch-normed
// with an extra width-preserving 1x1 and an output GELU for the decoder), and
// the strided patch-merging downsamplers.

// ---- encoder residual block: x + pw2(gelu(pw1(LN(dw7(x))))) -------------------

template <typename T>
struct ConvNeXtParams {
    Param<T>*dw_w, *dw_b;   // depthwise 7x7
    Param<T>*ln_g, *ln_b;
    Param<T>*pw1_w, *pw1_b; // 1x1 conv C -> 4C
    Param<T>*pw2_w, *pw2_b; // 1x1 conv 4C -> C
    double ln_eps = 1e-6;

    static ConvNeXtParams create(ParamStore<T>& store, const std::string& prefix, int channels);
};

template <typename T>
struct ConvNeXtCache {
    TensorT<T> x, dw_out;
    NormCache<T> ln;
    TensorT<T> ln_out, h1;
};

template <typename T>
TensorT<T> convnext_block(const TensorT<T>& x, const ConvNeXtParams<T>& p,
                          ConvNeXtCache<T>* cache = nullptr);

template <typename T>
TensorT<T> convnext_block_backward(const TensorT<T>& dy, const ConvNeXtParams<T>& p,
                                   const ConvNeXtCache<T>& cache);

// ---- decoder residual block: gelu(x + extra(pw2(gelu(pw1(BN(dw7(x))))))) ------

template <typename T>
struct ConvGNeXtParams {
    Param<T>*dw_w, *dw_b;
    Param<T>*bn_g, *bn_b;
    Param<T>*pw1_w, *pw1_b;     // 1x1 conv C -> 4C
    Param<T>*pw2_w, *pw2_b;     // 1x1 conv 4C -> C
    Param<T>*extra_w, *extra_b; // width-preserving 1x1 closing the branch
    BatchNormState<T> bn_state;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    static ConvGNeXtParams create(ParamStore<T>& store, const std::string& prefix, int channels);
};

template <typename T>
struct ConvGNeXtCache {
    TensorT<T> x, dw_out;
    NormCache<T> bn;
    TensorT<T> bn_out, h1, pw2_out, u;
};

// Train mode folds batch statistics into p.bn_state, hence the mutable params.
template <typename T>
TensorT<T> conv_g_next_block(const TensorT<T>& x, ConvGNeXtParams<T>& p, Mode mode,
                             ConvGNeXtCache<T>* cache = nullptr);

// Backward through a train-mode evaluation.
template <typename T>
TensorT<T> conv_g_next_block_backward(const TensorT<T>& dy, const ConvGNeXtParams<T>& p,
                                      const ConvGNeXtCache<T>& cache);

// ---- strided patch merging: conv (overlapping or exact tiling) + LN -----------

template <typename T>
struct PatchMergeParams {
    Param<T>*w, *b;
    Param<T>*ln_g, *ln_b;
    int kernel = 0, stride = 0, padding = 0;
    double ln_eps = 1e-6;

    bool overlap() const { return stride < kernel; }

    // Overlapping merges (stride < kernel) pad by kernel/2; exact tilings
    // (stride == kernel) use no padding.
    static PatchMergeParams create(ParamStore<T>& store, const std::string& prefix, int in_ch,
                                   int out_ch, int kernel, int stride);
};

template <typename T>
struct PatchMergeCache {
    TensorT<T> x, conv_out;
    NormCache<T> ln;
};

template <typename T>
TensorT<T> patch_merge(const TensorT<T>& x, const PatchMergeParams<T>& p,
                       PatchMergeCache<T>* cache = nullptr);

template <typename T>
TensorT<T> patch_merge_backward(const TensorT<T>& dy, const PatchMergeParams<T>& p,
                                const PatchMergeCache<T>& cache);

} // namespace catfa
