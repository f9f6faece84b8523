#pragma once

#include "catfa/ops.hpp"
#include "catfa/params.hpp"

namespace catfa {

// Fusion of the two encoder branches (channel-recalibrated product attention
// plus a collapsed spatial saliency map) and the gated decoder skip.

// ---- branch fusion -------------------------------------------------------------

template <typename T>
struct CctfaParams {
    Param<T>*w1, *b1;         // 1x1 on the token branch
    Param<T>*w2, *b2;         // 1x1 on the conv branch
    Param<T>*p1a_w, *p1a_b;   // 3x3, C -> C/2
    Param<T>*p1b_w, *p1b_b;   // 3x3, C/2 -> 1
    Param<T>*hp_w, *hp_b;     // 1x1, pooled 2 -> 1
    Param<T>*fuse_w, *fuse_b; // closing 1x1, C -> C
    int channels = 0;

    static CctfaParams create(ParamStore<T>& store, const std::string& prefix, int channels);
};

template <typename T>
struct CctfaCache {
    TensorT<T> t_out, c_out;
    TensorT<T> tp, cp, f, v;   // cross-channel pieces
    TensorT<T> a1, g1, g, hmap; // spatial pieces
    TensorT<T> summed;
};

// Channel attention: per-site channel softmax of the product of the two
// projected branches, rescaled per channel by the global average of the
// token branch. Returns B x C x H x W.
template <typename T>
TensorT<T> cross_channel_attention(const TensorT<T>& t_out, const TensorT<T>& c_out,
                                   const CctfaParams<T>& p, CctfaCache<T>* cache = nullptr);

// Spatial attention: product of a learned two-conv saliency stack and a
// projected channel pool, collapsed to one channel. Returns B x 1 x H x W.
template <typename T>
TensorT<T> spatial_attention(const TensorT<T>& c_out, const CctfaParams<T>& p,
                             CctfaCache<T>* cache = nullptr);

// Fused stage output: 1x1 projection of (channel attention + broadcast
// spatial attention). This is the feature map handed to the skip connections
// and to the next token-branch stage.
template <typename T>
TensorT<T> cctfa(const TensorT<T>& t_out, const TensorT<T>& c_out, const CctfaParams<T>& p,
                 CctfaCache<T>* cache = nullptr);

// Returns (d_t_out, d_c_out).
template <typename T>
std::pair<TensorT<T>, TensorT<T>> cctfa_backward(const TensorT<T>& dy, const CctfaParams<T>& p,
                                                 const CctfaCache<T>& cache);

// ---- gated skip ------------------------------------------------------------------

template <typename T>
struct SafgParams {
    Param<T>*gate_skip_w, *gate_skip_b; // 1x1, C -> 1
    Param<T>*gate_dec_w, *gate_dec_b;   // 1x1, C -> 1
    Param<T>*trans_dw_w, *trans_dw_b;   // depthwise 3x3
    Param<T>*trans_pw_w, *trans_pw_b;   // 1x1, C -> C
    int channels = 0;

    static SafgParams create(ParamStore<T>& store, const std::string& prefix, int channels);
};

template <typename T>
struct SafgCache {
    TensorT<T> skip, dec;
    TensorT<T> gsm;    // spatial softmax of the gate logits
    TensorT<T> g0;     // gelu(gsm), before peak normalization
    TensorT<T> gact;   // g0 / max(g0), the multiplier actually applied
    TensorT<T> t1;     // pre-gelu depthwise output
    TensorT<T> summed; // translated decoder features + skip
};

// D = g' * (translate(dec) + skip), where g' is a single-channel gate:
// gelu(softmax over all H*W sites of conv(skip) + conv(dec)), normalized per
// sample to unit peak and broadcast over channels. The peak normalization
// keeps the gate's relative (sparse) weighting while bounding its gain at 1,
// so a sharpening softmax cannot amplify the feature stream; without it the
// plane's mean decays as 1/(H*W) and the product collapses at initialization.
// Skip and decoder tensors must agree in every extent.
template <typename T>
TensorT<T> safg(const TensorT<T>& skip, const TensorT<T>& dec, const SafgParams<T>& p,
                SafgCache<T>* cache = nullptr);

// Returns (d_skip, d_dec).
template <typename T>
std::pair<TensorT<T>, TensorT<T>> safg_backward(const TensorT<T>& dy, const SafgParams<T>& p,
                                                const SafgCache<T>& cache);

} // namespace catfa
