#pragma once

#include <utility>

#include "catfa/ops.hpp"
#include "catfa/params.hpp"

namespace catfa {

// Token-space attention with two twists on the standard recipe: keys are
// enriched by a projection of the concatenated (key, query) context before
// use, and keys/values are spatially pooled by an integer factor R so the
// score and aggregation products shrink from O(N^2) to O(N^2 / R).

// B,C,H,W feature map -> B,N,C token matrix (N = H*W, row-major sites).
template <typename T>
TensorT<T> to_tokens(const TensorT<T>& x);

template <typename T>
TensorT<T> from_tokens(const TensorT<T>& t, int h, int w);

// Block extents (rows, cols) used to pool an h x w token grid by factor R.
// R must be a power of two; non-square factors put the larger extent on rows
// (8 -> 4x2, 2 -> 2x1).
std::pair<int, int> reduction_factors(int r);

// ---- scaled dot-product core ------------------------------------------------

// q: N x d, k: M x d, v: M x d -> N x d. Scores are scaled by 1/sqrt(d) and
// softmaxed per query row; `weights` (if given) receives the N x M attention
// distribution for reuse in the backward pass.
template <typename T>
TensorT<T> scaled_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                            TensorT<T>* weights = nullptr);

template <typename T>
void scaled_attention_backward(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                               const TensorT<T>& weights, const TensorT<T>& d_out,
                               TensorT<T>* dq, TensorT<T>* dk, TensorT<T>* dv);

// ---- key enrichment ----------------------------------------------------------

template <typename T>
struct CapCache {
    TensorT<T> cc;  // concat(k, q)
    TensorT<T> h1;  // pre-activation of the first projection
    TensorT<T> g;   // gelu(h1)
};

// k' = gelu(concat(k, q) . w1 + b1) . w2 + b2 + k, on token matrices
// (rank 2: N x C, or rank 3: B x N x C).
template <typename T>
TensorT<T> cap_enrich(const TensorT<T>& k, const TensorT<T>& q, const TensorT<T>& w1,
                      const TensorT<T>& b1, const TensorT<T>& w2, const TensorT<T>& b2,
                      CapCache<T>* cache = nullptr);

// Returns (dk, dq); accumulates into dw1/db1/dw2/db2 when non-null.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> cap_enrich_backward(
    const CapCache<T>& cache, const TensorT<T>& w1, const TensorT<T>& w2, const TensorT<T>& dkp,
    TensorT<T>* dw1, TensorT<T>* db1, TensorT<T>* dw2, TensorT<T>* db2);

// ---- spatial token reduction --------------------------------------------------

template <typename T>
struct SpatialReduceCache {
    TensorT<T> gathered; // B x N/R x (R*C) block-concatenated tokens
};

// tokens: B x N x C on an h x w grid -> B x N/R x C. Each pooling block's
// tokens are concatenated along channels and mapped back to width C by one
// linear layer (w_sr: (R*C) x C).
template <typename T>
TensorT<T> spatial_reduce(const TensorT<T>& tokens, int h, int w, int r, const TensorT<T>& w_sr,
                          const TensorT<T>& b_sr, SpatialReduceCache<T>* cache = nullptr);

template <typename T>
TensorT<T> spatial_reduce_backward(const SpatialReduceCache<T>& cache, int h, int w, int r,
                                   const TensorT<T>& w_sr, const TensorT<T>& d_out,
                                   TensorT<T>* dw_sr, TensorT<T>* db_sr);

// Multiply-add count of the score (Q.K^T) product at the given geometry;
// the aggregation (A.V) product costs the same.
uint64_t attention_score_madds(int64_t n_tokens, int64_t channels, int reduction);

// ---- full attention module ---------------------------------------------------

template <typename T>
struct AttentionParams {
    Param<T>*wq, *bq, *wk, *bk, *wv, *bv;
    Param<T>*cap_w1, *cap_b1, *cap_w2, *cap_b2;
    Param<T>*sr_w, *sr_b;          // shared by the key and value reductions
    Param<T>*wo, *bo, *wl, *bl;    // head-merge projection and output linear
    int channels = 0;
    int heads = 1;
    int reduction = 1;

    static AttentionParams create(ParamStore<T>& store, const std::string& prefix, int channels,
                                  int heads, int reduction);
};

template <typename T>
struct AttentionCache {
    int h = 0, w = 0;
    TensorT<T> x;                    // input tokens
    TensorT<T> q, k, v;
    CapCache<T> cap;
    SpatialReduceCache<T> sr_k, sr_v;
    TensorT<T> khat, vhat;
    std::vector<TensorT<T>> attn;    // per (batch, head) attention weights
    TensorT<T> heads_cat;
    TensorT<T> o;                    // after the head-merge projection
};

// e: B x C x H x W -> B x C x H x W.
template <typename T>
TensorT<T> context_addition_attention(const TensorT<T>& e, const AttentionParams<T>& p,
                                      AttentionCache<T>* cache = nullptr);

// Accumulates parameter gradients, returns the input cotangent.
template <typename T>
TensorT<T> context_addition_attention_backward(const TensorT<T>& dy, const AttentionParams<T>& p,
                                               const AttentionCache<T>& cache);

// ---- token mixer (replaces the MLP): pw1 -> depthwise 3x3 -> gelu -> pw2 ------

template <typename T>
struct DfcnParams {
    Param<T>*ln_g, *ln_b;
    Param<T>*pw1_w, *pw1_b; // 1x1 conv C -> hidden
    Param<T>*dw_w, *dw_b;   // depthwise 3x3 on hidden
    Param<T>*pw2_w, *pw2_b; // 1x1 conv hidden -> C
    PadMode pad = PadMode::zero;
    double ln_eps = 1e-6;

    static DfcnParams create(ParamStore<T>& store, const std::string& prefix, int channels,
                             int hidden, PadMode pad);
};

template <typename T>
struct DfcnCache {
    TensorT<T> sum;
    NormCache<T> ln;
    TensorT<T> ln_out, h1, h2;
};

// x_out = pw2(gelu(dw3x3(pw1(LN(z + t_in))))). The zero-padded depthwise
// convolution doubles as the positional signal: borders are visible to it.
template <typename T>
TensorT<T> d_fcn(const TensorT<T>& z, const TensorT<T>& t_in, const DfcnParams<T>& p,
                 DfcnCache<T>* cache = nullptr);

// Returns (dz, dt_in) — identical tensors here, but kept separate for clarity.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> d_fcn_backward(const TensorT<T>& dy, const DfcnParams<T>& p,
                                                 const DfcnCache<T>& cache);

// ---- transformer block --------------------------------------------------------

template <typename T>
struct CatBlockParams {
    AttentionParams<T> attn;
    DfcnParams<T> dfcn;

    static CatBlockParams create(ParamStore<T>& store, const std::string& prefix, int channels,
                                 int heads, int reduction, int dfcn_hidden, PadMode pad);
};

template <typename T>
struct CatBlockCache {
    AttentionCache<T> attn;
    DfcnCache<T> dfcn;
};

// out = t_in + d_fcn(attention(t_in), t_in); the attention residual lives
// inside d_fcn's LN(z + t_in) sum.
template <typename T>
TensorT<T> cat_block(const TensorT<T>& t_in, const CatBlockParams<T>& p,
                     CatBlockCache<T>* cache = nullptr);

template <typename T>
TensorT<T> cat_block_backward(const TensorT<T>& dy, const CatBlockParams<T>& p,
                              const CatBlockCache<T>& cache);

} // namespace catfa
