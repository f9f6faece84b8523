#include "catfa/attention.hpp"

#include <cmath>

namespace catfa {

namespace {

template <typename T>
TensorT<T>& grad_of(Param<T>* p) {
    return ParamStore<T>::grad_of(p);
}

// Copy head columns [c0, c0+d) of one batch row block into an N x d matrix.
template <typename T>
TensorT<T> head_slice(const TensorT<T>& t, int b, int c0, int d) {
    const int n = t.dim(1), c = t.dim(2);
    TensorT<T> out({n, d});
    const T* src = t.data() + static_cast<int64_t>(b) * n * c;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at2(i, j) = src[static_cast<int64_t>(i) * c + c0 + j];
    return out;
}

template <typename T>
void head_scatter_add(TensorT<T>& t, int b, int c0, const TensorT<T>& m) {
    const int n = t.dim(1), c = t.dim(2);
    const int d = m.dim(1);
    T* dst = t.data() + static_cast<int64_t>(b) * n * c;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) dst[static_cast<int64_t>(i) * c + c0 + j] += m.at2(i, j);
}

} // namespace

template <typename T>
TensorT<T> to_tokens(const TensorT<T>& x) {
    if (x.rank() != 4) throw shape_error("to_tokens: expected B,C,H,W input");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int n = h * w;
    TensorT<T> t({b, n, c});
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const T* plane = &x.at4(bi, ci, 0, 0);
            for (int s = 0; s < n; ++s) t.at3(bi, s, ci) = plane[s];
        }
    return t;
}

template <typename T>
TensorT<T> from_tokens(const TensorT<T>& t, int h, int w) {
    if (t.rank() != 3) throw shape_error("from_tokens: expected B,N,C input");
    const int b = t.dim(0), n = t.dim(1), c = t.dim(2);
    if (n != h * w)
        throw shape_error("from_tokens: token count " + std::to_string(n) + " != " +
                          std::to_string(h) + "x" + std::to_string(w));
    TensorT<T> x({b, c, h, w});
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            T* plane = &x.at4(bi, ci, 0, 0);
            for (int s = 0; s < n; ++s) plane[s] = t.at3(bi, s, ci);
        }
    return x;
}

std::pair<int, int> reduction_factors(int r) {
    if (r < 1 || (r & (r - 1)) != 0)
        throw config_error("spatial reduction factor must be a power of two >= 1, got " +
                           std::to_string(r));
    int log2r = 0;
    for (int v = r; v > 1; v >>= 1) ++log2r;
    const int rh = 1 << ((log2r + 1) / 2);
    return {rh, r / rh};
}

// ---- scaled dot-product core -------------------------------------------------

template <typename T>
TensorT<T> scaled_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                            TensorT<T>* weights) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw shape_error("scaled_attention: rank-2 token matrices expected");
    const int n = q.dim(0), d = q.dim(1), m = k.dim(0);
    if (k.dim(1) != d || v.dim(0) != m || v.dim(1) != d)
        throw shape_error("scaled_attention: q " + q.shape_str() + ", k " + k.shape_str() +
                          ", v " + v.shape_str() + " are inconsistent");
    const T scale = T(1) / std::sqrt(T(d));
    TensorT<T> s({n, m});
    gemm_nt(n, d, m, q.data(), k.data(), s.data(), false);
    for (int64_t i = 0; i < s.size(); ++i) s[i] *= scale;
    TensorT<T> a = softmax(s, 1);
    TensorT<T> out({n, d});
    gemm_nn(n, m, d, a.data(), v.data(), out.data(), false);
    if (weights) *weights = a;
    return out;
}

template <typename T>
void scaled_attention_backward(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                               const TensorT<T>& weights, const TensorT<T>& d_out,
                               TensorT<T>* dq, TensorT<T>* dk, TensorT<T>* dv) {
    const int n = q.dim(0), d = q.dim(1), m = k.dim(0);
    const T scale = T(1) / std::sqrt(T(d));
    TensorT<T> da({n, m});
    gemm_nt(n, d, m, d_out.data(), v.data(), da.data(), false);
    if (dv) {
        *dv = TensorT<T>({m, d});
        gemm_tn(m, n, d, weights.data(), d_out.data(), dv->data(), false);
    }
    TensorT<T> ds = softmax_backward(weights, da, 1);
    if (dq) {
        *dq = TensorT<T>({n, d});
        gemm_nn(n, m, d, ds.data(), k.data(), dq->data(), false);
        for (int64_t i = 0; i < dq->size(); ++i) (*dq)[i] *= scale;
    }
    if (dk) {
        *dk = TensorT<T>({m, d});
        gemm_tn(m, n, d, ds.data(), q.data(), dk->data(), false);
        for (int64_t i = 0; i < dk->size(); ++i) (*dk)[i] *= scale;
    }
}

// ---- key enrichment ------------------------------------------------------------

template <typename T>
TensorT<T> cap_enrich(const TensorT<T>& k, const TensorT<T>& q, const TensorT<T>& w1,
                      const TensorT<T>& b1, const TensorT<T>& w2, const TensorT<T>& b2,
                      CapCache<T>* cache) {
    check_same_shape(k, q, "cap_enrich");
    const int axis = k.rank() - 1;
    TensorT<T> cc = concat<T>({k, q}, axis);
    TensorT<T> h1 = linear(cc, w1, b1);
    TensorT<T> g = gelu(h1);
    TensorT<T> kp = add(linear(g, w2, b2), k);
    if (cache) {
        cache->cc = std::move(cc);
        cache->h1 = std::move(h1);
        cache->g = std::move(g);
    }
    return kp;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> cap_enrich_backward(
    const CapCache<T>& cache, const TensorT<T>& w1, const TensorT<T>& w2, const TensorT<T>& dkp,
    TensorT<T>* dw1, TensorT<T>* db1, TensorT<T>* dw2, TensorT<T>* db2) {
    TensorT<T> dg = linear_backward(cache.g, w2, dkp, dw2, db2);
    TensorT<T> dh1 = gelu_backward(cache.h1, dg);
    TensorT<T> dcc = linear_backward(cache.cc, w1, dh1, dw1, db1);
    const int axis = dcc.rank() - 1;
    const int c = dcc.dim(axis) / 2;
    TensorT<T> dk = slice(dcc, axis, 0, c);
    TensorT<T> dq = slice(dcc, axis, c, c);
    add_into(dk, dkp); // residual branch
    return {std::move(dk), std::move(dq)};
}

// ---- spatial token reduction ----------------------------------------------------

namespace {

template <typename T>
TensorT<T> gather_blocks(const TensorT<T>& tokens, int h, int w, int rh, int rw) {
    const int b = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);
    if (n != h * w)
        throw shape_error("spatial_reduce: token count " + std::to_string(n) +
                          " does not match grid " + std::to_string(h) + "x" + std::to_string(w));
    if (h % rh != 0 || w % rw != 0)
        throw shape_error("spatial_reduce: grid " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by pooling block " + std::to_string(rh) + "x" +
                          std::to_string(rw) + "; pad the grid to multiples of " +
                          std::to_string(rh) + "x" + std::to_string(rw));
    const int hb = h / rh, wb = w / rw, r = rh * rw;
    TensorT<T> out({b, hb * wb, r * c});
    for (int bi = 0; bi < b; ++bi)
        for (int by = 0; by < hb; ++by)
            for (int bx = 0; bx < wb; ++bx) {
                const int bidx = by * wb + bx;
                for (int dy = 0; dy < rh; ++dy)
                    for (int dx = 0; dx < rw; ++dx) {
                        const int tok = (by * rh + dy) * w + bx * rw + dx;
                        const int slot = dy * rw + dx;
                        const T* src = &tokens.at3(bi, tok, 0);
                        T* dst = &out.at3(bi, bidx, slot * c);
                        for (int ci = 0; ci < c; ++ci) dst[ci] = src[ci];
                    }
            }
    return out;
}

template <typename T>
TensorT<T> scatter_blocks(const TensorT<T>& gathered, int h, int w, int rh, int rw, int c) {
    const int b = gathered.dim(0);
    const int hb = h / rh, wb = w / rw;
    TensorT<T> out({b, h * w, c});
    for (int bi = 0; bi < b; ++bi)
        for (int by = 0; by < hb; ++by)
            for (int bx = 0; bx < wb; ++bx) {
                const int bidx = by * wb + bx;
                for (int dy = 0; dy < rh; ++dy)
                    for (int dx = 0; dx < rw; ++dx) {
                        const int tok = (by * rh + dy) * w + bx * rw + dx;
                        const int slot = dy * rw + dx;
                        const T* src = &gathered.at3(bi, bidx, slot * c);
                        T* dst = &out.at3(bi, tok, 0);
                        for (int ci = 0; ci < c; ++ci) dst[ci] = src[ci];
                    }
            }
    return out;
}

} // namespace

template <typename T>
TensorT<T> spatial_reduce(const TensorT<T>& tokens, int h, int w, int r, const TensorT<T>& w_sr,
                          const TensorT<T>& b_sr, SpatialReduceCache<T>* cache) {
    if (tokens.rank() != 3) throw shape_error("spatial_reduce: expected B,N,C tokens");
    const auto [rh, rw] = reduction_factors(r);
    const int c = tokens.dim(2);
    TensorT<T> gathered = gather_blocks(tokens, h, w, rh, rw);
    if (w_sr.dim(0) != r * c || w_sr.dim(1) != c)
        throw shape_error("spatial_reduce: weight must be " + std::to_string(r * c) + "x" +
                          std::to_string(c) + ", got " + w_sr.shape_str());
    TensorT<T> out = linear(gathered, w_sr, b_sr);
    if (cache) cache->gathered = std::move(gathered);
    return out;
}

template <typename T>
TensorT<T> spatial_reduce_backward(const SpatialReduceCache<T>& cache, int h, int w, int r,
                                   const TensorT<T>& w_sr, const TensorT<T>& d_out,
                                   TensorT<T>* dw_sr, TensorT<T>* db_sr) {
    const auto [rh, rw] = reduction_factors(r);
    const int c = w_sr.dim(1);
    TensorT<T> dgathered = linear_backward(cache.gathered, w_sr, d_out, dw_sr, db_sr);
    return scatter_blocks(dgathered, h, w, rh, rw, c);
}

uint64_t attention_score_madds(int64_t n_tokens, int64_t channels, int reduction) {
    reduction_factors(reduction); // validates
    if (n_tokens % reduction != 0)
        throw config_error("attention_score_madds: token count " + std::to_string(n_tokens) +
                           " not divisible by reduction " + std::to_string(reduction));
    return static_cast<uint64_t>(n_tokens) * static_cast<uint64_t>(n_tokens / reduction) *
           static_cast<uint64_t>(channels);
}

// ---- full attention module -------------------------------------------------------

template <typename T>
AttentionParams<T> AttentionParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                              int channels, int heads, int reduction) {
    if (heads < 1 || channels % heads != 0)
        throw config_error("attention: heads (" + std::to_string(heads) +
                           ") must divide channels (" + std::to_string(channels) + ")");
    reduction_factors(reduction);
    AttentionParams<T> p;
    p.channels = channels;
    p.heads = heads;
    p.reduction = reduction;
    const int c = channels;
    p.wq = store.create(prefix + ".wq", {c, c}, Init::trunc_normal);
    p.bq = store.create(prefix + ".bq", {c}, Init::zeros);
    p.wk = store.create(prefix + ".wk", {c, c}, Init::trunc_normal);
    p.bk = store.create(prefix + ".bk", {c}, Init::zeros);
    p.wv = store.create(prefix + ".wv", {c, c}, Init::trunc_normal);
    p.bv = store.create(prefix + ".bv", {c}, Init::zeros);
    p.cap_w1 = store.create(prefix + ".cap_w1", {2 * c, c}, Init::trunc_normal);
    p.cap_b1 = store.create(prefix + ".cap_b1", {c}, Init::zeros);
    p.cap_w2 = store.create(prefix + ".cap_w2", {c, c}, Init::trunc_normal);
    p.cap_b2 = store.create(prefix + ".cap_b2", {c}, Init::zeros);
    p.sr_w = store.create(prefix + ".sr_w", {reduction * c, c}, Init::trunc_normal);
    p.sr_b = store.create(prefix + ".sr_b", {c}, Init::zeros);
    p.wo = store.create(prefix + ".wo", {c, c}, Init::trunc_normal);
    p.bo = store.create(prefix + ".bo", {c}, Init::zeros);
    p.wl = store.create(prefix + ".wl", {c, c}, Init::trunc_normal);
    p.bl = store.create(prefix + ".bl", {c}, Init::zeros);
    return p;
}

template <typename T>
TensorT<T> context_addition_attention(const TensorT<T>& e, const AttentionParams<T>& p,
                                      AttentionCache<T>* cache) {
    if (e.rank() != 4) throw shape_error("attention: expected B,C,H,W input");
    const int b = e.dim(0), c = e.dim(1), h = e.dim(2), w = e.dim(3);
    if (c != p.channels)
        throw shape_error("attention: input channels " + std::to_string(c) +
                          " != configured channels " + std::to_string(p.channels));
    const int n = h * w;
    const int heads = p.heads, d = c / heads;

    TensorT<T> x = to_tokens(e);
    TensorT<T> q = linear(x, p.wq->value, p.bq->value);
    TensorT<T> k = linear(x, p.wk->value, p.bk->value);
    TensorT<T> v = linear(x, p.wv->value, p.bv->value);

    CapCache<T> cap_cache;
    TensorT<T> kp = cap_enrich(k, q, p.cap_w1->value, p.cap_b1->value, p.cap_w2->value,
                               p.cap_b2->value, cache ? &cap_cache : nullptr);

    SpatialReduceCache<T> srk, srv;
    TensorT<T> khat = spatial_reduce(kp, h, w, p.reduction, p.sr_w->value, p.sr_b->value,
                                     cache ? &srk : nullptr);
    TensorT<T> vhat = spatial_reduce(v, h, w, p.reduction, p.sr_w->value, p.sr_b->value,
                                     cache ? &srv : nullptr);

    TensorT<T> heads_cat({b, n, c});
    std::vector<TensorT<T>> attn;
    if (cache) attn.reserve(static_cast<size_t>(b) * heads);
    for (int bi = 0; bi < b; ++bi)
        for (int j = 0; j < heads; ++j) {
            const int c0 = j * d;
            TensorT<T> qh = head_slice(q, bi, c0, d);
            TensorT<T> kh = head_slice(khat, bi, c0, d);
            TensorT<T> vh = head_slice(vhat, bi, c0, d);
            TensorT<T> weights;
            TensorT<T> hj = scaled_attention(qh, kh, vh, cache ? &weights : nullptr);
            T* dst = heads_cat.data() + static_cast<int64_t>(bi) * n * c;
            for (int i = 0; i < n; ++i)
                for (int jj = 0; jj < d; ++jj)
                    dst[static_cast<int64_t>(i) * c + c0 + jj] = hj.at2(i, jj);
            if (cache) attn.push_back(std::move(weights));
        }

    TensorT<T> o = linear(heads_cat, p.wo->value, p.bo->value);
    TensorT<T> z = linear(o, p.wl->value, p.bl->value);

    if (cache) {
        cache->h = h;
        cache->w = w;
        cache->x = std::move(x);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->cap = std::move(cap_cache);
        cache->sr_k = std::move(srk);
        cache->sr_v = std::move(srv);
        cache->khat = std::move(khat);
        cache->vhat = std::move(vhat);
        cache->attn = std::move(attn);
        cache->heads_cat = std::move(heads_cat);
        cache->o = std::move(o);
    }
    return from_tokens(z, h, w);
}

template <typename T>
TensorT<T> context_addition_attention_backward(const TensorT<T>& dy, const AttentionParams<T>& p,
                                               const AttentionCache<T>& cache) {
    const int h = cache.h, w = cache.w;
    const int b = dy.dim(0), c = dy.dim(1);
    const int n = h * w;
    const int heads = p.heads, d = c / heads;

    TensorT<T> dz = to_tokens(dy);
    TensorT<T> d_o = linear_backward(cache.o, p.wl->value, dz, &grad_of(p.wl), &grad_of(p.bl));
    TensorT<T> dheads =
        linear_backward(cache.heads_cat, p.wo->value, d_o, &grad_of(p.wo), &grad_of(p.bo));

    TensorT<T> dq(cache.q.shape());
    TensorT<T> dkhat(cache.khat.shape());
    TensorT<T> dvhat(cache.vhat.shape());
    for (int bi = 0; bi < b; ++bi)
        for (int j = 0; j < heads; ++j) {
            const int c0 = j * d;
            TensorT<T> qh = head_slice(cache.q, bi, c0, d);
            TensorT<T> kh = head_slice(cache.khat, bi, c0, d);
            TensorT<T> vh = head_slice(cache.vhat, bi, c0, d);
            TensorT<T> dh = head_slice(dheads, bi, c0, d);
            const TensorT<T>& weights = cache.attn[static_cast<size_t>(bi) * heads + j];
            TensorT<T> dqh, dkh, dvh;
            scaled_attention_backward(qh, kh, vh, weights, dh, &dqh, &dkh, &dvh);
            head_scatter_add(dq, bi, c0, dqh);
            head_scatter_add(dkhat, bi, c0, dkh);
            head_scatter_add(dvhat, bi, c0, dvh);
        }

    TensorT<T> dkp = spatial_reduce_backward(cache.sr_k, h, w, p.reduction, p.sr_w->value, dkhat,
                                             &grad_of(p.sr_w), &grad_of(p.sr_b));
    TensorT<T> dv = spatial_reduce_backward(cache.sr_v, h, w, p.reduction, p.sr_w->value, dvhat,
                                            &grad_of(p.sr_w), &grad_of(p.sr_b));

    auto [dk, dq_cap] =
        cap_enrich_backward(cache.cap, p.cap_w1->value, p.cap_w2->value, dkp, &grad_of(p.cap_w1),
                            &grad_of(p.cap_b1), &grad_of(p.cap_w2), &grad_of(p.cap_b2));
    add_into(dq, dq_cap);

    TensorT<T> dx = linear_backward(cache.x, p.wq->value, dq, &grad_of(p.wq), &grad_of(p.bq));
    add_into(dx, linear_backward(cache.x, p.wk->value, dk, &grad_of(p.wk), &grad_of(p.bk)));
    add_into(dx, linear_backward(cache.x, p.wv->value, dv, &grad_of(p.wv), &grad_of(p.bv)));
    return from_tokens(dx, h, w);
}

// ---- token mixer ------------------------------------------------------------------

template <typename T>
DfcnParams<T> DfcnParams<T>::create(ParamStore<T>& store, const std::string& prefix, int channels,
                                    int hidden, PadMode pad) {
    DfcnParams<T> p;
    p.pad = pad;
    p.ln_g = store.create(prefix + ".ln_g", {channels}, Init::ones);
    p.ln_b = store.create(prefix + ".ln_b", {channels}, Init::zeros);
    p.pw1_w = store.create(prefix + ".pw1_w", {hidden, channels, 1, 1}, Init::trunc_normal);
    p.pw1_b = store.create(prefix + ".pw1_b", {hidden}, Init::zeros);
    p.dw_w = store.create(prefix + ".dw_w", {hidden, 3, 3}, Init::trunc_normal);
    p.dw_b = store.create(prefix + ".dw_b", {hidden}, Init::zeros);
    p.pw2_w = store.create(prefix + ".pw2_w", {channels, hidden, 1, 1}, Init::trunc_normal);
    p.pw2_b = store.create(prefix + ".pw2_b", {channels}, Init::zeros);
    return p;
}

template <typename T>
TensorT<T> d_fcn(const TensorT<T>& z, const TensorT<T>& t_in, const DfcnParams<T>& p,
                 DfcnCache<T>* cache) {
    check_same_shape(z, t_in, "d_fcn");
    TensorT<T> sum = add(z, t_in);
    NormCache<T> ln_cache;
    TensorT<T> ln_out = layer_norm(sum, p.ln_g->value, p.ln_b->value, p.ln_eps,
                                   cache ? &ln_cache : nullptr);
    TensorT<T> h1 = conv2d(ln_out, p.pw1_w->value, p.pw1_b->value, 1, 0);
    TensorT<T> h2 = depthwise_conv2d(h1, p.dw_w->value, p.dw_b->value, 1, 1, p.pad);
    TensorT<T> g = gelu(h2);
    TensorT<T> out = conv2d(g, p.pw2_w->value, p.pw2_b->value, 1, 0);
    if (cache) {
        cache->sum = std::move(sum);
        cache->ln = std::move(ln_cache);
        cache->ln_out = std::move(ln_out);
        cache->h1 = std::move(h1);
        cache->h2 = std::move(h2);
    }
    return out;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> d_fcn_backward(const TensorT<T>& dy, const DfcnParams<T>& p,
                                                 const DfcnCache<T>& cache) {
    TensorT<T> g = gelu(cache.h2); // cheap to recompute; avoids caching one more tensor
    TensorT<T> dg = conv2d_backward(g, p.pw2_w->value, 1, 0, PadMode::zero, dy,
                                    &grad_of(p.pw2_w), &grad_of(p.pw2_b));
    TensorT<T> dh2 = gelu_backward(cache.h2, dg);
    TensorT<T> dh1 = depthwise_conv2d_backward(cache.h1, p.dw_w->value, 1, 1, p.pad, dh2,
                                               &grad_of(p.dw_w), &grad_of(p.dw_b));
    TensorT<T> dln = conv2d_backward(cache.ln_out, p.pw1_w->value, 1, 0, PadMode::zero, dh1,
                                     &grad_of(p.pw1_w), &grad_of(p.pw1_b));
    TensorT<T> dsum =
        layer_norm_backward(cache.ln, p.ln_g->value, dln, &grad_of(p.ln_g), &grad_of(p.ln_b));
    return {dsum, dsum};
}

// ---- transformer block ---------------------------------------------------------------

template <typename T>
CatBlockParams<T> CatBlockParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                            int channels, int heads, int reduction,
                                            int dfcn_hidden, PadMode pad) {
    CatBlockParams<T> p;
    p.attn = AttentionParams<T>::create(store, prefix + ".attn", channels, heads, reduction);
    p.dfcn = DfcnParams<T>::create(store, prefix + ".dfcn", channels, dfcn_hidden, pad);
    return p;
}

template <typename T>
TensorT<T> cat_block(const TensorT<T>& t_in, const CatBlockParams<T>& p,
                     CatBlockCache<T>* cache) {
    TensorT<T> z = context_addition_attention(t_in, p.attn, cache ? &cache->attn : nullptr);
    TensorT<T> mixed = d_fcn(z, t_in, p.dfcn, cache ? &cache->dfcn : nullptr);
    return add(t_in, mixed);
}

template <typename T>
TensorT<T> cat_block_backward(const TensorT<T>& dy, const CatBlockParams<T>& p,
                              const CatBlockCache<T>& cache) {
    auto [dz, dt_mix] = d_fcn_backward(dy, p.dfcn, cache.dfcn);
    TensorT<T> dt = context_addition_attention_backward(dz, p.attn, cache.attn);
    add_into(dt, dt_mix);
    add_into(dt, dy); // outer residual
    return dt;
}

// ---- explicit instantiations ------------------------------------------------------

#define CATFA_INSTANTIATE_ATTENTION(T)                                                             \
    template TensorT<T> to_tokens<T>(const TensorT<T>&);                                           \
    template TensorT<T> from_tokens<T>(const TensorT<T>&, int, int);                               \
    template TensorT<T> scaled_attention<T>(const TensorT<T>&, const TensorT<T>&,                  \
                                            const TensorT<T>&, TensorT<T>*);                       \
    template void scaled_attention_backward<T>(const TensorT<T>&, const TensorT<T>&,               \
                                               const TensorT<T>&, const TensorT<T>&,               \
                                               const TensorT<T>&, TensorT<T>*, TensorT<T>*,        \
                                               TensorT<T>*);                                       \
    template TensorT<T> cap_enrich<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,     \
                                      const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,     \
                                      CapCache<T>*);                                               \
    template std::pair<TensorT<T>, TensorT<T>> cap_enrich_backward<T>(                             \
        const CapCache<T>&, const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, TensorT<T>*,  \
        TensorT<T>*, TensorT<T>*, TensorT<T>*);                                                    \
    template TensorT<T> spatial_reduce<T>(const TensorT<T>&, int, int, int, const TensorT<T>&,     \
                                          const TensorT<T>&, SpatialReduceCache<T>*);              \
    template TensorT<T> spatial_reduce_backward<T>(const SpatialReduceCache<T>&, int, int, int,    \
                                                   const TensorT<T>&, const TensorT<T>&,           \
                                                   TensorT<T>*, TensorT<T>*);                      \
    template struct AttentionParams<T>;                                                            \
    template TensorT<T> context_addition_attention<T>(const TensorT<T>&,                           \
                                                      const AttentionParams<T>&,                   \
                                                      AttentionCache<T>*);                         \
    template TensorT<T> context_addition_attention_backward<T>(                                    \
        const TensorT<T>&, const AttentionParams<T>&, const AttentionCache<T>&);                   \
    template struct DfcnParams<T>;                                                                 \
    template TensorT<T> d_fcn<T>(const TensorT<T>&, const TensorT<T>&, const DfcnParams<T>&,       \
                                 DfcnCache<T>*);                                                   \
    template std::pair<TensorT<T>, TensorT<T>> d_fcn_backward<T>(                                  \
        const TensorT<T>&, const DfcnParams<T>&, const DfcnCache<T>&);                             \
    template struct CatBlockParams<T>;                                                             \
    template TensorT<T> cat_block<T>(const TensorT<T>&, const CatBlockParams<T>&,                  \
                                     CatBlockCache<T>*);                                           \
    template TensorT<T> cat_block_backward<T>(const TensorT<T>&, const CatBlockParams<T>&,         \
                                              const CatBlockCache<T>&);

CATFA_INSTANTIATE_ATTENTION(float)
CATFA_INSTANTIATE_ATTENTION(double)

#undef CATFA_INSTANTIATE_ATTENTION

} // namespace catfa
