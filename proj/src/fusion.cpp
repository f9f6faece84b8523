#include "catfa/fusion.hpp"

namespace catfa {

namespace {

template <typename T>
TensorT<T>& grad_of(Param<T>* p) {
    return ParamStore<T>::grad_of(p);
}

// Softmax over all H*W sites of a B x 1 x H x W map.
template <typename T>
TensorT<T> spatial_softmax(const TensorT<T>& x) {
    const int b = x.dim(0), h = x.dim(2), w = x.dim(3);
    TensorT<T> flat = x.reshaped({b, h * w});
    return softmax(flat, 1).reshaped({b, 1, h, w});
}

template <typename T>
TensorT<T> spatial_softmax_backward(const TensorT<T>& y, const TensorT<T>& dy) {
    const int b = y.dim(0), h = y.dim(2), w = y.dim(3);
    TensorT<T> flat_y = y.reshaped({b, h * w});
    TensorT<T> flat_dy = dy.reshaped({b, h * w});
    return softmax_backward(flat_y, flat_dy, 1).reshaped({b, 1, h, w});
}

} // namespace

// ---- branch fusion ---------------------------------------------------------------

template <typename T>
CctfaParams<T> CctfaParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                      int channels) {
    if (channels < 2)
        throw config_error("cctfa: needs at least 2 channels, got " + std::to_string(channels));
    CctfaParams<T> p;
    p.channels = channels;
    const int half = channels / 2;
    p.w1 = store.create(prefix + ".w1", {channels, channels, 1, 1}, Init::trunc_normal);
    p.b1 = store.create(prefix + ".b1", {channels}, Init::zeros);
    p.w2 = store.create(prefix + ".w2", {channels, channels, 1, 1}, Init::trunc_normal);
    p.b2 = store.create(prefix + ".b2", {channels}, Init::zeros);
    p.p1a_w = store.create(prefix + ".p1a_w", {half, channels, 3, 3}, Init::trunc_normal);
    p.p1a_b = store.create(prefix + ".p1a_b", {half}, Init::zeros);
    p.p1b_w = store.create(prefix + ".p1b_w", {1, half, 3, 3}, Init::trunc_normal);
    p.p1b_b = store.create(prefix + ".p1b_b", {1}, Init::zeros);
    p.hp_w = store.create(prefix + ".hp_w", {1, 2, 1, 1}, Init::trunc_normal);
    p.hp_b = store.create(prefix + ".hp_b", {1}, Init::zeros);
    p.fuse_w = store.create(prefix + ".fuse_w", {channels, channels, 1, 1}, Init::trunc_normal);
    p.fuse_b = store.create(prefix + ".fuse_b", {channels}, Init::zeros);
    return p;
}

template <typename T>
TensorT<T> cross_channel_attention(const TensorT<T>& t_out, const TensorT<T>& c_out,
                                   const CctfaParams<T>& p, CctfaCache<T>* cache) {
    check_same_shape(t_out, c_out, "cross_channel_attention");
    const int b = t_out.dim(0), c = t_out.dim(1), h = t_out.dim(2), w = t_out.dim(3);
    TensorT<T> tp = conv2d(t_out, p.w1->value, p.b1->value, 1, 0);
    TensorT<T> cp = conv2d(c_out, p.w2->value, p.b2->value, 1, 0);
    TensorT<T> f = softmax(mul(tp, cp), 1);
    TensorT<T> v = global_avg_pool(t_out);
    TensorT<T> out({b, c, h, w});
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const T scale_v = v.at4(bi, ci, 0, 0);
            const T* fp = &f.at4(bi, ci, 0, 0);
            T* op = &out.at4(bi, ci, 0, 0);
            for (int s = 0; s < h * w; ++s) op[s] = fp[s] * scale_v;
        }
    if (cache) {
        cache->tp = std::move(tp);
        cache->cp = std::move(cp);
        cache->f = std::move(f);
        cache->v = std::move(v);
    }
    return out;
}

template <typename T>
TensorT<T> spatial_attention(const TensorT<T>& c_out, const CctfaParams<T>& p,
                             CctfaCache<T>* cache) {
    TensorT<T> a1 = conv2d(c_out, p.p1a_w->value, p.p1a_b->value, 1, 1);
    TensorT<T> g1 = gelu(a1);
    TensorT<T> g = conv2d(g1, p.p1b_w->value, p.p1b_b->value, 1, 1);
    TensorT<T> hmap = conv2d(channel_pool(c_out), p.hp_w->value, p.hp_b->value, 1, 0);
    TensorT<T> out = mul(g, hmap);
    if (cache) {
        cache->a1 = std::move(a1);
        cache->g1 = std::move(g1);
        cache->g = std::move(g);
        cache->hmap = std::move(hmap);
    }
    return out;
}

template <typename T>
TensorT<T> cctfa(const TensorT<T>& t_out, const TensorT<T>& c_out, const CctfaParams<T>& p,
                 CctfaCache<T>* cache) {
    const int b = t_out.dim(0), c = t_out.dim(1), h = t_out.dim(2), w = t_out.dim(3);
    if (c != p.channels)
        throw shape_error("cctfa: input channels " + std::to_string(c) +
                          " != configured channels " + std::to_string(p.channels));
    TensorT<T> cc = cross_channel_attention(t_out, c_out, p, cache);
    TensorT<T> sa = spatial_attention(c_out, p, cache);
    TensorT<T> summed(cc.shape());
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const T* ccp = &cc.at4(bi, ci, 0, 0);
            const T* sap = &sa.at4(bi, 0, 0, 0);
            T* sp = &summed.at4(bi, ci, 0, 0);
            for (int s = 0; s < h * w; ++s) sp[s] = ccp[s] + sap[s];
        }
    TensorT<T> out = conv2d(summed, p.fuse_w->value, p.fuse_b->value, 1, 0);
    if (cache) {
        cache->t_out = t_out;
        cache->c_out = c_out;
        cache->summed = std::move(summed);
    }
    return out;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> cctfa_backward(const TensorT<T>& dy, const CctfaParams<T>& p,
                                                 const CctfaCache<T>& cache) {
    const int b = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
    const int hw = h * w;
    TensorT<T> dsummed = conv2d_backward(cache.summed, p.fuse_w->value, 1, 0, PadMode::zero, dy,
                                         &grad_of(p.fuse_w), &grad_of(p.fuse_b));

    // Broadcast add: the spatial map receives the channel sum.
    TensorT<T> dsa({b, 1, h, w});
    for (int bi = 0; bi < b; ++bi) {
        T* dst = &dsa.at4(bi, 0, 0, 0);
        for (int ci = 0; ci < c; ++ci) {
            const T* src = &dsummed.at4(bi, ci, 0, 0);
            for (int s = 0; s < hw; ++s) dst[s] += src[s];
        }
    }

    TensorT<T> d_t(cache.t_out.shape());
    TensorT<T> d_c(cache.c_out.shape());

    // Spatial branch: out = g * hmap.
    TensorT<T> dg = mul(dsa, cache.hmap);
    TensorT<T> dhmap = mul(dsa, cache.g);
    TensorT<T> dhpool = conv2d_backward(channel_pool(cache.c_out), p.hp_w->value, 1, 0,
                                        PadMode::zero, dhmap, &grad_of(p.hp_w), &grad_of(p.hp_b));
    add_into(d_c, channel_pool_backward(cache.c_out, dhpool));
    TensorT<T> dg1 = conv2d_backward(cache.g1, p.p1b_w->value, 1, 1, PadMode::zero, dg,
                                     &grad_of(p.p1b_w), &grad_of(p.p1b_b));
    TensorT<T> da1 = gelu_backward(cache.a1, dg1);
    add_into(d_c, conv2d_backward(cache.c_out, p.p1a_w->value, 1, 1, PadMode::zero, da1,
                                  &grad_of(p.p1a_w), &grad_of(p.p1a_b)));

    // Cross-channel branch: out = f * v (v broadcast over sites).
    TensorT<T> df(cache.f.shape());
    TensorT<T> dv({b, c, 1, 1});
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const T vv = cache.v.at4(bi, ci, 0, 0);
            const T* fp = &cache.f.at4(bi, ci, 0, 0);
            const T* dp = &dsummed.at4(bi, ci, 0, 0);
            T* dfp = &df.at4(bi, ci, 0, 0);
            T acc = 0;
            for (int s = 0; s < hw; ++s) {
                dfp[s] = dp[s] * vv;
                acc += dp[s] * fp[s];
            }
            dv.at4(bi, ci, 0, 0) = acc;
        }
    TensorT<T> dprod = softmax_backward(cache.f, df, 1);
    TensorT<T> dtp = mul(dprod, cache.cp);
    TensorT<T> dcp = mul(dprod, cache.tp);
    add_into(d_t, conv2d_backward(cache.t_out, p.w1->value, 1, 0, PadMode::zero, dtp,
                                  &grad_of(p.w1), &grad_of(p.b1)));
    add_into(d_c, conv2d_backward(cache.c_out, p.w2->value, 1, 0, PadMode::zero, dcp,
                                  &grad_of(p.w2), &grad_of(p.b2)));
    add_into(d_t, global_avg_pool_backward(dv, h, w));

    return {std::move(d_t), std::move(d_c)};
}

// ---- gated skip ---------------------------------------------------------------------

template <typename T>
SafgParams<T> SafgParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                    int channels) {
    SafgParams<T> p;
    p.channels = channels;
    p.gate_skip_w = store.create(prefix + ".gate_skip_w", {1, channels, 1, 1}, Init::trunc_normal);
    p.gate_skip_b = store.create(prefix + ".gate_skip_b", {1}, Init::zeros);
    p.gate_dec_w = store.create(prefix + ".gate_dec_w", {1, channels, 1, 1}, Init::trunc_normal);
    p.gate_dec_b = store.create(prefix + ".gate_dec_b", {1}, Init::zeros);
    p.trans_dw_w = store.create(prefix + ".trans_dw_w", {channels, 3, 3}, Init::trunc_normal);
    p.trans_dw_b = store.create(prefix + ".trans_dw_b", {channels}, Init::zeros);
    p.trans_pw_w = store.create(prefix + ".trans_pw_w", {channels, channels, 1, 1},
                                Init::trunc_normal);
    p.trans_pw_b = store.create(prefix + ".trans_pw_b", {channels}, Init::zeros);
    return p;
}

template <typename T>
TensorT<T> safg(const TensorT<T>& skip, const TensorT<T>& dec, const SafgParams<T>& p,
                SafgCache<T>* cache) {
    check_same_shape(skip, dec, "safg");
    const int b = skip.dim(0), c = skip.dim(1), h = skip.dim(2), w = skip.dim(3);
    if (c != p.channels)
        throw shape_error("safg: input channels " + std::to_string(c) +
                          " != configured channels " + std::to_string(p.channels));

    TensorT<T> glogit = add(conv2d(skip, p.gate_skip_w->value, p.gate_skip_b->value, 1, 0),
                            conv2d(dec, p.gate_dec_w->value, p.gate_dec_b->value, 1, 0));
    // The softmax plane sums to 1, so its entries decay as 1/(H*W); dividing
    // by the per-sample peak restores a resolution-independent scale while
    // bounding the gate's gain at exactly 1 (an amplifying gate feeds back
    // into its own logits and blows up training). The softmax is strictly
    // positive, so the peak is as well.
    TensorT<T> gsm = spatial_softmax(glogit);
    TensorT<T> g0 = gelu(gsm);
    TensorT<T> gact(g0.shape());
    for (int bi = 0; bi < b; ++bi) {
        const T* g0p = &g0.at4(bi, 0, 0, 0);
        T* gp = &gact.at4(bi, 0, 0, 0);
        T peak = g0p[0];
        for (int s = 1; s < h * w; ++s) peak = std::max(peak, g0p[s]);
        for (int s = 0; s < h * w; ++s) gp[s] = g0p[s] / peak;
    }

    TensorT<T> t1 = depthwise_conv2d(dec, p.trans_dw_w->value, p.trans_dw_b->value, 1, 1);
    TensorT<T> tr = conv2d(gelu(t1), p.trans_pw_w->value, p.trans_pw_b->value, 1, 0);

    TensorT<T> summed = add(tr, skip);
    TensorT<T> out(summed.shape());
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const T* gp = &gact.at4(bi, 0, 0, 0);
            const T* sp = &summed.at4(bi, ci, 0, 0);
            T* op = &out.at4(bi, ci, 0, 0);
            for (int s = 0; s < h * w; ++s) op[s] = gp[s] * sp[s];
        }
    if (cache) {
        cache->skip = skip;
        cache->dec = dec;
        cache->gsm = std::move(gsm);
        cache->g0 = std::move(g0);
        cache->gact = std::move(gact);
        cache->t1 = std::move(t1);
        cache->summed = std::move(summed);
    }
    return out;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> safg_backward(const TensorT<T>& dy, const SafgParams<T>& p,
                                                const SafgCache<T>& cache) {
    const int b = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
    const int hw = h * w;

    // out = gact (broadcast) * summed
    TensorT<T> dgact({b, 1, h, w});
    TensorT<T> dsummed(cache.summed.shape());
    for (int bi = 0; bi < b; ++bi) {
        T* dgp = &dgact.at4(bi, 0, 0, 0);
        const T* gp = &cache.gact.at4(bi, 0, 0, 0);
        for (int ci = 0; ci < c; ++ci) {
            const T* dp = &dy.at4(bi, ci, 0, 0);
            const T* sp = &cache.summed.at4(bi, ci, 0, 0);
            T* dsp = &dsummed.at4(bi, ci, 0, 0);
            for (int s = 0; s < hw; ++s) {
                dgp[s] += dp[s] * sp[s];
                dsp[s] = dp[s] * gp[s];
            }
        }
    }

    TensorT<T> d_skip = dsummed; // skip term of the sum
    TensorT<T> d_dec(cache.dec.shape());

    // Translation path.
    TensorT<T> g1 = gelu(cache.t1);
    TensorT<T> dg1 = conv2d_backward(g1, p.trans_pw_w->value, 1, 0, PadMode::zero, dsummed,
                                     &grad_of(p.trans_pw_w), &grad_of(p.trans_pw_b));
    TensorT<T> dt1 = gelu_backward(cache.t1, dg1);
    add_into(d_dec, depthwise_conv2d_backward(cache.dec, p.trans_dw_w->value, 1, 1, PadMode::zero,
                                              dt1, &grad_of(p.trans_dw_w), &grad_of(p.trans_dw_b)));

    // Gate path: gact = g0 / max(g0), g0 = gelu(gsm). The peak site follows
    // the same first-maximum subgradient convention as max pooling.
    TensorT<T> dg0(cache.g0.shape());
    for (int bi = 0; bi < b; ++bi) {
        const T* g0p = &cache.g0.at4(bi, 0, 0, 0);
        const T* gp = &cache.gact.at4(bi, 0, 0, 0);
        const T* dgp = &dgact.at4(bi, 0, 0, 0);
        T* dp = &dg0.at4(bi, 0, 0, 0);
        int peak_at = 0;
        T peak = g0p[0];
        for (int s = 1; s < hw; ++s)
            if (g0p[s] > peak) {
                peak = g0p[s];
                peak_at = s;
            }
        T dot_dg_g = 0;
        for (int s = 0; s < hw; ++s) {
            dp[s] = dgp[s] / peak;
            dot_dg_g += dgp[s] * gp[s];
        }
        dp[peak_at] -= dot_dg_g / peak;
    }
    TensorT<T> dgsm = gelu_backward(cache.gsm, dg0);
    TensorT<T> dglogit = spatial_softmax_backward(cache.gsm, dgsm);
    add_into(d_skip, conv2d_backward(cache.skip, p.gate_skip_w->value, 1, 0, PadMode::zero,
                                     dglogit, &grad_of(p.gate_skip_w), &grad_of(p.gate_skip_b)));
    add_into(d_dec, conv2d_backward(cache.dec, p.gate_dec_w->value, 1, 0, PadMode::zero, dglogit,
                                    &grad_of(p.gate_dec_w), &grad_of(p.gate_dec_b)));

    return {std::move(d_skip), std::move(d_dec)};
}

// ---- explicit instantiations ----------------------------------------------------------

#define CATFA_INSTANTIATE_FUSION(T)                                                              \
    template struct CctfaParams<T>;                                                              \
    template TensorT<T> cross_channel_attention<T>(const TensorT<T>&, const TensorT<T>&,         \
                                                   const CctfaParams<T>&, CctfaCache<T>*);       \
    template TensorT<T> spatial_attention<T>(const TensorT<T>&, const CctfaParams<T>&,           \
                                             CctfaCache<T>*);                                    \
    template TensorT<T> cctfa<T>(const TensorT<T>&, const TensorT<T>&, const CctfaParams<T>&,    \
                                 CctfaCache<T>*);                                                \
    template std::pair<TensorT<T>, TensorT<T>> cctfa_backward<T>(                                \
        const TensorT<T>&, const CctfaParams<T>&, const CctfaCache<T>&);                         \
    template struct SafgParams<T>;                                                               \
    template TensorT<T> safg<T>(const TensorT<T>&, const TensorT<T>&, const SafgParams<T>&,      \
                                SafgCache<T>*);                                                  \
    template std::pair<TensorT<T>, TensorT<T>> safg_backward<T>(                                 \
        const TensorT<T>&, const SafgParams<T>&, const SafgCache<T>&);

CATFA_INSTANTIATE_FUSION(float)
CATFA_INSTANTIATE_FUSION(double)

#undef CATFA_INSTANTIATE_FUSION

} // namespace catfa
