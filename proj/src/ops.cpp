#include "catfa/ops.hpp"

#include <cmath>
#include <limits>

namespace catfa {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw shape_error(msg);
}

void require_rank(const std::vector<int>& shape, int rank, const char* who) {
    if (static_cast<int>(shape.size()) != rank)
        throw shape_error(std::string(who) + ": expected rank " + std::to_string(rank) +
                          ", got rank " + std::to_string(shape.size()));
}

// Maps an out-of-range coordinate according to the padding rule.
// Returns -1 when the sample is zero (zero padding).
inline int pad_index(int i, int n, PadMode mode) {
    if (i >= 0 && i < n) return i;
    switch (mode) {
        case PadMode::zero:
            return -1;
        case PadMode::reflect: {
            if (n == 1) return 0;
            // Reflect about the border without repeating the edge sample;
            // handles any overshoot by folding repeatedly.
            int m = i;
            const int period = 2 * (n - 1);
            m %= period;
            if (m < 0) m += period;
            return m < n ? m : period - m;
        }
        case PadMode::circular: {
            int m = i % n;
            if (m < 0) m += n;
            return m;
        }
    }
    return -1;
}

template <typename T>
T phi_cdf(T x) {
    return T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
}

template <typename T>
T phi_pdf(T x) {
    return std::exp(T(-0.5) * x * x) * T(0.3989422804014326779);
}

// (outer, len, inner) decomposition used by axis-wise ops.
struct AxisView {
    int64_t outer = 1;
    int64_t len = 1;
    int64_t inner = 1;
};

AxisView axis_view(const std::vector<int>& shape, int axis, const char* who) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw shape_error(std::string(who) + ": axis " + std::to_string(axis) +
                          " out of range for rank " + std::to_string(shape.size()));
    AxisView v;
    for (int i = 0; i < axis; ++i) v.outer *= shape[i];
    v.len = shape[axis];
    for (size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

} // namespace

// ---- dense linear algebra --------------------------------------------------

template <typename T>
void gemm_nn(int m, int k, int n, const T* A, const T* B, T* C, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        T* crow = C + static_cast<int64_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = A + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T a = arow[p];
            if (a == T(0)) continue;
            const T* brow = B + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

template <typename T>
void gemm_nt(int m, int k, int n, const T* A, const T* B, T* C, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const T* arow = A + static_cast<int64_t>(i) * k;
        T* crow = C + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = B + static_cast<int64_t>(j) * k;
            T acc = 0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

template <typename T>
void gemm_tn(int m, int k, int n, const T* A, const T* B, T* C, bool accumulate) {
    if (!accumulate)
        for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) C[i] = T(0);
    for (int p = 0; p < k; ++p) {
        const T* arow = A + static_cast<int64_t>(p) * m;
        const T* brow = B + static_cast<int64_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T a = arow[i];
            if (a == T(0)) continue;
            T* crow = C + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    require_rank(a.shape(), 2, "matmul lhs");
    require_rank(b.shape(), 2, "matmul rhs");
    require(a.dim(1) == b.dim(0), "matmul: inner dims " + std::to_string(a.dim(1)) + " vs " +
                                      std::to_string(b.dim(0)));
    TensorT<T> out({a.dim(0), b.dim(1)});
    gemm_nn(a.dim(0), a.dim(1), b.dim(1), a.data(), b.data(), out.data(), false);
    return out;
}

template <typename T>
void matmul_backward(const TensorT<T>& a, const TensorT<T>& b, const TensorT<T>& dy,
                     TensorT<T>* da, TensorT<T>* db) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (da) {
        if (da->size() == 0) *da = TensorT<T>({m, k});
        gemm_nt(m, n, k, dy.data(), b.data(), da->data(), true);
    }
    if (db) {
        if (db->size() == 0) *db = TensorT<T>({k, n});
        gemm_tn(k, m, n, a.data(), dy.data(), db->data(), true);
    }
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
    require_rank(a.shape(), 2, "transpose2d");
    TensorT<T> out({a.dim(1), a.dim(0)});
    for (int i = 0; i < a.dim(0); ++i)
        for (int j = 0; j < a.dim(1); ++j) out.at2(j, i) = a.at2(i, j);
    return out;
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias) {
    require_rank(w.shape(), 2, "linear weight");
    require(x.rank() == 2 || x.rank() == 3, "linear: input must be rank 2 or 3");
    const int in = x.dim(x.rank() - 1);
    require(in == w.dim(0), "linear: input width " + std::to_string(in) + " vs weight rows " +
                                std::to_string(w.dim(0)));
    const int out_w = w.dim(1);
    require(bias.rank() == 1 && bias.dim(0) == out_w, "linear: bias width mismatch");
    const int rows = static_cast<int>(x.size() / in);
    std::vector<int> out_shape = x.shape();
    out_shape.back() = out_w;
    TensorT<T> y(out_shape);
    gemm_nn(rows, in, out_w, x.data(), w.data(), y.data(), false);
    for (int r = 0; r < rows; ++r) {
        T* row = y.data() + static_cast<int64_t>(r) * out_w;
        for (int j = 0; j < out_w; ++j) row[j] += bias[j];
    }
    return y;
}

template <typename T>
TensorT<T> linear_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                           TensorT<T>* dw, TensorT<T>* dbias) {
    const int in = w.dim(0), out_w = w.dim(1);
    const int rows = static_cast<int>(x.size() / in);
    TensorT<T> dx(x.shape());
    gemm_nt(rows, out_w, in, dy.data(), w.data(), dx.data(), false);
    if (dw) gemm_tn(in, rows, out_w, x.data(), dy.data(), dw->data(), true);
    if (dbias) {
        for (int r = 0; r < rows; ++r) {
            const T* row = dy.data() + static_cast<int64_t>(r) * out_w;
            for (int j = 0; j < out_w; ++j) (*dbias)[j] += row[j];
        }
    }
    return dx;
}

// ---- shape surgery ---------------------------------------------------------

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    const auto& first = parts.front().shape();
    int total = 0;
    for (const auto& p : parts) {
        require(p.rank() == static_cast<int>(first.size()), "concat: rank mismatch");
        for (int i = 0; i < p.rank(); ++i)
            if (i != axis)
                require(p.dim(i) == first[i], "concat: extent mismatch outside axis " +
                                                  std::to_string(axis));
        total += p.dim(axis);
    }
    std::vector<int> out_shape = first;
    if (axis < 0 || axis >= static_cast<int>(first.size()))
        throw shape_error("concat: axis out of range");
    out_shape[axis] = total;
    TensorT<T> out(out_shape);
    const AxisView v = axis_view(out_shape, axis, "concat");
    int64_t filled = 0;
    for (const auto& p : parts) {
        const int64_t plen = p.dim(axis);
        for (int64_t o = 0; o < v.outer; ++o) {
            const T* src = p.data() + o * plen * v.inner;
            T* dst = out.data() + (o * v.len + filled) * v.inner;
            for (int64_t i = 0; i < plen * v.inner; ++i) dst[i] = src[i];
        }
        filled += plen;
    }
    return out;
}

template <typename T>
std::vector<TensorT<T>> concat_backward(const std::vector<TensorT<T>>& parts, int axis,
                                        const TensorT<T>& dy) {
    std::vector<TensorT<T>> grads;
    grads.reserve(parts.size());
    int start = 0;
    for (const auto& p : parts) {
        grads.push_back(slice(dy, axis, start, p.dim(axis)));
        start += p.dim(axis);
    }
    return grads;
}

template <typename T>
TensorT<T> slice(const TensorT<T>& a, int axis, int start, int len) {
    const AxisView v = axis_view(a.shape(), axis, "slice");
    require(start >= 0 && len >= 1 && start + len <= v.len, "slice: window out of range");
    std::vector<int> out_shape = a.shape();
    out_shape[axis] = len;
    TensorT<T> out(out_shape);
    for (int64_t o = 0; o < v.outer; ++o) {
        const T* src = a.data() + (o * v.len + start) * v.inner;
        T* dst = out.data() + o * len * v.inner;
        for (int64_t i = 0; i < len * v.inner; ++i) dst[i] = src[i];
    }
    return out;
}

// ---- activations -----------------------------------------------------------

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
    TensorT<T> y(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) y[i] = x[i] * phi_cdf(x[i]);
    return y;
}

template <typename T>
TensorT<T> gelu_backward(const TensorT<T>& x, const TensorT<T>& dy) {
    check_same_shape(x, dy, "gelu_backward");
    TensorT<T> dx(x.shape());
    for (int64_t i = 0; i < x.size(); ++i)
        dx[i] = dy[i] * (phi_cdf(x[i]) + x[i] * phi_pdf(x[i]));
    return dx;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> y(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        if (v >= T(0)) {
            y[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            y[i] = e / (T(1) + e);
        }
    }
    return y;
}

template <typename T>
TensorT<T> sigmoid_backward(const TensorT<T>& y, const TensorT<T>& dy) {
    check_same_shape(y, dy, "sigmoid_backward");
    TensorT<T> dx(y.shape());
    for (int64_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
    return dx;
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
    const AxisView v = axis_view(x.shape(), axis, "softmax");
    TensorT<T> y(x.shape());
    for (int64_t o = 0; o < v.outer; ++o) {
        for (int64_t i = 0; i < v.inner; ++i) {
            const int64_t base = o * v.len * v.inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (int64_t l = 0; l < v.len; ++l) mx = std::max(mx, x[base + l * v.inner]);
            T denom = 0;
            for (int64_t l = 0; l < v.len; ++l) {
                const T e = std::exp(x[base + l * v.inner] - mx);
                y[base + l * v.inner] = e;
                denom += e;
            }
            for (int64_t l = 0; l < v.len; ++l) y[base + l * v.inner] /= denom;
        }
    }
    return y;
}

template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& y, const TensorT<T>& dy, int axis) {
    check_same_shape(y, dy, "softmax_backward");
    const AxisView v = axis_view(y.shape(), axis, "softmax_backward");
    TensorT<T> dx(y.shape());
    for (int64_t o = 0; o < v.outer; ++o) {
        for (int64_t i = 0; i < v.inner; ++i) {
            const int64_t base = o * v.len * v.inner + i;
            T s = 0;
            for (int64_t l = 0; l < v.len; ++l) s += dy[base + l * v.inner] * y[base + l * v.inner];
            for (int64_t l = 0; l < v.len; ++l) {
                const int64_t idx = base + l * v.inner;
                dx[idx] = y[idx] * (dy[idx] - s);
            }
        }
    }
    return dx;
}

// ---- convolutions ----------------------------------------------------------

namespace {

int conv_out_extent(int in, int k, int stride, int padding, const char* who) {
    const int span = in + 2 * padding - k;
    if (span < 0)
        throw shape_error(std::string(who) + ": kernel " + std::to_string(k) +
                          " larger than padded input " + std::to_string(in + 2 * padding));
    return span / stride + 1;
}

} // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  int stride, int padding, PadMode mode) {
    require_rank(x.shape(), 4, "conv2d input");
    require_rank(w.shape(), 4, "conv2d weight");
    require(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
    const int B = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    require(w.dim(1) == I, "conv2d: input channels " + std::to_string(I) +
                               " vs weight channels " + std::to_string(w.dim(1)));
    require(bias.rank() == 1 && bias.dim(0) == O, "conv2d: bias size mismatch");
    const int OH = conv_out_extent(H, kh, stride, padding, "conv2d");
    const int OW = conv_out_extent(W, kw, stride, padding, "conv2d");
    TensorT<T> y({B, O, OH, OW});

    if (kh == 1 && kw == 1 && stride == 1 && padding == 0) {
        // Pointwise convolutions dominate the workload; run them as GEMMs.
        const int hw = H * W;
        for (int b = 0; b < B; ++b)
            gemm_nn(O, I, hw, w.data(), x.data() + static_cast<int64_t>(b) * I * hw,
                    y.data() + static_cast<int64_t>(b) * O * hw, false);
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < O; ++o) {
                T* plane = &y.at4(b, o, 0, 0);
                const T bv = bias[o];
                for (int i = 0; i < hw; ++i) plane[i] += bv;
            }
        return y;
    }

    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T acc = bias[o];
                    for (int i = 0; i < I; ++i)
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = pad_index(oy * stride - padding + ky, H, mode);
                            if (iy < 0) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = pad_index(ox * stride - padding + kx, W, mode);
                                if (ix < 0) continue;
                                acc += x.at4(b, i, iy, ix) * w.at4(o, i, ky, kx);
                            }
                        }
                    y.at4(b, o, oy, ox) = acc;
                }
    return y;
}

template <typename T>
TensorT<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, int stride, int padding,
                           PadMode mode, const TensorT<T>& dy,
                           TensorT<T>* dw, TensorT<T>* dbias) {
    const int B = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int OH = dy.dim(2), OW = dy.dim(3);
    TensorT<T> dx(x.shape());

    if (dbias) {
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < O; ++o) {
                const T* plane = &dy.at4(b, o, 0, 0);
                T acc = 0;
                for (int i = 0; i < OH * OW; ++i) acc += plane[i];
                (*dbias)[o] += acc;
            }
    }

    if (kh == 1 && kw == 1 && stride == 1 && padding == 0) {
        const int hw = H * W;
        for (int b = 0; b < B; ++b) {
            const T* dyb = dy.data() + static_cast<int64_t>(b) * O * hw;
            gemm_tn(I, O, hw, w.data(), dyb, dx.data() + static_cast<int64_t>(b) * I * hw, false);
            if (dw) gemm_nt(O, hw, I, dyb, x.data() + static_cast<int64_t>(b) * I * hw, dw->data(), true);
        }
        return dx;
    }

    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const T g = dy.at4(b, o, oy, ox);
                    if (g == T(0)) continue;
                    for (int i = 0; i < I; ++i)
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = pad_index(oy * stride - padding + ky, H, mode);
                            if (iy < 0) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = pad_index(ox * stride - padding + kx, W, mode);
                                if (ix < 0) continue;
                                dx.at4(b, i, iy, ix) += g * w.at4(o, i, ky, kx);
                                if (dw) dw->at4(o, i, ky, kx) += g * x.at4(b, i, iy, ix);
                            }
                        }
                }
    return dx;
}

template <typename T>
TensorT<T> depthwise_conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                            int stride, int padding, PadMode mode) {
    require_rank(x.shape(), 4, "depthwise_conv2d input");
    require_rank(w.shape(), 3, "depthwise_conv2d weight");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int kh = w.dim(1), kw = w.dim(2);
    require(w.dim(0) == C, "depthwise_conv2d: channels " + std::to_string(C) + " vs filters " +
                               std::to_string(w.dim(0)));
    require(bias.rank() == 1 && bias.dim(0) == C, "depthwise_conv2d: bias size mismatch");
    const int OH = conv_out_extent(H, kh, stride, padding, "depthwise_conv2d");
    const int OW = conv_out_extent(W, kw, stride, padding, "depthwise_conv2d");
    TensorT<T> y({B, C, OH, OW});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T acc = bias[c];
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = pad_index(oy * stride - padding + ky, H, mode);
                        if (iy < 0) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = pad_index(ox * stride - padding + kx, W, mode);
                            if (ix < 0) continue;
                            acc += x.at4(b, c, iy, ix) * w.at3(c, ky, kx);
                        }
                    }
                    y.at4(b, c, oy, ox) = acc;
                }
    return y;
}

template <typename T>
TensorT<T> depthwise_conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, int stride,
                                     int padding, PadMode mode, const TensorT<T>& dy,
                                     TensorT<T>* dw, TensorT<T>* dbias) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int kh = w.dim(1), kw = w.dim(2);
    const int OH = dy.dim(2), OW = dy.dim(3);
    TensorT<T> dx(x.shape());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const T g = dy.at4(b, c, oy, ox);
                    if (dbias) (*dbias)[c] += g;
                    if (g == T(0)) continue;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = pad_index(oy * stride - padding + ky, H, mode);
                        if (iy < 0) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = pad_index(ox * stride - padding + kx, W, mode);
                            if (ix < 0) continue;
                            dx.at4(b, c, iy, ix) += g * w.at3(c, ky, kx);
                            if (dw) dw->at3(c, ky, kx) += g * x.at4(b, c, iy, ix);
                        }
                    }
                }
    return dx;
}

template <typename T>
TensorT<T> transposed_conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                             int stride) {
    require_rank(x.shape(), 4, "transposed_conv2d input");
    require_rank(w.shape(), 4, "transposed_conv2d weight");
    require(stride >= 1, "transposed_conv2d: bad stride");
    const int B = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(w.dim(0) == I, "transposed_conv2d: input channels " + std::to_string(I) +
                               " vs weight rows " + std::to_string(w.dim(0)));
    const int O = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    require(bias.rank() == 1 && bias.dim(0) == O, "transposed_conv2d: bias size mismatch");
    const int OH = (H - 1) * stride + kh;
    const int OW = (W - 1) * stride + kw;
    TensorT<T> y({B, O, OH, OW});
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o) {
            T* plane = &y.at4(b, o, 0, 0);
            const T bv = bias[o];
            for (int i = 0; i < OH * OW; ++i) plane[i] = bv;
        }
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < I; ++i)
            for (int iy = 0; iy < H; ++iy)
                for (int ix = 0; ix < W; ++ix) {
                    const T v = x.at4(b, i, iy, ix);
                    if (v == T(0)) continue;
                    for (int o = 0; o < O; ++o)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx)
                                y.at4(b, o, iy * stride + ky, ix * stride + kx) +=
                                    v * w.at4(i, o, ky, kx);
                }
    return y;
}

template <typename T>
TensorT<T> transposed_conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, int stride,
                                      const TensorT<T>& dy, TensorT<T>* dw, TensorT<T>* dbias) {
    const int B = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    TensorT<T> dx(x.shape());
    if (dbias) {
        const int ohw = dy.dim(2) * dy.dim(3);
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < O; ++o) {
                const T* plane = &dy.at4(b, o, 0, 0);
                T acc = 0;
                for (int i = 0; i < ohw; ++i) acc += plane[i];
                (*dbias)[o] += acc;
            }
    }
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < I; ++i)
            for (int iy = 0; iy < H; ++iy)
                for (int ix = 0; ix < W; ++ix) {
                    T acc = 0;
                    const T xv = x.at4(b, i, iy, ix);
                    for (int o = 0; o < O; ++o)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const T g = dy.at4(b, o, iy * stride + ky, ix * stride + kx);
                                acc += g * w.at4(i, o, ky, kx);
                                if (dw) dw->at4(i, o, ky, kx) += g * xv;
                            }
                    dx.at4(b, i, iy, ix) = acc;
                }
    return dx;
}

// ---- normalization ---------------------------------------------------------

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      double eps, NormCache<T>* cache) {
    require_rank(x.shape(), 4, "layer_norm input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(gamma.rank() == 1 && gamma.dim(0) == C, "layer_norm: gamma size mismatch");
    require(beta.rank() == 1 && beta.dim(0) == C, "layer_norm: beta size mismatch");
    TensorT<T> y(x.shape());
    if (cache) {
        cache->xhat = TensorT<T>(x.shape());
        cache->invstd.assign(static_cast<size_t>(B) * H * W, T(0));
    }
    const int64_t hw = static_cast<int64_t>(H) * W;
    for (int b = 0; b < B; ++b)
        for (int64_t s = 0; s < hw; ++s) {
            const int64_t base = (static_cast<int64_t>(b) * C) * hw + s;
            T mean = 0;
            for (int c = 0; c < C; ++c) mean += x[base + c * hw];
            mean /= T(C);
            T var = 0;
            for (int c = 0; c < C; ++c) {
                const T d = x[base + c * hw] - mean;
                var += d * d;
            }
            var /= T(C);
            const T r = T(1) / std::sqrt(var + T(eps));
            for (int c = 0; c < C; ++c) {
                const T xh = (x[base + c * hw] - mean) * r;
                y[base + c * hw] = gamma[c] * xh + beta[c];
                if (cache) cache->xhat[base + c * hw] = xh;
            }
            if (cache) cache->invstd[static_cast<size_t>(b) * hw + s] = r;
        }
    return y;
}

template <typename T>
TensorT<T> layer_norm_backward(const NormCache<T>& cache, const TensorT<T>& gamma,
                               const TensorT<T>& dy, TensorT<T>* dgamma, TensorT<T>* dbeta) {
    const auto& xhat = cache.xhat;
    const int B = xhat.dim(0), C = xhat.dim(1), H = xhat.dim(2), W = xhat.dim(3);
    const int64_t hw = static_cast<int64_t>(H) * W;
    TensorT<T> dx(xhat.shape());
    for (int b = 0; b < B; ++b)
        for (int64_t s = 0; s < hw; ++s) {
            const int64_t base = (static_cast<int64_t>(b) * C) * hw + s;
            const T r = cache.invstd[static_cast<size_t>(b) * hw + s];
            T sum_dxh = 0, sum_dxh_xh = 0;
            for (int c = 0; c < C; ++c) {
                const T dxh = dy[base + c * hw] * gamma[c];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xhat[base + c * hw];
            }
            const T inv_c = T(1) / T(C);
            for (int c = 0; c < C; ++c) {
                const T dxh = dy[base + c * hw] * gamma[c];
                dx[base + c * hw] =
                    r * (dxh - sum_dxh * inv_c - xhat[base + c * hw] * sum_dxh_xh * inv_c);
            }
        }
    if (dgamma || dbeta) {
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
                T sg = 0, sb = 0;
                for (int64_t s = 0; s < hw; ++s) {
                    sg += dy[base + s] * xhat[base + s];
                    sb += dy[base + s];
                }
                if (dgamma) (*dgamma)[c] += sg;
                if (dbeta) (*dbeta)[c] += sb;
            }
    }
    return dx;
}

template <typename T>
TensorT<T> batch_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      BatchNormState<T>& state, Mode mode, double eps, double momentum,
                      NormCache<T>* cache) {
    require_rank(x.shape(), 4, "batch_norm input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(gamma.rank() == 1 && gamma.dim(0) == C, "batch_norm: gamma size mismatch");
    require(beta.rank() == 1 && beta.dim(0) == C, "batch_norm: beta size mismatch");
    const int64_t hw = static_cast<int64_t>(H) * W;
    const int64_t n = static_cast<int64_t>(B) * hw;
    TensorT<T> y(x.shape());

    if (mode == Mode::eval) {
        if (!state.initialized)
            throw runtime_fault("batch_norm: eval requested before any training step "
                                "initialized the running statistics");
        for (int c = 0; c < C; ++c) {
            const T r = T(1) / std::sqrt(state.running_var[c] + T(eps));
            const T g = gamma[c], bt = beta[c], m = state.running_mean[c];
            for (int b = 0; b < B; ++b) {
                const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
                for (int64_t s = 0; s < hw; ++s) y[base + s] = g * ((x[base + s] - m) * r) + bt;
            }
        }
        return y;
    }

    if (n < 2)
        throw shape_error("batch_norm: training statistics need at least 2 samples per channel, got " +
                          std::to_string(n));
    if (state.running_mean.size() == 0) {
        state.running_mean = TensorT<T>({C});
        state.running_var = TensorT<T>::full({C}, T(1));
    }
    if (cache) {
        cache->xhat = TensorT<T>(x.shape());
        cache->invstd.assign(static_cast<size_t>(C), T(0));
    }
    for (int c = 0; c < C; ++c) {
        T mean = 0;
        for (int b = 0; b < B; ++b) {
            const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t s = 0; s < hw; ++s) mean += x[base + s];
        }
        mean /= T(n);
        T var = 0;
        for (int b = 0; b < B; ++b) {
            const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t s = 0; s < hw; ++s) {
                const T d = x[base + s] - mean;
                var += d * d;
            }
        }
        var /= T(n);
        const T r = T(1) / std::sqrt(var + T(eps));
        for (int b = 0; b < B; ++b) {
            const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t s = 0; s < hw; ++s) {
                const T xh = (x[base + s] - mean) * r;
                y[base + s] = gamma[c] * xh + beta[c];
                if (cache) cache->xhat[base + s] = xh;
            }
        }
        if (cache) cache->invstd[static_cast<size_t>(c)] = r;
        // Running estimates use the unbiased variance, as is conventional.
        const T unbiased = var * T(n) / T(n - 1);
        state.running_mean[c] = T(1 - momentum) * state.running_mean[c] + T(momentum) * mean;
        state.running_var[c] = T(1 - momentum) * state.running_var[c] + T(momentum) * unbiased;
    }
    state.initialized = true;
    return y;
}

template <typename T>
TensorT<T> batch_norm_backward(const NormCache<T>& cache, const TensorT<T>& gamma,
                               const TensorT<T>& dy, TensorT<T>* dgamma, TensorT<T>* dbeta) {
    const auto& xhat = cache.xhat;
    const int B = xhat.dim(0), C = xhat.dim(1), H = xhat.dim(2), W = xhat.dim(3);
    const int64_t hw = static_cast<int64_t>(H) * W;
    const int64_t n = static_cast<int64_t>(B) * hw;
    TensorT<T> dx(xhat.shape());
    for (int c = 0; c < C; ++c) {
        const T r = cache.invstd[static_cast<size_t>(c)];
        const T g = gamma[c];
        T sum_dy = 0, sum_dy_xh = 0;
        for (int b = 0; b < B; ++b) {
            const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t s = 0; s < hw; ++s) {
                sum_dy += dy[base + s];
                sum_dy_xh += dy[base + s] * xhat[base + s];
            }
        }
        if (dgamma) (*dgamma)[c] += sum_dy_xh;
        if (dbeta) (*dbeta)[c] += sum_dy;
        const T inv_n = T(1) / T(n);
        for (int b = 0; b < B; ++b) {
            const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t s = 0; s < hw; ++s)
                dx[base + s] = g * r *
                               (dy[base + s] - sum_dy * inv_n - xhat[base + s] * sum_dy_xh * inv_n);
        }
    }
    return dx;
}

// ---- pooling and resampling ------------------------------------------------

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
    require_rank(x.shape(), 4, "global_avg_pool input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t hw = static_cast<int64_t>(H) * W;
    TensorT<T> y({B, C, 1, 1});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* plane = &x.at4(b, c, 0, 0);
            T acc = 0;
            for (int64_t s = 0; s < hw; ++s) acc += plane[s];
            y.at4(b, c, 0, 0) = acc / T(hw);
        }
    return y;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const TensorT<T>& dy, int h, int w) {
    const int B = dy.dim(0), C = dy.dim(1);
    TensorT<T> dx({B, C, h, w});
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T g = dy.at4(b, c, 0, 0) / T(hw);
            T* plane = &dx.at4(b, c, 0, 0);
            for (int64_t s = 0; s < hw; ++s) plane[s] = g;
        }
    return dx;
}

template <typename T>
TensorT<T> channel_pool(const TensorT<T>& x) {
    require_rank(x.shape(), 4, "channel_pool input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    TensorT<T> y({B, 2, H, W});
    for (int b = 0; b < B; ++b)
        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx) {
                T acc = 0, mx = x.at4(b, 0, yy, xx);
                for (int c = 0; c < C; ++c) {
                    const T v = x.at4(b, c, yy, xx);
                    acc += v;
                    if (v > mx) mx = v;
                }
                y.at4(b, 0, yy, xx) = acc / T(C);
                y.at4(b, 1, yy, xx) = mx;
            }
    return y;
}

template <typename T>
TensorT<T> channel_pool_backward(const TensorT<T>& x, const TensorT<T>& dy) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    TensorT<T> dx(x.shape());
    for (int b = 0; b < B; ++b)
        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx) {
                const T gmean = dy.at4(b, 0, yy, xx) / T(C);
                int arg = 0;
                T mx = x.at4(b, 0, yy, xx);
                for (int c = 1; c < C; ++c) {
                    const T v = x.at4(b, c, yy, xx);
                    if (v > mx) {
                        mx = v;
                        arg = c;
                    }
                }
                for (int c = 0; c < C; ++c) dx.at4(b, c, yy, xx) = gmean;
                dx.at4(b, arg, yy, xx) += dy.at4(b, 1, yy, xx);
            }
    return dx;
}

namespace {

// Precomputed 1-D sample positions for half-pixel bilinear resampling.
struct LerpAxis {
    std::vector<int> lo;
    std::vector<double> frac;
};

LerpAxis lerp_axis(int out, int in) {
    LerpAxis a;
    a.lo.resize(out);
    a.frac.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        if (src > in - 1) src = in - 1;
        int lo = static_cast<int>(src);
        if (lo > in - 2) lo = in > 1 ? in - 2 : 0;
        a.lo[i] = lo;
        a.frac[i] = in > 1 ? src - lo : 0.0;
    }
    return a;
}

} // namespace

template <typename T>
TensorT<T> bilinear_upsample(const TensorT<T>& x, int out_h, int out_w) {
    require_rank(x.shape(), 4, "bilinear_upsample input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(out_h >= H && out_w >= W, "bilinear_upsample: output extents must not shrink input");
    const LerpAxis ay = lerp_axis(out_h, H);
    const LerpAxis ax = lerp_axis(out_w, W);
    TensorT<T> y({B, C, out_h, out_w});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < out_h; ++oy) {
                const int y0 = ay.lo[oy];
                const int y1 = H > 1 ? y0 + 1 : y0;
                const T fy = T(ay.frac[oy]);
                for (int ox = 0; ox < out_w; ++ox) {
                    const int x0 = ax.lo[ox];
                    const int x1 = W > 1 ? x0 + 1 : x0;
                    const T fx = T(ax.frac[ox]);
                    const T top = x.at4(b, c, y0, x0) * (T(1) - fx) + x.at4(b, c, y0, x1) * fx;
                    const T bot = x.at4(b, c, y1, x0) * (T(1) - fx) + x.at4(b, c, y1, x1) * fx;
                    y.at4(b, c, oy, ox) = top * (T(1) - fy) + bot * fy;
                }
            }
    return y;
}

template <typename T>
TensorT<T> bilinear_upsample_backward(const TensorT<T>& dy, int in_h, int in_w) {
    const int B = dy.dim(0), C = dy.dim(1), OH = dy.dim(2), OW = dy.dim(3);
    const LerpAxis ay = lerp_axis(OH, in_h);
    const LerpAxis ax = lerp_axis(OW, in_w);
    TensorT<T> dx({B, C, in_h, in_w});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < OH; ++oy) {
                const int y0 = ay.lo[oy];
                const int y1 = in_h > 1 ? y0 + 1 : y0;
                const T fy = T(ay.frac[oy]);
                for (int ox = 0; ox < OW; ++ox) {
                    const int x0 = ax.lo[ox];
                    const int x1 = in_w > 1 ? x0 + 1 : x0;
                    const T fx = T(ax.frac[ox]);
                    const T g = dy.at4(b, c, oy, ox);
                    dx.at4(b, c, y0, x0) += g * (T(1) - fy) * (T(1) - fx);
                    dx.at4(b, c, y0, x1) += g * (T(1) - fy) * fx;
                    dx.at4(b, c, y1, x0) += g * fy * (T(1) - fx);
                    dx.at4(b, c, y1, x1) += g * fy * fx;
                }
            }
    return dx;
}

// ---- explicit instantiations -----------------------------------------------

#define CATFA_INSTANTIATE_OPS(T)                                                                  \
    template void gemm_nn<T>(int, int, int, const T*, const T*, T*, bool);                        \
    template void gemm_nt<T>(int, int, int, const T*, const T*, T*, bool);                        \
    template void gemm_tn<T>(int, int, int, const T*, const T*, T*, bool);                        \
    template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                          \
    template void matmul_backward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                     TensorT<T>*, TensorT<T>*);                                   \
    template TensorT<T> transpose2d<T>(const TensorT<T>&);                                        \
    template TensorT<T> linear<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);       \
    template TensorT<T> linear_backward<T>(const TensorT<T>&, const TensorT<T>&,                  \
                                           const TensorT<T>&, TensorT<T>*, TensorT<T>*);          \
    template TensorT<T> concat<T>(const std::vector<TensorT<T>>&, int);                           \
    template std::vector<TensorT<T>> concat_backward<T>(const std::vector<TensorT<T>>&, int,      \
                                                        const TensorT<T>&);                       \
    template TensorT<T> slice<T>(const TensorT<T>&, int, int, int);                               \
    template TensorT<T> gelu<T>(const TensorT<T>&);                                               \
    template TensorT<T> gelu_backward<T>(const TensorT<T>&, const TensorT<T>&);                   \
    template TensorT<T> sigmoid<T>(const TensorT<T>&);                                            \
    template TensorT<T> sigmoid_backward<T>(const TensorT<T>&, const TensorT<T>&);                \
    template TensorT<T> softmax<T>(const TensorT<T>&, int);                                       \
    template TensorT<T> softmax_backward<T>(const TensorT<T>&, const TensorT<T>&, int);           \
    template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int,   \
                                  int, PadMode);                                                  \
    template TensorT<T> conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&, int, int,        \
                                           PadMode, const TensorT<T>&, TensorT<T>*, TensorT<T>*); \
    template TensorT<T> depthwise_conv2d<T>(const TensorT<T>&, const TensorT<T>&,                 \
                                            const TensorT<T>&, int, int, PadMode);                \
    template TensorT<T> depthwise_conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&, int,   \
                                                     int, PadMode, const TensorT<T>&,             \
                                                     TensorT<T>*, TensorT<T>*);                   \
    template TensorT<T> transposed_conv2d<T>(const TensorT<T>&, const TensorT<T>&,                \
                                             const TensorT<T>&, int);                             \
    template TensorT<T> transposed_conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&, int,  \
                                                      const TensorT<T>&, TensorT<T>*,             \
                                                      TensorT<T>*);                               \
    template TensorT<T> layer_norm<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                      double, NormCache<T>*);                                     \
    template TensorT<T> layer_norm_backward<T>(const NormCache<T>&, const TensorT<T>&,            \
                                               const TensorT<T>&, TensorT<T>*, TensorT<T>*);      \
    template TensorT<T> batch_norm<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                      BatchNormState<T>&, Mode, double, double, NormCache<T>*);   \
    template TensorT<T> batch_norm_backward<T>(const NormCache<T>&, const TensorT<T>&,            \
                                               const TensorT<T>&, TensorT<T>*, TensorT<T>*);      \
    template TensorT<T> global_avg_pool<T>(const TensorT<T>&);                                    \
    template TensorT<T> global_avg_pool_backward<T>(const TensorT<T>&, int, int);                 \
    template TensorT<T> channel_pool<T>(const TensorT<T>&);                                       \
    template TensorT<T> channel_pool_backward<T>(const TensorT<T>&, const TensorT<T>&);           \
    template TensorT<T> bilinear_upsample<T>(const TensorT<T>&, int, int);                        \
    template TensorT<T> bilinear_upsample_backward<T>(const TensorT<T>&, int, int);

CATFA_INSTANTIATE_OPS(float)
CATFA_INSTANTIATE_OPS(double)

#undef CATFA_INSTANTIATE_OPS

} // namespace catfa
