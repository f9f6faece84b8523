#pragma once

#include <vector>

#include "catfa/common.hpp"
#include "catfa/tensor.hpp"

namespace catfa {

// Primitive differentiable operations on BCHW tensors (and rank-2/3 token
// matrices). Each forward has a matching *_backward that consumes the
// cotangent of the output and produces cotangents of the inputs. Blocks
// compose these explicitly; there is no tape.
//
// All sums run in a fixed order, so repeated evaluations are bitwise
// reproducible.

// ---- dense linear algebra --------------------------------------------------

// C(m x n) = A(m x k) . B(k x n), optionally accumulating into C.
template <typename T>
void gemm_nn(int m, int k, int n, const T* A, const T* B, T* C, bool accumulate);

// C(m x n) = A(m x k) . B(n x k)^T
template <typename T>
void gemm_nt(int m, int k, int n, const T* A, const T* B, T* C, bool accumulate);

// C(m x n) = A(k x m)^T . B(k x n)
template <typename T>
void gemm_tn(int m, int k, int n, const T* A, const T* B, T* C, bool accumulate);

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
void matmul_backward(const TensorT<T>& a, const TensorT<T>& b, const TensorT<T>& dy,
                     TensorT<T>* da, TensorT<T>* db);

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a);

// y = x . w + bias over the last axis; x is rank 2 (N x in) or rank 3
// (B x N x in), w is (in x out), bias is (out).
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias);

template <typename T>
TensorT<T> linear_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                           TensorT<T>* dw, TensorT<T>* dbias); // returns dx; accumulates dw/dbias

// ---- shape surgery ---------------------------------------------------------

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis);

template <typename T>
std::vector<TensorT<T>> concat_backward(const std::vector<TensorT<T>>& parts, int axis,
                                        const TensorT<T>& dy);

template <typename T>
TensorT<T> slice(const TensorT<T>& a, int axis, int start, int len);

// ---- activations -----------------------------------------------------------

// Exact-erf GELU: x * Phi(x).
template <typename T>
TensorT<T> gelu(const TensorT<T>& x);

template <typename T>
TensorT<T> gelu_backward(const TensorT<T>& x, const TensorT<T>& dy);

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x);

// dy -> dx given the forward output y.
template <typename T>
TensorT<T> sigmoid_backward(const TensorT<T>& y, const TensorT<T>& dy);

// Numerically safe softmax along one axis (max subtraction).
template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis);

template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& y, const TensorT<T>& dy, int axis);

// ---- convolutions (BCHW) ---------------------------------------------------

// x: B x I x H x W, w: O x I x kh x kw, bias: O. Plain cross-correlation.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  int stride, int padding, PadMode mode = PadMode::zero);

template <typename T>
TensorT<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, int stride, int padding,
                           PadMode mode, const TensorT<T>& dy,
                           TensorT<T>* dw, TensorT<T>* dbias); // returns dx; accumulates dw/dbias

// x: B x C x H x W, w: C x k x k, bias: C. One filter per channel.
template <typename T>
TensorT<T> depthwise_conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                            int stride, int padding, PadMode mode = PadMode::zero);

template <typename T>
TensorT<T> depthwise_conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, int stride,
                                     int padding, PadMode mode, const TensorT<T>& dy,
                                     TensorT<T>* dw, TensorT<T>* dbias);

// x: B x I x H x W, w: I x O x k x k, bias: O; output (H-1)*stride + k.
template <typename T>
TensorT<T> transposed_conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                             int stride);

template <typename T>
TensorT<T> transposed_conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, int stride,
                                      const TensorT<T>& dy, TensorT<T>* dw, TensorT<T>* dbias);

// ---- normalization ---------------------------------------------------------

// Saved statistics a norm backward needs: the normalized activations and the
// reciprocal standard deviation per group.
template <typename T>
struct NormCache {
    TensorT<T> xhat;
    std::vector<T> invstd;
};

// Normalizes over the channel axis at every (b, y, x) site; gamma/beta: C.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      double eps, NormCache<T>* cache = nullptr);

template <typename T>
TensorT<T> layer_norm_backward(const NormCache<T>& cache, const TensorT<T>& gamma,
                               const TensorT<T>& dy, TensorT<T>* dgamma, TensorT<T>* dbeta);

template <typename T>
struct BatchNormState {
    TensorT<T> running_mean;
    TensorT<T> running_var;
    bool initialized = false;
};

// Train mode normalizes by per-channel batch statistics (biased variance) and
// folds them into the running estimates; eval mode uses the running
// estimates and refuses to run before any training step initialized them.
template <typename T>
TensorT<T> batch_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      BatchNormState<T>& state, Mode mode, double eps, double momentum,
                      NormCache<T>* cache = nullptr);

// Backward through a train-mode application (batch statistics).
template <typename T>
TensorT<T> batch_norm_backward(const NormCache<T>& cache, const TensorT<T>& gamma,
                               const TensorT<T>& dy, TensorT<T>* dgamma, TensorT<T>* dbeta);

// ---- pooling and resampling ------------------------------------------------

// B x C x H x W -> B x C x 1 x 1 (spatial mean).
template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x);

template <typename T>
TensorT<T> global_avg_pool_backward(const TensorT<T>& dy, int h, int w);

// B x C x H x W -> B x 2 x H x W: plane 0 channel-mean, plane 1 channel-max.
template <typename T>
TensorT<T> channel_pool(const TensorT<T>& x);

// Max gradient routes to the first maximal channel.
template <typename T>
TensorT<T> channel_pool_backward(const TensorT<T>& x, const TensorT<T>& dy);

// Bilinear resize with half-pixel centers (align_corners = false). Output
// extents must be >= input extents.
template <typename T>
TensorT<T> bilinear_upsample(const TensorT<T>& x, int out_h, int out_w);

template <typename T>
TensorT<T> bilinear_upsample_backward(const TensorT<T>& dy, int in_h, int in_w);

} // namespace catfa
