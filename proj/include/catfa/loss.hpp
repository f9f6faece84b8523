#pragma once

#include "catfa/tensor.hpp"

namespace catfa {

// Generalized Dice loss over probabilities p and binary reference r:
//
//   L = 1 - A(p, r) - A(1-p, 1-r),   A(x, y) = (sum x.y + eps) / (sum (x+y) + eps)
//
// The two terms score foreground and background overlap; both ratios tend to
// 1/2 for a perfect prediction with both classes present, so L tends to 0.
// Computing each term through the same accumulator A makes the class swap
// (p, r) -> (1-p, 1-r) exchange the terms exactly: multiplication and
// addition commute bitwise, so A(x, y) == A(y, x) for any operand order.
//
// If `dp` is non-null it receives dL/dp (fresh tensor, same shape as p).
// Throws runtime_fault when p leaves [0, 1] (NaN included), shape_error on
// shape mismatch.
template <typename T>
T generalized_dice_loss(const TensorT<T>& p, const TensorT<T>& r, double eps = 1e-6,
                        TensorT<T>* dp = nullptr);

} // namespace catfa
