#include "catfa/loss.hpp"

#include "catfa/common.hpp"

namespace catfa {

namespace {

// Numerator / denominator of one overlap term, accumulated in index order.
template <typename T>
struct OverlapTerm {
    T num = 0; // sum x.y + eps
    T den = 0; // sum (x+y) + eps
};

template <typename T, typename GetX, typename GetY>
OverlapTerm<T> overlap_term(int64_t n, double eps, GetX x, GetY y) {
    T sum_xy = 0, sum_x_plus_y = 0;
    for (int64_t i = 0; i < n; ++i) {
        sum_xy += x(i) * y(i);
        sum_x_plus_y += x(i) + y(i);
    }
    OverlapTerm<T> t;
    t.num = sum_xy + static_cast<T>(eps);
    t.den = sum_x_plus_y + static_cast<T>(eps);
    return t;
}

} // namespace

template <typename T>
T generalized_dice_loss(const TensorT<T>& p, const TensorT<T>& r, double eps, TensorT<T>* dp) {
    check_same_shape(p, r, "dice loss");
    if (eps <= 0) throw config_error("dice loss: eps must be > 0");
    const int64_t n = p.size();
    for (int64_t i = 0; i < n; ++i)
        if (!(p[i] >= T(0) && p[i] <= T(1)))
            throw runtime_fault("dice loss: probabilities must lie in [0,1], found value at index " +
                                std::to_string(i));

    const auto fg = overlap_term<T>(n, eps, [&](int64_t i) { return p[i]; },
                                    [&](int64_t i) { return r[i]; });
    const auto bg = overlap_term<T>(n, eps, [&](int64_t i) { return T(1) - p[i]; },
                                    [&](int64_t i) { return T(1) - r[i]; });
    // Combine as 1 - (t1 + t2): IEEE addition commutes bitwise, so the class
    // swap (which exchanges the two ratios) cannot change the result.
    const T loss = T(1) - (fg.num / fg.den + bg.num / bg.den);

    if (dp) {
        *dp = TensorT<T>(p.shape());
        const T d1sq = fg.den * fg.den;
        const T d2sq = bg.den * bg.den;
        for (int64_t i = 0; i < n; ++i) {
            const T s = T(1) - r[i];
            (*dp)[i] = -(r[i] * fg.den - fg.num) / d1sq + (s * bg.den - bg.num) / d2sq;
        }
    }
    return loss;
}

template float generalized_dice_loss<float>(const TensorT<float>&, const TensorT<float>&, double,
                                            TensorT<float>*);
template double generalized_dice_loss<double>(const TensorT<double>&, const TensorT<double>&,
                                              double, TensorT<double>*);

} // namespace catfa
