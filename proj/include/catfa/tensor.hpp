#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "catfa/common.hpp"

namespace catfa {

// Dense row-major tensor of rank 1..4. Value semantics: ops return fresh
// tensors, nothing aliases. Two instantiations are used throughout the
// project: float for training-speed paths, double for oracle and gradient
// work.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<size_t>(count(shape_)), T(0));
    }

    TensorT(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<int64_t>(data_.size()) != count(shape_))
            throw shape_error("tensor: data size " + std::to_string(data_.size()) +
                              " does not match shape volume " + std::to_string(count(shape_)));
    }

    static TensorT full(std::vector<int> shape, T v) {
        TensorT t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static TensorT zeros_like(const TensorT& o) { return TensorT(o.shape_); }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Rank-specific accessors; offsets are hot paths so no bounds checks here.
    T& at2(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    const T& at2(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }

    T& at3(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    const T& at3(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    T& at4(int b, int c, int y, int x) {
        return data_[((static_cast<size_t>(b) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    const T& at4(int b, int c, int y, int x) const {
        return data_[((static_cast<size_t>(b) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    // Same data, new shape (volume must match).
    TensorT reshaped(std::vector<int> new_shape) const {
        if (count(new_shape) != size())
            throw shape_error("reshape: volume mismatch, have " + std::to_string(size()) +
                              " want " + std::to_string(count(new_shape)));
        TensorT out;
        out.shape_ = std::move(new_shape);
        out.data_ = data_;
        return out;
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    void validate_shape() const {
        if (shape_.empty() || shape_.size() > 4)
            throw shape_error("tensor: rank must be 1..4, got " + std::to_string(shape_.size()));
        for (int d : shape_)
            if (d < 1) throw shape_error("tensor: extents must be positive, got shape " + shape_str());
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

using Tensor32 = TensorT<float>;
using Tensor64 = TensorT<double>;

// ---- elementwise helpers -------------------------------------------------

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* who) {
    if (!a.same_shape(b))
        throw shape_error(std::string(who) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "add");
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "sub");
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "mul");
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

template <typename T>
void add_into(TensorT<T>& acc, const TensorT<T>& g) {
    check_same_shape(acc, g, "add_into");
    for (int64_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

template <typename T>
T sum(const TensorT<T>& a) {
    T s = 0;
    for (int64_t i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

template <typename T>
T dot(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "dot");
    T s = 0;
    for (int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
T max_abs(const TensorT<T>& a) {
    T m = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const T v = a[i] < 0 ? -a[i] : a[i];
        if (v > m) m = v;
    }
    return m;
}

template <typename T>
T max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "max_abs_diff");
    T m = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        T v = a[i] - b[i];
        if (v < 0) v = -v;
        if (v > m) m = v;
    }
    return m;
}

template <typename T>
bool all_finite(const TensorT<T>& a) {
    for (int64_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(static_cast<double>(a[i]))) return false;
    return true;
}

template <typename T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

// Precision conversions (float training checkpoints <-> double test rigs).
template <typename To, typename From>
TensorT<To> cast(const TensorT<From>& a) {
    TensorT<To> out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = static_cast<To>(a[i]);
    return out;
}

} // namespace catfa
