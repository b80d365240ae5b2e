#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cacc {

// Dense row-major n-d array with an optional gradient buffer of the same
// shape. Float for training, double for gradient checking.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty unless allocated via ensure_grad()

    Tensor() = default;

    explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
        }
        data.assign(static_cast<size_t>(numel_of(shape)), fill);
    }

    Tensor(std::vector<int> s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (static_cast<long long>(data.size()) != numel_of(shape))
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static long long numel_of(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) n *= d;
        return n;
    }

    long long numel() const { return static_cast<long long>(data.size()); }

    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(shape.size()); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
    bool has_grad() const { return grad.size() == data.size() && !data.empty(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    T& at(size_t i) { return data[i]; }
    const T& at(size_t i) const { return data[i]; }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
inline bool all_finite(const std::vector<T>& v) {
    for (T x : v) {
        if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
}

// Thrown when a forward/backward pass or a loss produces NaN/Inf.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* where) {
    if (!all_finite(t.data)) throw NumericError(std::string("non-finite values in ") + where);
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

}  // namespace cacc
