#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cacc/tensor.hpp"

namespace cacc {

// Adam optimizer with bias correction, bound to a fixed list of parameter
// tensors. Moment buffers are laid out per tensor; update order is the bind
// order, so repeated runs are bit-identical.
template <typename T>
class Adam {
public:
    T lr;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);

    Adam(std::vector<Tensor<T>*> params, T learning_rate) : lr(learning_rate), params_(std::move(params)) {
        if (!(lr > T(0))) throw std::invalid_argument("Adam: learning rate must be positive");
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            params_[i]->ensure_grad();
            m_[i].assign(params_[i]->data.size(), T(0));
            v_[i].assign(params_[i]->data.size(), T(0));
        }
    }

    void zero_grad() {
        for (Tensor<T>* p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor<T>& p = *params_[i];
            if (!all_finite(p.grad)) throw NumericError("Adam: non-finite gradient");
            for (size_t j = 0; j < p.data.size(); ++j) {
                const T g = p.grad[j];
                m_[i][j] = beta1 * m_[i][j] + (T(1) - beta1) * g;
                v_[i][j] = beta2 * v_[i][j] + (T(1) - beta2) * g * g;
                const T mh = m_[i][j] / bc1;
                const T vh = v_[i][j] / bc2;
                p.data[j] -= lr * mh / (std::sqrt(vh) + eps);
            }
            if (!all_finite(p.data)) throw NumericError("Adam: non-finite parameter after update");
        }
    }

    long long steps_taken() const { return t_; }

private:
    std::vector<Tensor<T>*> params_;
    std::vector<std::vector<T>> m_, v_;
    long long t_ = 0;
};

}  // namespace cacc
