#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cacc/graph.hpp"
#include "cacc/tensor.hpp"

namespace cacc {

enum class LayerKind {
    Conv2d,         // stride 1, zero padding k/2, square odd kernel
    MaxPool2,       // 2x2 window, stride 2; input dims must be even
    Upsample2,      // nearest-neighbour x2
    Relu,
    Sigmoid,
    Softmax2,       // softmax over a 2-vector
    GlobalAvgPool,  // (C,H,W) -> (C)
    GradReverse,    // identity forward, gradient scaled by -lambda
    Linear,
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::MaxPool2: return "maxpool2";
        case LayerKind::Upsample2: return "upsample2";
        case LayerKind::Relu: return "relu";
        case LayerKind::Sigmoid: return "sigmoid";
        case LayerKind::Softmax2: return "softmax2";
        case LayerKind::GlobalAvgPool: return "gap";
        case LayerKind::GradReverse: return "grad_reverse";
        case LayerKind::Linear: return "linear";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind;
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 3;           // Conv2d only
    double grl_lambda = 1.0;  // GradReverse only
};

inline LayerSpec conv(int in_ch, int out_ch, int kernel = 3) {
    return LayerSpec{LayerKind::Conv2d, in_ch, out_ch, kernel, 1.0};
}
inline LayerSpec linear(int in_ch, int out_ch) {
    return LayerSpec{LayerKind::Linear, in_ch, out_ch, 0, 1.0};
}
inline LayerSpec grad_reverse(double lambda) {
    return LayerSpec{LayerKind::GradReverse, 0, 0, 0, lambda};
}
inline LayerSpec relu() { return LayerSpec{LayerKind::Relu, 0, 0, 0, 1.0}; }
inline LayerSpec maxpool2() { return LayerSpec{LayerKind::MaxPool2, 0, 0, 0, 1.0}; }
inline LayerSpec upsample2() { return LayerSpec{LayerKind::Upsample2, 0, 0, 0, 1.0}; }
inline LayerSpec sigmoid() { return LayerSpec{LayerKind::Sigmoid, 0, 0, 0, 1.0}; }
inline LayerSpec softmax2() { return LayerSpec{LayerKind::Softmax2, 0, 0, 0, 1.0}; }
inline LayerSpec global_avg_pool() { return LayerSpec{LayerKind::GlobalAvgPool, 0, 0, 0, 1.0}; }

// A layer instance: the spec plus parameter tensors for Conv2d / Linear
// (empty for parameter-free kinds). Gradient buffers are always allocated.
template <typename T>
struct Layer {
    LayerSpec spec;
    Tensor<T> w;
    Tensor<T> b;

    bool has_params() const {
        return spec.kind == LayerKind::Conv2d || spec.kind == LayerKind::Linear;
    }
};

template <typename T>
Layer<T> make_layer(const LayerSpec& spec) {
    Layer<T> layer;
    layer.spec = spec;
    switch (spec.kind) {
        case LayerKind::Conv2d:
            if (spec.in_ch <= 0 || spec.out_ch <= 0)
                throw std::invalid_argument("make_layer: conv2d needs positive channel counts");
            if (spec.kernel <= 0 || spec.kernel % 2 == 0)
                throw std::invalid_argument("make_layer: conv2d kernel must be odd and positive");
            layer.w = Tensor<T>({spec.out_ch, spec.in_ch, spec.kernel, spec.kernel});
            layer.b = Tensor<T>({spec.out_ch});
            break;
        case LayerKind::Linear:
            if (spec.in_ch <= 0 || spec.out_ch <= 0)
                throw std::invalid_argument("make_layer: linear needs positive sizes");
            layer.w = Tensor<T>({spec.out_ch, spec.in_ch});
            layer.b = Tensor<T>({spec.out_ch});
            break;
        case LayerKind::GradReverse:
            if (!(spec.grl_lambda > 0.0))
                throw std::invalid_argument("make_layer: grad_reverse lambda must be positive");
            break;
        default:
            break;
    }
    if (layer.has_params()) {
        layer.w.ensure_grad();
        layer.b.ensure_grad();
    }
    return layer;
}

template <typename T>
int forward(Graph<T>& g, Layer<T>& layer, int x) {
    switch (layer.spec.kind) {
        case LayerKind::Conv2d: return g.conv2d(x, &layer.w, &layer.b);
        case LayerKind::MaxPool2: return g.maxpool2(x);
        case LayerKind::Upsample2: return g.upsample2(x);
        case LayerKind::Relu: return g.relu(x);
        case LayerKind::Sigmoid: return g.sigmoid(x);
        case LayerKind::Softmax2: return g.softmax2(x);
        case LayerKind::GlobalAvgPool: return g.global_avg_pool(x);
        case LayerKind::GradReverse: return g.grad_reverse(x, static_cast<T>(layer.spec.grl_lambda));
        case LayerKind::Linear: return g.linear(x, &layer.w, &layer.b);
    }
    throw std::invalid_argument("forward: unknown layer kind");
}

// Inference-only forward pass using the raw kernels; no tape is recorded.
template <typename T>
Tensor<T> forward_nograd(const Layer<T>& layer, const Tensor<T>& x) {
    const LayerSpec& s = layer.spec;
    switch (s.kind) {
        case LayerKind::Conv2d: {
            if (x.rank() != 3 || x.dim(0) != s.in_ch)
                throw std::invalid_argument("conv2d: bad input shape " + shape_str(x.shape));
            Tensor<T> out({s.out_ch, x.dim(1), x.dim(2)});
            kern::conv2d_fwd(x.ptr(), layer.w.ptr(), layer.b.ptr(), out.ptr(),
                             s.in_ch, s.out_ch, x.dim(1), x.dim(2), s.kernel);
            check_finite(out, "conv2d");
            return out;
        }
        case LayerKind::MaxPool2: {
            if (x.rank() != 3 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
                throw std::invalid_argument("maxpool2: bad input shape " + shape_str(x.shape));
            Tensor<T> out({x.dim(0), x.dim(1) / 2, x.dim(2) / 2});
            std::vector<int32_t> argmax(static_cast<size_t>(out.numel()));
            kern::maxpool2_fwd(x.ptr(), out.ptr(), argmax.data(), x.dim(0), x.dim(1), x.dim(2));
            return out;
        }
        case LayerKind::Upsample2: {
            if (x.rank() != 3) throw std::invalid_argument("upsample2: bad input shape");
            Tensor<T> out({x.dim(0), 2 * x.dim(1), 2 * x.dim(2)});
            kern::upsample2_fwd(x.ptr(), out.ptr(), x.dim(0), x.dim(1), x.dim(2));
            return out;
        }
        case LayerKind::Relu: {
            Tensor<T> out(x.shape);
            for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
            return out;
        }
        case LayerKind::Sigmoid: {
            Tensor<T> out(x.shape);
            for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = kern::stable_sigmoid(x.data[i]);
            return out;
        }
        case LayerKind::Softmax2: {
            if (x.numel() != 2) throw std::invalid_argument("softmax2: input must have 2 values");
            Tensor<T> out(x.shape);
            kern::softmax2_pair(x.data[0], x.data[1], out.data[0], out.data[1]);
            return out;
        }
        case LayerKind::GlobalAvgPool: {
            if (x.rank() != 3) throw std::invalid_argument("gap: bad input shape");
            const int c = x.dim(0), plane = x.dim(1) * x.dim(2);
            Tensor<T> out({c});
            for (int ch = 0; ch < c; ++ch)
                out.data[static_cast<size_t>(ch)] = kern::dot4_ones(x.ptr() + ch * plane, plane) / T(plane);
            return out;
        }
        case LayerKind::GradReverse:
            return x;
        case LayerKind::Linear: {
            if (x.numel() != s.in_ch) throw std::invalid_argument("linear: bad input size");
            Tensor<T> out({s.out_ch});
            for (int i = 0; i < s.out_ch; ++i)
                out.data[static_cast<size_t>(i)] =
                    layer.b.data[static_cast<size_t>(i)] + kern::dot4(layer.w.ptr() + i * s.in_ch, x.ptr(), s.in_ch);
            check_finite(out, "linear");
            return out;
        }
    }
    throw std::invalid_argument("forward_nograd: unknown layer kind");
}

// An ordered stack of layers applied front to back.
template <typename T>
struct Sequential {
    std::vector<Layer<T>> layers;

    Sequential() = default;
    explicit Sequential(const std::vector<LayerSpec>& specs) {
        layers.reserve(specs.size());
        for (const LayerSpec& s : specs) layers.push_back(make_layer<T>(s));
    }

    int forward(Graph<T>& g, int x) {
        for (Layer<T>& l : layers) x = cacc::forward(g, l, x);
        return x;
    }

    Tensor<T> forward_nograd(const Tensor<T>& x) const {
        Tensor<T> cur = x;
        for (const Layer<T>& l : layers) cur = cacc::forward_nograd(l, cur);
        return cur;
    }

    std::vector<Tensor<T>*> params() {
        std::vector<Tensor<T>*> out;
        for (Layer<T>& l : layers) {
            if (l.has_params()) {
                out.push_back(&l.w);
                out.push_back(&l.b);
            }
        }
        return out;
    }

    // Stable hierarchical names for checkpoints: <prefix><index>.w / .b
    std::vector<std::pair<std::string, Tensor<T>*>> named_params(const std::string& prefix) {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for (size_t i = 0; i < layers.size(); ++i) {
            if (!layers[i].has_params()) continue;
            out.emplace_back(prefix + std::to_string(i) + ".w", &layers[i].w);
            out.emplace_back(prefix + std::to_string(i) + ".b", &layers[i].b);
        }
        return out;
    }

    void zero_grad() {
        for (Layer<T>& l : layers) {
            if (l.has_params()) {
                l.w.zero_grad();
                l.b.zero_grad();
            }
        }
    }
};

// Glorot/Xavier uniform initialisation: weights ~ U(-a, a) with
// a = sqrt(6 / (fan_in + fan_out)); biases start at zero. Draw order is
// fixed (layer order, row-major within each tensor), so a given seed
// always produces the same parameters.
template <typename T>
void glorot_init(Sequential<T>& net, std::mt19937& rng) {
    for (Layer<T>& l : net.layers) {
        if (!l.has_params()) continue;
        double fan_in = 0, fan_out = 0;
        if (l.spec.kind == LayerKind::Conv2d) {
            fan_in = static_cast<double>(l.spec.in_ch) * l.spec.kernel * l.spec.kernel;
            fan_out = static_cast<double>(l.spec.out_ch) * l.spec.kernel * l.spec.kernel;
        } else {
            fan_in = l.spec.in_ch;
            fan_out = l.spec.out_ch;
        }
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-a, a);
        for (T& v : l.w.data) v = static_cast<T>(dist(rng));
        for (T& v : l.b.data) v = T(0);
    }
}

template <typename T>
void glorot_init(Sequential<T>& net, uint32_t seed) {
    std::mt19937 rng(seed);
    glorot_init(net, rng);
}

}  // namespace cacc
