#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cacc/tensor.hpp"

namespace cacc {

// Raw compute kernels shared by the recording graph and the no-grad forward
// paths. All convolutions are stride 1 with zero padding k/2 (size preserving);
// pooling is fixed 2x2/stride 2. Loops are ordered so the contiguous x run is
// innermost; accumulation order is fixed, so results are bit-reproducible.
namespace kern {

// valid output range [lo,hi) for index i such that i + off stays in [0, n)
inline void clip_range(int off, int n, int& lo, int& hi) {
    lo = off < 0 ? -off : 0;
    hi = off > 0 ? n - off : n;
}

template <typename T>
void conv2d_fwd(const T* x, const T* w, const T* b, T* y,
                int ci, int co, int h, int wd, int k) {
    const int p = k / 2;
    const int plane = h * wd;
    for (int oc = 0; oc < co; ++oc) {
        T* yo = y + oc * plane;
        const T bias = b ? b[oc] : T(0);
        for (int i = 0; i < plane; ++i) yo[i] = bias;
        for (int ic = 0; ic < ci; ++ic) {
            const T* xi = x + ic * plane;
            const T* wk = w + (oc * ci + ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                const int oy = ky - p;
                int y0, y1;
                clip_range(oy, h, y0, y1);
                for (int kx = 0; kx < k; ++kx) {
                    const int ox = kx - p;
                    int x0, x1;
                    clip_range(ox, wd, x0, x1);
                    const T wv = wk[ky * k + kx];
                    for (int yy = y0; yy < y1; ++yy) {
                        const T* xr = xi + (yy + oy) * wd + ox;
                        T* yr = yo + yy * wd;
                        for (int xx = x0; xx < x1; ++xx) yr[xx] += wv * xr[xx];
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_bwd_input(const T* dy, const T* w, T* dx,
                      int ci, int co, int h, int wd, int k) {
    const int p = k / 2;
    const int plane = h * wd;
    for (int ic = 0; ic < ci; ++ic) {
        T* dxi = dx + ic * plane;
        for (int oc = 0; oc < co; ++oc) {
            const T* dyo = dy + oc * plane;
            const T* wk = w + (oc * ci + ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                const int oy = ky - p;
                int y0, y1;
                clip_range(-oy, h, y0, y1);
                for (int kx = 0; kx < k; ++kx) {
                    const int ox = kx - p;
                    int x0, x1;
                    clip_range(-ox, wd, x0, x1);
                    const T wv = wk[ky * k + kx];
                    for (int yy = y0; yy < y1; ++yy) {
                        const T* dyr = dyo + (yy - oy) * wd - ox;
                        T* dxr = dxi + yy * wd;
                        for (int xx = x0; xx < x1; ++xx) dxr[xx] += wv * dyr[xx];
                    }
                }
            }
        }
    }
}

// dot product with four explicit partial sums; accumulation order is fixed
// and the compiler can vectorize it without reassociation licenses
template <typename T>
T dot4(const T* a, const T* b, int n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    T tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

template <typename T>
T dot4_ones(const T* a, int n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i];
        s1 += a[i + 1];
        s2 += a[i + 2];
        s3 += a[i + 3];
    }
    T tail = 0;
    for (; i < n; ++i) tail += a[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

template <typename T>
void conv2d_bwd_params(const T* x, const T* dy, T* dw, T* db,
                       int ci, int co, int h, int wd, int k) {
    const int p = k / 2;
    const int plane = h * wd;
    for (int oc = 0; oc < co; ++oc) {
        const T* dyo = dy + oc * plane;
        if (db) db[oc] += dot4_ones(dyo, plane);
        for (int ic = 0; ic < ci; ++ic) {
            const T* xi = x + ic * plane;
            T* wk = dw + (oc * ci + ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                const int oy = ky - p;
                int y0, y1;
                clip_range(oy, h, y0, y1);
                for (int kx = 0; kx < k; ++kx) {
                    const int ox = kx - p;
                    int x0, x1;
                    clip_range(ox, wd, x0, x1);
                    T acc = 0;
                    for (int yy = y0; yy < y1; ++yy) {
                        const T* dyr = dyo + yy * wd + x0;
                        const T* xr = xi + (yy + oy) * wd + ox + x0;
                        acc += dot4(dyr, xr, x1 - x0);
                    }
                    wk[ky * k + kx] += acc;
                }
            }
        }
    }
}

// 2x2/stride-2 max pooling; ties resolved to the first element in scan order
template <typename T>
void maxpool2_fwd(const T* x, T* y, int32_t* argmax, int c, int h, int wd) {
    const int oh = h / 2, ow = wd / 2;
    for (int ch = 0; ch < c; ++ch) {
        const T* xc = x + ch * h * wd;
        T* yc = y + ch * oh * ow;
        int32_t* ac = argmax + ch * oh * ow;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                int best = (2 * i) * wd + 2 * j;
                T bv = xc[best];
                const int cand[3] = {(2 * i) * wd + 2 * j + 1, (2 * i + 1) * wd + 2 * j,
                                     (2 * i + 1) * wd + 2 * j + 1};
                for (int idx : cand) {
                    if (xc[idx] > bv) {
                        bv = xc[idx];
                        best = idx;
                    }
                }
                yc[i * ow + j] = bv;
                ac[i * ow + j] = best;
            }
        }
    }
}

template <typename T>
void upsample2_fwd(const T* x, T* y, int c, int h, int wd) {
    const int oh = 2 * h, ow = 2 * wd;
    for (int ch = 0; ch < c; ++ch) {
        const T* xc = x + ch * h * wd;
        T* yc = y + ch * oh * ow;
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < wd; ++j) {
                const T v = xc[i * wd + j];
                T* r0 = yc + (2 * i) * ow + 2 * j;
                r0[0] = v;
                r0[1] = v;
                r0[ow] = v;
                r0[ow + 1] = v;
            }
        }
    }
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// Softmax over two logits. The larger probability is rounded first, then the
// smaller is taken as its exact floating-point complement (any value in
// (0.5, 1] has one), so both outputs are strictly positive and their exact
// real sum is 1 in every precision. The clamp keeps the pair positive when
// the true small probability underflows.
template <typename T>
void softmax2_pair(T a, T b, T& p0, T& p1) {
    const T t = std::exp(a >= b ? b - a : a - b);  // in (0, 1]
    T big = T(1) - t / (T(1) + t);
    if (big >= T(1)) big = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    const T small = T(1) - big;  // exact
    if (a >= b) {
        p0 = big;
        p1 = small;
    } else {
        p0 = small;
        p1 = big;
    }
}

}  // namespace kern

// Reverse-mode tape. Nodes are appended in topological order during the
// forward pass; backward() walks them in reverse. Parameters are persistent
// tensors owned by the networks; their gradients accumulate in-place.
template <typename T>
class Graph {
public:
    struct Node {
        Tensor<T> value;
        std::vector<T> grad;
        std::function<void(Graph&)> backprop;  // empty for leaves
    };

    std::vector<Node> nodes;

    const Tensor<T>& value(int id) const { return nodes[static_cast<size_t>(id)].value; }
    const std::vector<T>& grad(int id) const { return nodes[static_cast<size_t>(id)].grad; }
    T scalar(int id) const {
        const Tensor<T>& v = value(id);
        if (v.numel() != 1) throw std::invalid_argument("scalar(): node is not a scalar");
        return v.data[0];
    }

    int input(Tensor<T> v) {
        check_finite(v, "input");
        return push(std::move(v), {});
    }

    int conv2d(int x, Tensor<T>* w, Tensor<T>* b) {
        const Tensor<T>& xv = value(x);
        if (xv.rank() != 3) throw std::invalid_argument("conv2d: input must be (C,H,W)");
        if (w->rank() != 4) throw std::invalid_argument("conv2d: weights must be (Co,Ci,k,k)");
        const int co = w->dim(0), ci = w->dim(1), k = w->dim(2);
        if (w->dim(3) != k || k % 2 == 0) throw std::invalid_argument("conv2d: kernel must be square and odd");
        if (xv.dim(0) != ci)
            throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(xv.shape) +
                                        " vs weights " + shape_str(w->shape));
        const int h = xv.dim(1), wd = xv.dim(2);
        w->ensure_grad();
        if (b) b->ensure_grad();
        Tensor<T> out({co, h, wd});
        kern::conv2d_fwd(xv.ptr(), w->ptr(), b ? b->ptr() : nullptr, out.ptr(), ci, co, h, wd, k);
        check_finite(out, "conv2d");
        int self = push(std::move(out), [self = next_id(), x, w, b, ci, co, h, wd, k](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& xin = g.nodes[static_cast<size_t>(x)];
            kern::conv2d_bwd_input(n.grad.data(), w->ptr(), xin.grad.data(), ci, co, h, wd, k);
            kern::conv2d_bwd_params(xin.value.ptr(), n.grad.data(), w->grad.data(),
                                    b ? b->grad.data() : nullptr, ci, co, h, wd, k);
        });
        return self;
    }

    int maxpool2(int x) {
        const Tensor<T>& xv = value(x);
        if (xv.rank() != 3) throw std::invalid_argument("maxpool2: input must be (C,H,W)");
        const int c = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
        if (h % 2 != 0 || wd % 2 != 0)
            throw std::invalid_argument("maxpool2: spatial dims must be even, got " + shape_str(xv.shape));
        Tensor<T> out({c, h / 2, wd / 2});
        auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(out.numel()));
        kern::maxpool2_fwd(xv.ptr(), out.ptr(), argmax->data(), c, h, wd);
        return push(std::move(out), [self = next_id(), x, argmax, c, h, wd](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& xin = g.nodes[static_cast<size_t>(x)];
            const int plane = (h / 2) * (wd / 2);
            for (int ch = 0; ch < c; ++ch) {
                for (int i = 0; i < plane; ++i) {
                    xin.grad[static_cast<size_t>(ch * h * wd + (*argmax)[static_cast<size_t>(ch * plane + i)])] +=
                        n.grad[static_cast<size_t>(ch * plane + i)];
                }
            }
        });
    }

    int upsample2(int x) {
        const Tensor<T>& xv = value(x);
        if (xv.rank() != 3) throw std::invalid_argument("upsample2: input must be (C,H,W)");
        const int c = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
        Tensor<T> out({c, 2 * h, 2 * wd});
        kern::upsample2_fwd(xv.ptr(), out.ptr(), c, h, wd);
        return push(std::move(out), [self = next_id(), x, c, h, wd](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& xin = g.nodes[static_cast<size_t>(x)];
            const int ow = 2 * wd;
            for (int ch = 0; ch < c; ++ch) {
                const T* gy = n.grad.data() + ch * 4 * h * wd;
                T* gx = xin.grad.data() + ch * h * wd;
                for (int i = 0; i < h; ++i) {
                    for (int j = 0; j < wd; ++j) {
                        const T* r0 = gy + (2 * i) * ow + 2 * j;
                        gx[i * wd + j] += (r0[0] + r0[1]) + (r0[ow] + r0[ow + 1]);
                    }
                }
            }
        });
    }

    int relu(int x) {
        const Tensor<T>& xv = value(x);
        Tensor<T> out(xv.shape);
        for (size_t i = 0; i < xv.data.size(); ++i) out.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
        return push(std::move(out), [self = next_id(), x](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& xin = g.nodes[static_cast<size_t>(x)];
            for (size_t i = 0; i < n.grad.size(); ++i)
                if (xin.value.data[i] > T(0)) xin.grad[i] += n.grad[i];
        });
    }

    int sigmoid(int x) {
        const Tensor<T>& xv = value(x);
        Tensor<T> out(xv.shape);
        for (size_t i = 0; i < xv.data.size(); ++i) out.data[i] = kern::stable_sigmoid(xv.data[i]);
        return push(std::move(out), [self = next_id(), x](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& xin = g.nodes[static_cast<size_t>(x)];
            for (size_t i = 0; i < n.grad.size(); ++i) {
                const T y = n.value.data[i];
                xin.grad[i] += n.grad[i] * y * (T(1) - y);
            }
        });
    }

    // softmax over a pair of scalars; outputs are strictly positive and
    // sum to 1 exactly
    int softmax2(int x) {
        const Tensor<T>& xv = value(x);
        if (xv.numel() != 2) throw std::invalid_argument("softmax2: input must have exactly 2 values");
        Tensor<T> out(xv.shape);
        kern::softmax2_pair(xv.data[0], xv.data[1], out.data[0], out.data[1]);
        check_finite(out, "softmax2");
        return push(std::move(out), [self = next_id(), x](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& xin = g.nodes[static_cast<size_t>(x)];
            const T pq = n.value.data[0] * n.value.data[1];
            const T d = (n.grad[0] - n.grad[1]) * pq;
            xin.grad[0] += d;
            xin.grad[1] -= d;
        });
    }

    int global_avg_pool(int x) {
        const Tensor<T>& xv = value(x);
        if (xv.rank() != 3) throw std::invalid_argument("global_avg_pool: input must be (C,H,W)");
        const int c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
        Tensor<T> out({c});
        for (int ch = 0; ch < c; ++ch)
            out.data[static_cast<size_t>(ch)] = kern::dot4_ones(xv.ptr() + ch * plane, plane) / T(plane);
        return push(std::move(out), [self = next_id(), x, c, plane](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& xin = g.nodes[static_cast<size_t>(x)];
            for (int ch = 0; ch < c; ++ch) {
                const T gv = n.grad[static_cast<size_t>(ch)] / T(plane);
                T* gx = xin.grad.data() + ch * plane;
                for (int i = 0; i < plane; ++i) gx[i] += gv;
            }
        });
    }

    // identity forward; backward scales the upstream gradient by -lambda
    int grad_reverse(int x, T lambda) {
        if (!(lambda > T(0))) throw std::invalid_argument("grad_reverse: lambda must be positive");
        Tensor<T> out = value(x);
        return push(std::move(out), [self = next_id(), x, lambda](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& xin = g.nodes[static_cast<size_t>(x)];
            for (size_t i = 0; i < n.grad.size(); ++i) xin.grad[i] -= lambda * n.grad[i];
        });
    }

    int linear(int x, Tensor<T>* w, Tensor<T>* b) {
        const Tensor<T>& xv = value(x);
        if (w->rank() != 2) throw std::invalid_argument("linear: weights must be (out,in)");
        const int m = w->dim(0), n_in = w->dim(1);
        if (xv.numel() != n_in) throw std::invalid_argument("linear: input size mismatch");
        w->ensure_grad();
        if (b) b->ensure_grad();
        Tensor<T> out({m});
        for (int i = 0; i < m; ++i)
            out.data[static_cast<size_t>(i)] =
                (b ? b->data[static_cast<size_t>(i)] : T(0)) + kern::dot4(w->ptr() + i * n_in, xv.ptr(), n_in);
        check_finite(out, "linear");
        return push(std::move(out), [self = next_id(), x, w, b, m, n_in](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& xin = g.nodes[static_cast<size_t>(x)];
            for (int i = 0; i < m; ++i) {
                const T gi = n.grad[static_cast<size_t>(i)];
                const T* wr = w->ptr() + i * n_in;
                T* dwr = w->grad.data() + i * n_in;
                for (int j = 0; j < n_in; ++j) {
                    xin.grad[static_cast<size_t>(j)] += gi * wr[j];
                    dwr[j] += gi * xin.value.data[static_cast<size_t>(j)];
                }
                if (b) b->grad[static_cast<size_t>(i)] += gi;
            }
        });
    }

    // elementwise product with a constant single-channel gate, broadcast
    // across channels; the gate receives no gradient
    int mul_gate(int x, Tensor<T> gate) {
        const Tensor<T>& xv = value(x);
        if (xv.rank() != 3 || gate.rank() != 2 || xv.dim(1) != gate.dim(0) || xv.dim(2) != gate.dim(1))
            throw std::invalid_argument("mul_gate: need (C,H,W) features and matching (H,W) gate");
        const int c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
        Tensor<T> out(xv.shape);
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < plane; ++i)
                out.data[static_cast<size_t>(ch * plane + i)] =
                    xv.data[static_cast<size_t>(ch * plane + i)] * gate.data[static_cast<size_t>(i)];
        auto gate_ptr = std::make_shared<Tensor<T>>(std::move(gate));
        return push(std::move(out), [self = next_id(), x, gate_ptr, c, plane](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& xin = g.nodes[static_cast<size_t>(x)];
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < plane; ++i)
                    xin.grad[static_cast<size_t>(ch * plane + i)] +=
                        n.grad[static_cast<size_t>(ch * plane + i)] * gate_ptr->data[static_cast<size_t>(i)];
        });
    }

    // (1/2M) * sum (est - gt)^2 over M elements
    int euclidean_loss(int est, Tensor<T> gt) {
        const Tensor<T>& ev = value(est);
        if (ev.shape != gt.shape)
            throw std::invalid_argument("euclidean_loss: shape mismatch " + shape_str(ev.shape) + " vs " +
                                        shape_str(gt.shape));
        const long long m = ev.numel();
        T acc0 = 0, acc1 = 0;
        size_t i = 0;
        for (; i + 2 <= ev.data.size(); i += 2) {
            const T d0 = ev.data[i] - gt.data[i];
            const T d1 = ev.data[i + 1] - gt.data[i + 1];
            acc0 += d0 * d0;
            acc1 += d1 * d1;
        }
        for (; i < ev.data.size(); ++i) {
            const T d = ev.data[i] - gt.data[i];
            acc0 += d * d;
        }
        Tensor<T> out({1});
        out.data[0] = (acc0 + acc1) / (T(2) * T(m));
        check_finite(out, "euclidean_loss");
        auto gt_ptr = std::make_shared<Tensor<T>>(std::move(gt));
        return push(std::move(out), [self = next_id(), est, gt_ptr, m](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& ein = g.nodes[static_cast<size_t>(est)];
            const T s = n.grad[0] / T(m);
            for (size_t j = 0; j < ein.grad.size(); ++j)
                ein.grad[j] += s * (ein.value.data[j] - gt_ptr->data[j]);
        });
    }

    // cross entropy of softmax2(logits) against a {0,1} class index,
    // computed in log-sum-exp form
    int softmax2_nll(int logits, int label) {
        const Tensor<T>& lv = value(logits);
        if (lv.numel() != 2) throw std::invalid_argument("softmax2_nll: logits must have 2 values");
        if (label != 0 && label != 1) throw std::invalid_argument("softmax2_nll: label must be 0 or 1");
        const T a = lv.data[0], b = lv.data[1];
        const T mx = a >= b ? a : b, mn = a >= b ? b : a;
        Tensor<T> out({1});
        out.data[0] = mx + std::log1p(std::exp(mn - mx)) - lv.data[static_cast<size_t>(label)];
        check_finite(out, "softmax2_nll");
        return push(std::move(out), [self = next_id(), logits, label](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& lin = g.nodes[static_cast<size_t>(logits)];
            const T a2 = lin.value.data[0], b2 = lin.value.data[1];
            T p0;
            if (a2 >= b2)
                p0 = T(1) / (T(1) + std::exp(b2 - a2));
            else {
                const T e = std::exp(a2 - b2);
                p0 = e / (T(1) + e);
            }
            lin.grad[0] += n.grad[0] * (p0 - (label == 0 ? T(1) : T(0)));
            lin.grad[1] += n.grad[0] * ((T(1) - p0) - (label == 1 ? T(1) : T(0)));
        });
    }

    // binary cross entropy on a single logit against target in {0,1}
    int bce_logits(int logit, T target) {
        const Tensor<T>& lv = value(logit);
        if (lv.numel() != 1) throw std::invalid_argument("bce_logits: logit must be scalar");
        const T z = lv.data[0];
        Tensor<T> out({1});
        out.data[0] = (z > T(0) ? z : T(0)) - z * target + std::log1p(std::exp(-std::abs(z)));
        check_finite(out, "bce_logits");
        return push(std::move(out), [self = next_id(), logit, target](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& lin = g.nodes[static_cast<size_t>(logit)];
            lin.grad[0] += n.grad[0] * (kern::stable_sigmoid(lin.value.data[0]) - target);
        });
    }

    int add(int a, int b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        if (av.shape != bv.shape) throw std::invalid_argument("add: shape mismatch");
        Tensor<T> out(av.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
        return push(std::move(out), [self = next_id(), a, b](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            for (size_t i = 0; i < n.grad.size(); ++i) {
                g.nodes[static_cast<size_t>(a)].grad[i] += n.grad[i];
                g.nodes[static_cast<size_t>(b)].grad[i] += n.grad[i];
            }
        });
    }

    int scale(int x, T c) {
        const Tensor<T>& xv = value(x);
        Tensor<T> out(xv.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = c * xv.data[i];
        return push(std::move(out), [self = next_id(), x, c](Graph& g) {
            Node& n = g.nodes[static_cast<size_t>(self)];
            Node& xin = g.nodes[static_cast<size_t>(x)];
            for (size_t i = 0; i < n.grad.size(); ++i) xin.grad[i] += c * n.grad[i];
        });
    }

    // Accumulate gradients from a scalar node through the recorded graph.
    // Parameter tensors must have their grad buffers allocated beforehand.
    void backward(int id) {
        if (id < 0 || id >= static_cast<int>(nodes.size()))
            throw std::invalid_argument("backward: no such node (forward not recorded?)");
        if (nodes[static_cast<size_t>(id)].value.numel() != 1)
            throw std::invalid_argument("backward: seed node must be scalar");
        backward(id, Tensor<T>({1}, std::vector<T>{T(1)}));
    }

    void backward(int id, const Tensor<T>& output_grad) {
        if (id < 0 || id >= static_cast<int>(nodes.size()))
            throw std::invalid_argument("backward: no such node (forward not recorded?)");
        Node& seed = nodes[static_cast<size_t>(id)];
        if (output_grad.shape != seed.value.shape)
            throw std::invalid_argument("backward: output_grad shape mismatch");
        for (int i = 0; i <= id; ++i)
            nodes[static_cast<size_t>(i)].grad.assign(nodes[static_cast<size_t>(i)].value.data.size(), T(0));
        seed.grad = output_grad.data;
        for (int i = id; i >= 0; --i) {
            Node& n = nodes[static_cast<size_t>(i)];
            if (n.backprop) n.backprop(*this);
        }
    }

private:
    int next_id() const { return static_cast<int>(nodes.size()); }

    int push(Tensor<T> value, std::function<void(Graph&)> backprop) {
        nodes.push_back(Node{std::move(value), {}, std::move(backprop)});
        return static_cast<int>(nodes.size()) - 1;
    }
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace cacc
