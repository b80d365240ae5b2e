#pragma once

// Independent references used by the unit and acceptance suites. Everything
// here is written the slow, obvious way on purpose: these are the oracles the
// optimized library code is judged against.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "cacc/tensor.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// finite differences

struct FdResult {
    double max_rel = 0.0;   // worst relative error seen
    std::size_t count = 0;  // number of scalar parameters checked
};

inline double rel_err(double a, double b, double floor_ = 1e-6) {
    const double denom = std::max(std::max(std::abs(a), std::abs(b)), floor_);
    return std::abs(a - b) / denom;
}

// Central-difference check of analytic gradients. `loss(with_grad)` must
// rebuild the computation from the current contents of `params` and return
// the scalar loss; when `with_grad` is true it must also leave fresh
// gradients in each param's grad buffer. `fd_scale` is the factor the
// numeric derivative is multiplied by before comparison; paths that pass
// through a gradient-reversal layer use -lambda, everything else 1.
inline FdResult fd_check(const std::vector<cacc::TensorD*>& params,
                         const std::function<double(bool)>& loss,
                         double fd_scale = 1.0, double h = 1e-5) {
    for (cacc::TensorD* p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
    loss(true);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (cacc::TensorD* p : params) analytic.push_back(p->grad);

    FdResult res;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        cacc::TensorD& p = *params[pi];
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const double keep = p.data[j];
            p.data[j] = keep + h;
            const double fp = loss(false);
            p.data[j] = keep - h;
            const double fm = loss(false);
            p.data[j] = keep;
            const double numeric = fd_scale * (fp - fm) / (2.0 * h);
            res.max_rel = std::max(res.max_rel, rel_err(analytic[pi][j], numeric));
            ++res.count;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// convolution reference: direct six-loop translation of the definition
// (stride 1, zero padding k/2), no range tricks shared with the library

template <typename T>
std::vector<T> conv2d_ref(const std::vector<T>& x, const std::vector<T>& w, const std::vector<T>& b,
                          int ci, int co, int h, int wd, int k) {
    const int p = k / 2;
    std::vector<T> y(static_cast<std::size_t>(co) * h * wd, T(0));
    for (int oc = 0; oc < co; ++oc)
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < wd; ++ox) {
                T acc = b.empty() ? T(0) : b[static_cast<std::size_t>(oc)];
                for (int ic = 0; ic < ci; ++ic)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy + ky - p, ix = ox + kx - p;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                            acc += w[static_cast<std::size_t>(((oc * ci + ic) * k + ky) * k + kx)] *
                                   x[static_cast<std::size_t>((ic * h + iy) * wd + ix)];
                        }
                y[static_cast<std::size_t>((oc * h + oy) * wd + ox)] = acc;
            }
    return y;
}

// ---------------------------------------------------------------------------
// binomial concentration: allowed deviation of an empirical count from its
// expectation under n independent trials with success probability p

inline double binomial_3sigma(long long n, double p) {
    return 3.0 * std::sqrt(static_cast<double>(n) * p * (1.0 - p));
}

}  // namespace oracle

// MIL references live in a separate block because they need the Rect type.
#include "cacc/pcs.hpp"

namespace oracle {

// MIL partition by plain double loop: a bag is crowd iff some point (px, py)
// satisfies x <= px < x+w and y <= py < y+h, with no early exits or reuse of
// library helpers.
inline std::pair<std::vector<cacc::Rect>, std::vector<cacc::Rect>> partition_ref(
    const std::vector<cacc::Rect>& rects, const std::vector<std::array<double, 2>>& points) {
    std::vector<cacc::Rect> crowd, background;
    for (const cacc::Rect& r : rects) {
        int inside = 0;
        for (const auto& p : points) {
            const bool in_x = p[0] >= r.x && p[0] < r.x + r.w;
            const bool in_y = p[1] >= r.y && p[1] < r.y + r.h;
            if (in_x && in_y) inside += 1;
        }
        if (inside > 0)
            crowd.push_back(r);
        else
            background.push_back(r);
    }
    return {crowd, background};
}

// Background refinement by direct evaluation of the two predicates: look for
// a point in the same-size rect one bag-height above, and for a point in the
// double-size rect sharing the bag's center (intersected with the image).
inline std::vector<cacc::Rect> refine_ref(const std::vector<cacc::Rect>& background,
                                          const std::vector<std::array<double, 2>>& points, int image_w,
                                          int image_h) {
    auto point_in_box = [&](double lox, double loy, double hix, double hiy) {
        for (const auto& p : points)
            if (p[0] >= lox && p[0] < hix && p[1] >= loy && p[1] < hiy) return true;
        return false;
    };
    std::vector<cacc::Rect> kept;
    for (const cacc::Rect& b : background) {
        const int uy = b.y - b.h;
        bool upper_is_crowd = false;
        if (uy >= 0) upper_is_crowd = point_in_box(b.x, uy, b.x + b.w, uy + b.h);
        // doubled rect about the center (cx, cy) = (x + w/2, y + h/2)
        double lx = b.x + b.w / 2.0 - b.w, ly = b.y + b.h / 2.0 - b.h;
        double hx = lx + 2 * b.w, hy = ly + 2 * b.h;
        lx = std::max(lx, 0.0);
        ly = std::max(ly, 0.0);
        hx = std::min(hx, static_cast<double>(image_w));
        hy = std::min(hy, static_cast<double>(image_h));
        const bool larger_is_crowd = point_in_box(lx, ly, hx, hy);
        if (!(upper_is_crowd && larger_is_crowd)) kept.push_back(b);
    }
    return kept;
}

}  // namespace oracle
