#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cacc/graph.hpp"
#include "cacc/tensor.hpp"

namespace cacc {

// Ground-truth density construction: each head point contributes a
// truncated Gaussian kernel renormalized to unit mass inside the image, so
// the map's sum equals the point count by construction.
struct DensityConfig {
    double sigma = 4.0;  // kernel bandwidth in pixels
    double trunc = 3.0;  // truncation radius as a multiple of sigma
};

inline void validate_density_config(const DensityConfig& c) {
    if (!(c.sigma > 0.0)) throw std::invalid_argument("density sigma must be positive");
    if (!(c.trunc >= 2.0)) throw std::invalid_argument("density truncation must be at least 2 sigma");
}

// Pixel (ix, iy) is treated as a unit square with center (ix+0.5, iy+0.5).
// Kernel weights are accumulated in double regardless of the map precision.
inline TensorF make_density_map(const std::vector<std::array<double, 2>>& points, int h, int w,
                                const DensityConfig& cfg) {
    validate_density_config(cfg);
    if (h <= 0 || w <= 0) throw std::invalid_argument("density map needs a positive size");
    std::vector<double> acc(static_cast<size_t>(h) * w, 0.0);
    const double radius = cfg.trunc * cfg.sigma;
    const double r2 = radius * radius;
    const double inv2s2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    std::vector<std::pair<int, double>> hits;  // flat index, unnormalized weight
    for (size_t pi = 0; pi < points.size(); ++pi) {
        const double px = points[pi][0], py = points[pi][1];
        if (!(px >= 0.0 && px < w && py >= 0.0 && py < h))
            throw std::invalid_argument("density point " + std::to_string(pi) + " out of bounds");
        const int x0 = std::max(0, static_cast<int>(std::floor(px - radius - 0.5)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(px + radius - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(py - radius - 0.5)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(py + radius - 0.5)));
        hits.clear();
        double total = 0.0;
        for (int iy = y0; iy <= y1; ++iy)
            for (int ix = x0; ix <= x1; ++ix) {
                const double dx = ix + 0.5 - px, dy = iy + 0.5 - py;
                const double d2 = dx * dx + dy * dy;
                if (d2 > r2) continue;
                const double wgt = std::exp(-d2 * inv2s2);
                hits.emplace_back(iy * w + ix, wgt);
                total += wgt;
            }
        if (total <= 0.0) {
            // cannot occur for in-bounds points with trunc >= 2, but keep the
            // count invariant under any parameterization: deposit on the
            // nearest pixel
            const int ix = std::min(w - 1, std::max(0, static_cast<int>(px)));
            const int iy = std::min(h - 1, std::max(0, static_cast<int>(py)));
            acc[static_cast<size_t>(iy * w + ix)] += 1.0;
            continue;
        }
        for (const auto& [idx, wgt] : hits) acc[static_cast<size_t>(idx)] += wgt / total;
    }
    TensorF out({h, w});
    for (size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i]);
    return out;
}

// total person count of a density map, accumulated in double
inline double count(const TensorF& map) {
    double s0 = 0, s1 = 0;
    size_t i = 0;
    for (; i + 2 <= map.data.size(); i += 2) {
        s0 += map.data[i];
        s1 += map.data[i + 1];
    }
    if (i < map.data.size()) s0 += map.data[i];
    return s0 + s1;
}

// value of the pixel-wise Euclidean loss (1/2M) * sum (est - gt)^2; the
// differentiable version lives on the graph (Graph::euclidean_loss)
inline double euclidean_loss_value(const TensorF& est, const TensorF& gt) {
    if (est.shape != gt.shape) throw std::invalid_argument("euclidean_loss: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < est.data.size(); ++i) {
        const double d = static_cast<double>(est.data[i]) - static_cast<double>(gt.data[i]);
        acc += d * d;
    }
    return acc / (2.0 * static_cast<double>(est.numel()));
}

inline double mae(const std::vector<double>& est, const std::vector<double>& gt) {
    if (est.empty() || est.size() != gt.size())
        throw std::invalid_argument("mae: need equal-length nonempty inputs");
    double acc = 0.0;
    for (size_t i = 0; i < est.size(); ++i) acc += std::abs(est[i] - gt[i]);
    return acc / static_cast<double>(est.size());
}

inline double rmse(const std::vector<double>& est, const std::vector<double>& gt) {
    if (est.empty() || est.size() != gt.size())
        throw std::invalid_argument("rmse: need equal-length nonempty inputs");
    double acc = 0.0;
    for (size_t i = 0; i < est.size(); ++i) {
        const double d = est[i] - gt[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(est.size()));
}

}  // namespace cacc
