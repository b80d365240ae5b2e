#pragma once

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cacc/adam.hpp"
#include "cacc/dataset.hpp"
#include "cacc/graph.hpp"
#include "cacc/layers.hpp"
#include "cacc/tensor.hpp"

namespace cacc {

// Point-derived crowd segmentation: exhaustively sampled rectangular bags,
// labeled crowd iff they contain an annotated head point, refined to purge
// body-contaminated background bags, then used as weak supervision for a
// small fully-convolutional two-class learner.

// Axis-aligned rect, half-open: covers [x, x+w) x [y, y+h).
struct Rect {
    int x = 0, y = 0, w = 0, h = 0;

    bool contains(double px, double py) const { return px >= x && px < x + w && py >= y && py < y + h; }
    bool operator==(const Rect&) const = default;
};

struct AnchorConfig {
    std::vector<std::pair<int, int>> scales{{8, 8}, {16, 16}};  // (w, h)
    int stride = 4;
};

inline void validate_anchors(const AnchorConfig& a) {
    if (a.stride < 1) throw std::invalid_argument("anchor stride must be at least 1");
    if (a.scales.empty()) throw std::invalid_argument("need at least one anchor scale");
    for (const auto& [w, h] : a.scales)
        if (w <= 0 || h <= 0) throw std::invalid_argument("anchor sizes must be positive");
}

// Anchors tile the image at the given stride per scale; windows that would
// cross the boundary are skipped entirely, never shrunk.
inline std::vector<Rect> sample_bags(int image_w, int image_h, const AnchorConfig& anchors) {
    validate_anchors(anchors);
    std::vector<Rect> rects;
    for (const auto& [w, h] : anchors.scales)
        for (int y = 0; y + h <= image_h; y += anchors.stride)
            for (int x = 0; x + w <= image_w; x += anchors.stride) rects.push_back({x, y, w, h});
    return rects;
}

inline std::vector<Rect> sample_bags(const CrowdScene& scene, const AnchorConfig& anchors) {
    return sample_bags(scene.width(), scene.height(), anchors);
}

// MIL partition: a bag is crowd iff at least one point lies inside it.
inline std::pair<std::vector<Rect>, std::vector<Rect>> partition_bags(
    const std::vector<Rect>& rects, const std::vector<std::array<double, 2>>& points) {
    std::vector<Rect> crowd, background;
    for (const Rect& r : rects) {
        bool hit = false;
        for (const auto& p : points)
            if (r.contains(p[0], p[1])) {
                hit = true;
                break;
            }
        (hit ? crowd : background).push_back(r);
    }
    return {std::move(crowd), std::move(background)};
}

namespace detail {

inline bool any_point_in(const Rect& r, const std::vector<std::array<double, 2>>& points) {
    for (const auto& p : points)
        if (r.contains(p[0], p[1])) return true;
    return false;
}

inline Rect clip_rect(Rect r, int image_w, int image_h) {
    const int x0 = std::max(r.x, 0), y0 = std::max(r.y, 0);
    const int x1 = std::min(r.x + r.w, image_w), y1 = std::min(r.y + r.h, image_h);
    return {x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
}

}  // namespace detail

// Background refinement: drop a background bag when both the same-size rect
// directly above it (adjacent, U) and the doubled rect concentric with it
// (clipped, L) contain an annotated point — the signature of a body whose
// head sits just above. A bag whose U would leave the image is kept: an
// absent region cannot be a crowd bag. Membership is decided by the point
// predicate, not by presence in the sampled rect set.
inline std::vector<Rect> refine_background(const std::vector<Rect>& background,
                                           const std::vector<std::array<double, 2>>& points, int image_w,
                                           int image_h) {
    std::vector<Rect> kept;
    for (const Rect& b : background) {
        const Rect upper{b.x, b.y - b.h, b.w, b.h};
        if (upper.y < 0) {
            kept.push_back(b);
            continue;
        }
        const Rect larger = detail::clip_rect({b.x - b.w / 2, b.y - b.h / 2, 2 * b.w, 2 * b.h}, image_w, image_h);
        const bool drop = detail::any_point_in(upper, points) && detail::any_point_in(larger, points);
        if (!drop) kept.push_back(b);
    }
    return kept;
}

// cross-entropy of the spatially aggregated 2-channel response against a
// bag label (0 = crowd, 1 = background), in log-sum-exp form
inline double bag_loss_value(const TensorF& response, int label) {
    if (response.rank() != 3 || response.dim(0) != 2)
        throw std::invalid_argument("bag_loss: response must be (2,H,W)");
    if (label != 0 && label != 1) throw std::invalid_argument("bag_loss: label must be 0 or 1");
    check_finite(response, "bag_loss");
    const int plane = response.dim(1) * response.dim(2);
    double a0 = 0.0, a1 = 0.0;
    for (int i = 0; i < plane; ++i) {
        a0 += response.data[static_cast<size_t>(i)];
        a1 += response.data[static_cast<size_t>(plane + i)];
    }
    a0 /= plane;
    a1 /= plane;
    const double mx = std::max(a0, a1), mn = std::min(a0, a1);
    return mx + std::log1p(std::exp(mn - mx)) - (label == 0 ? a0 : a1);
}

// The weak learner: three conv blocks (1 -> 16 -> 16 -> 2), relu between
// blocks, stride 1, size preserving, no pooling.
struct WeakLearner {
    Sequential<float> net;

    WeakLearner() : net({conv(1, 16), relu(), conv(16, 16), relu(), conv(16, 2)}) {}

    std::vector<std::pair<std::string, TensorF*>> named_params() { return net.named_params("pcs."); }
};

struct PcsTrainConfig {
    int iterations = 400;
    int batch_size = 16;  // bags per step, half crowd / half background
    double lr = 1e-3;
    AnchorConfig anchors;
    bool refine = true;
};

namespace detail {

inline TensorF extract_patch(const TensorF& image, const Rect& r) {
    const int w = image.dim(1);
    TensorF patch({1, r.h, r.w});
    for (int iy = 0; iy < r.h; ++iy)
        for (int ix = 0; ix < r.w; ++ix)
            patch.data[static_cast<size_t>(iy * r.w + ix)] =
                image.data[static_cast<size_t>((r.y + iy) * w + r.x + ix)];
    return patch;
}

struct BagRef {
    int scene;
    Rect rect;
};

}  // namespace detail

// Collect labeled bags for a list of scenes: sample, partition, and
// (optionally) refine, per scene.
inline std::pair<std::vector<detail::BagRef>, std::vector<detail::BagRef>> collect_bags(
    const std::vector<CrowdScene>& scenes, const AnchorConfig& anchors, bool refine) {
    std::vector<detail::BagRef> crowd, background;
    for (size_t si = 0; si < scenes.size(); ++si) {
        const CrowdScene& s = scenes[si];
        auto [bc, bb] = partition_bags(sample_bags(s, anchors), s.points);
        if (refine) bb = refine_background(bb, s.points, s.width(), s.height());
        for (const Rect& r : bc) crowd.push_back({static_cast<int>(si), r});
        for (const Rect& r : bb) background.push_back({static_cast<int>(si), r});
    }
    return {std::move(crowd), std::move(background)};
}

// Weak-learner training on the source domain: balanced batches of crowd and
// background bags, mean bag loss, Adam. Deterministic under seed.
inline WeakLearner train_weak_learner(const std::vector<CrowdScene>& source_scenes,
                                      const PcsTrainConfig& cfg, uint32_t seed,
                                      std::vector<double>* loss_log = nullptr) {
    if (source_scenes.empty()) throw std::invalid_argument("train_weak_learner: no scenes");
    if (cfg.iterations <= 0 || cfg.batch_size < 2)
        throw std::invalid_argument("train_weak_learner: need iterations > 0 and batch >= 2");
    auto [crowd, background] = collect_bags(source_scenes, cfg.anchors, cfg.refine);
    if (crowd.empty()) throw std::runtime_error("degenerate scene set: no crowd bags");
    if (background.empty()) throw std::runtime_error("degenerate scene set: no background bags");

    WeakLearner learner;
    std::mt19937 rng(seed);
    glorot_init(learner.net, rng);
    std::vector<TensorF*> params = learner.net.params();
    Adam<float> opt(params, static_cast<float>(cfg.lr));

    std::uniform_int_distribution<size_t> pick_crowd(0, crowd.size() - 1);
    std::uniform_int_distribution<size_t> pick_bg(0, background.size() - 1);
    const int half = cfg.batch_size / 2;
    for (int it = 0; it < cfg.iterations; ++it) {
        opt.zero_grad();
        GraphF g;
        int total = -1;
        // crowd half first, then background: fixed order for reproducibility
        for (int bi = 0; bi < 2 * half; ++bi) {
            const bool is_crowd = bi < half;
            const detail::BagRef& ref =
                is_crowd ? crowd[pick_crowd(rng)] : background[pick_bg(rng)];
            const TensorF patch = detail::extract_patch(source_scenes[static_cast<size_t>(ref.scene)].image, ref.rect);
            const int resp = learner.net.forward(g, g.input(patch));
            const int loss = g.softmax2_nll(g.global_avg_pool(resp), is_crowd ? 0 : 1);
            total = total < 0 ? loss : g.add(total, loss);
        }
        const int mean_loss = g.scale(total, 1.0f / static_cast<float>(2 * half));
        if (loss_log) loss_log->push_back(g.scalar(mean_loss));
        g.backward(mean_loss);
        opt.step();
    }
    return learner;
}

// Fully-convolutional application of the weak learner to a whole image:
// channel 0 is the crowd response, channel 1 the background response.
inline TensorF infer_segmentation(const WeakLearner& learner, const TensorF& image) {
    if (image.rank() != 2) throw std::invalid_argument("infer_segmentation: image must be (H,W)");
    TensorF in({1, image.dim(0), image.dim(1)});
    in.data = image.data;
    return learner.net.forward_nograd(in);
}

// Fraction of correctly classified bags (argmax of the aggregated
// response) over the given scenes.
inline double bag_accuracy(const WeakLearner& learner, const std::vector<CrowdScene>& scenes,
                           const AnchorConfig& anchors, bool refine) {
    auto [crowd, background] = collect_bags(scenes, anchors, refine);
    long long correct = 0, total = 0;
    auto classify = [&](const detail::BagRef& ref, int label) {
        const TensorF patch = detail::extract_patch(scenes[static_cast<size_t>(ref.scene)].image, ref.rect);
        const TensorF resp = learner.net.forward_nograd(patch);
        const int plane = resp.dim(1) * resp.dim(2);
        double a0 = 0.0, a1 = 0.0;
        for (int i = 0; i < plane; ++i) {
            a0 += resp.data[static_cast<size_t>(i)];
            a1 += resp.data[static_cast<size_t>(plane + i)];
        }
        if ((a0 > a1 ? 0 : 1) == label) ++correct;
        ++total;
    };
    for (const auto& ref : crowd) classify(ref, 0);
    for (const auto& ref : background) classify(ref, 1);
    if (total == 0) throw std::runtime_error("bag_accuracy: no bags");
    return static_cast<double>(correct) / static_cast<double>(total);
}

// Fraction of bags that touch at least one ground-truth body-mask pixel.
inline double contamination_fraction(const std::vector<Rect>& bags, const std::vector<uint8_t>& mask,
                                     int image_w) {
    if (bags.empty()) return 0.0;
    long long touched = 0;
    for (const Rect& r : bags) {
        bool hit = false;
        for (int iy = r.y; iy < r.y + r.h && !hit; ++iy)
            for (int ix = r.x; ix < r.x + r.w; ++ix)
                if (mask[static_cast<size_t>(iy * image_w + ix)]) {
                    hit = true;
                    break;
                }
        if (hit) ++touched;
    }
    return static_cast<double>(touched) / static_cast<double>(bags.size());
}

// Percentage of annotated points whose floor pixel is marked crowd.
// An empty point list counts as fully covered.
inline double coverage(const std::vector<uint8_t>& hard_seg, int h, int w,
                       const std::vector<std::array<double, 2>>& points) {
    if (hard_seg.size() != static_cast<size_t>(h) * w) throw std::invalid_argument("coverage: mask size mismatch");
    if (points.empty()) return 100.0;
    long long covered = 0;
    for (const auto& p : points) {
        const int ix = static_cast<int>(p[0]), iy = static_cast<int>(p[1]);
        if (ix < 0 || ix >= w || iy < 0 || iy >= h)
            throw std::invalid_argument("coverage: point outside mask bounds");
        if (hard_seg[static_cast<size_t>(iy * w + ix)]) ++covered;
    }
    return 100.0 * static_cast<double>(covered) / static_cast<double>(points.size());
}

}  // namespace cacc
