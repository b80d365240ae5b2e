#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cacc/io.hpp"
#include "cacc/pgm.hpp"
#include "cacc/tensor.hpp"

namespace cacc {

// A single annotated crowd image. Coordinates are (x, y) with x = column,
// y = row, origin at the top-left corner, half-open bounds: valid points lie
// in [0, W) x [0, H). body_mask (synthetic data only) marks rendered
// head+body pixels and is empty when unknown.
struct CrowdScene {
    TensorF image;  // (H, W), intensities in [0,1]
    std::vector<std::array<double, 2>> points;
    std::string domain;            // "source" or "target"
    std::vector<uint8_t> body_mask;  // H*W entries in {0,1}, or empty

    int height() const { return image.dim(0); }
    int width() const { return image.dim(1); }
};

inline void validate_scene(const CrowdScene& s) {
    if (s.image.rank() != 2) throw std::invalid_argument("scene image must be (H,W)");
    const int h = s.height(), w = s.width();
    if (h % 8 != 0 || w % 8 != 0)
        throw std::invalid_argument("scene size must be divisible by 8, got " + shape_str(s.image.shape));
    for (size_t i = 0; i < s.points.size(); ++i) {
        const auto& p = s.points[i];
        if (!(p[0] >= 0.0 && p[0] < w && p[1] >= 0.0 && p[1] < h))
            throw std::invalid_argument("point " + std::to_string(i) + " at (" + std::to_string(p[0]) + ", " +
                                        std::to_string(p[1]) + ") is outside [0," + std::to_string(w) + ")x[0," +
                                        std::to_string(h) + ")");
    }
    for (float v : s.image.data)
        if (v < 0.f || v > 1.f) throw std::invalid_argument("scene intensities must lie in [0,1]");
    if (!s.body_mask.empty() && s.body_mask.size() != s.image.data.size())
        throw std::invalid_argument("body_mask size does not match image");
}

// Parameters of the synthetic scene generator for one domain. The two
// domains are expected to differ in background texture and count range so
// that the generated pair exhibits a measurable domain shift.
struct SynthConfig {
    int width = 64;
    int height = 64;
    std::string domain = "source";
    int train_scenes = 160;
    int test_scenes = 40;

    // background: base level plus optional horizontal stripes, soft blobs,
    // and uniform noise
    double bg_base = 0.30;
    double bg_noise = 0.04;
    double stripe_amp = 0.0;
    double stripe_period = 8.0;
    double blob_amp = 0.0;
    int blob_count = 0;
    double blob_radius = 6.0;

    // crowd content
    int count_min = 8;
    int count_max = 16;
    double head_radius_min = 1.5;
    double head_radius_max = 2.5;
    double head_brightness = 0.95;
    double body_half_w = 2.0;  // body ellipse half-extents, rendered below the head
    double body_half_h = 3.0;
    double body_brightness = 0.75;

    uint32_t seed = 1;
};

inline void validate_synth_config(const SynthConfig& c) {
    if (c.width % 8 != 0 || c.height % 8 != 0)
        throw std::invalid_argument("synth image size must be divisible by 8");
    if (c.count_min < 0 || c.count_max < c.count_min)
        throw std::invalid_argument("synth count range must satisfy 0 <= min <= max");
    if (c.head_radius_min < 1.0) throw std::invalid_argument("head radius must be at least 1 pixel");
    if (c.head_radius_max < c.head_radius_min)
        throw std::invalid_argument("head radius range must satisfy min <= max");
    if (2.0 * c.head_radius_max >= std::min(c.width, c.height))
        throw std::invalid_argument("head radius too large for the image size");
    if (c.train_scenes <= 0 || c.test_scenes <= 0)
        throw std::invalid_argument("both splits need at least one scene");
}

struct Dataset {
    std::vector<CrowdScene> train;
    std::vector<CrowdScene> test;
    std::string domain;
};

namespace detail {

// paint a filled ellipse, clipped to bounds; also sets mask bits
inline void paint_ellipse(TensorF& img, std::vector<uint8_t>& mask, double cx, double cy, double rx,
                          double ry, float intensity) {
    const int h = img.dim(0), w = img.dim(1);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx - 1)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + rx + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry - 1)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + ry + 1)));
    for (int iy = y0; iy <= y1; ++iy)
        for (int ix = x0; ix <= x1; ++ix) {
            const double dx = (ix + 0.5 - cx) / rx, dy = (iy + 0.5 - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) {
                img.data[static_cast<size_t>(iy * w + ix)] = intensity;
                mask[static_cast<size_t>(iy * w + ix)] = 1;
            }
        }
}

inline CrowdScene synth_scene(const SynthConfig& c, uint32_t scene_seed) {
    std::mt19937 rng(scene_seed);
    const int h = c.height, w = c.width;
    CrowdScene s;
    s.domain = c.domain;
    s.image = TensorF({h, w});
    s.body_mask.assign(static_cast<size_t>(h) * w, 0);

    // background: base + stripes + blobs + noise, clamped to [0,1]
    std::vector<double> bg(static_cast<size_t>(h) * w, c.bg_base);
    if (c.stripe_amp != 0.0) {
        for (int iy = 0; iy < h; ++iy) {
            const double v = c.stripe_amp * std::sin(2.0 * 3.14159265358979323846 * iy / c.stripe_period);
            for (int ix = 0; ix < w; ++ix) bg[static_cast<size_t>(iy * w + ix)] += v;
        }
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int bi = 0; bi < c.blob_count; ++bi) {
        const double bx = unit(rng) * w, by = unit(rng) * h;
        const double r2 = c.blob_radius * c.blob_radius;
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < w; ++ix) {
                const double dx = ix + 0.5 - bx, dy = iy + 0.5 - by;
                bg[static_cast<size_t>(iy * w + ix)] += c.blob_amp * std::exp(-(dx * dx + dy * dy) / (2.0 * r2));
            }
    }
    for (int i = 0; i < h * w; ++i) {
        const double v = bg[static_cast<size_t>(i)] + c.bg_noise * (2.0 * unit(rng) - 1.0);
        s.image.data[static_cast<size_t>(i)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }

    // crowd: heads at annotated points, bodies directly below. Heads are
    // placed so the full disc lies inside the frame (an annotation on a
    // mostly-cropped head is not meaningful); bodies may still clip at the
    // bottom edge.
    std::uniform_int_distribution<int> count_dist(c.count_min, c.count_max);
    const int n = count_dist(rng);
    const double m = c.head_radius_max;
    std::uniform_real_distribution<double> px(m, static_cast<double>(w) - m);
    std::uniform_real_distribution<double> py(m, static_cast<double>(h) - m);
    std::uniform_real_distribution<double> rad(c.head_radius_min, c.head_radius_max);
    for (int i = 0; i < n; ++i) {
        const double x = std::min(px(rng), std::nextafter(static_cast<double>(w), 0.0));
        const double y = std::min(py(rng), std::nextafter(static_cast<double>(h), 0.0));
        const double r = rad(rng);
        s.points.push_back({x, y});
        // body first so the head stays visible on top
        paint_ellipse(s.image, s.body_mask, x, y + r + c.body_half_h, c.body_half_w, c.body_half_h,
                      static_cast<float>(c.body_brightness));
        paint_ellipse(s.image, s.body_mask, x, y, r, r, static_cast<float>(c.head_brightness));
        // the annotated pixel itself always belongs to the mask, even for
        // sub-pixel head placements at the border
        s.body_mask[static_cast<size_t>(static_cast<int>(y) * w + static_cast<int>(x))] = 1;
    }
    validate_scene(s);
    return s;
}

}  // namespace detail

// Deterministic two-split synthetic dataset. Each scene gets its own seed
// derived from the config seed, so scene i is reproducible in isolation.
inline Dataset synth_generate(const SynthConfig& c) {
    validate_synth_config(c);
    Dataset d;
    d.domain = c.domain;
    const auto scene_seed = [&](uint32_t index) {
        return static_cast<uint32_t>(c.seed * 2654435761u + index * 40503u + 0x5bd1e995u);
    };
    for (int i = 0; i < c.train_scenes; ++i)
        d.train.push_back(detail::synth_scene(c, scene_seed(static_cast<uint32_t>(i))));
    for (int i = 0; i < c.test_scenes; ++i)
        d.test.push_back(detail::synth_scene(c, scene_seed(static_cast<uint32_t>(c.train_scenes + i))));
    return d;
}

// ---------------------------------------------------------------------------
// disk layout: <dir>/NNNN.pgm + NNNN.json (+ NNNN_mask.pgm when a body mask
// exists) and a manifest.json naming the domain and the two splits

namespace detail {

inline std::string scene_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", index);
    return buf;
}

}  // namespace detail

inline void save_scene(const CrowdScene& s, const std::filesystem::path& dir, const std::string& id) {
    validate_scene(s);
    write_pgm(dir / (id + ".pgm"), s.image);
    nlohmann::json j;
    j["points"] = nlohmann::json::array();
    for (const auto& p : s.points) j["points"].push_back({p[0], p[1]});
    atomic_write_file(dir / (id + ".json"), j.dump(2) + "\n");
    if (!s.body_mask.empty()) {
        TensorF m(s.image.shape);
        for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = s.body_mask[i] ? 1.f : 0.f;
        write_pgm(dir / (id + "_mask.pgm"), m);
    }
}

inline CrowdScene load_scene(const std::filesystem::path& dir, const std::string& id,
                             const std::string& domain) {
    CrowdScene s;
    s.domain = domain;
    s.image = read_pgm(dir / (id + ".pgm"));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file_bytes(dir / (id + ".json")));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed annotation " + (dir / (id + ".json")).string() + ": " + e.what());
    }
    if (!j.contains("points") || !j["points"].is_array())
        throw std::runtime_error("annotation " + id + " lacks a points array");
    for (const auto& p : j["points"]) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
            throw std::runtime_error("annotation " + id + " has a malformed point entry");
        s.points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    const auto mask_path = dir / (id + "_mask.pgm");
    if (std::filesystem::exists(mask_path)) {
        TensorF m = read_pgm(mask_path);
        if (m.shape != s.image.shape) throw std::runtime_error("mask size mismatch for scene " + id);
        s.body_mask.resize(m.data.size());
        for (size_t i = 0; i < m.data.size(); ++i) s.body_mask[i] = m.data[i] > 0.5f ? 1 : 0;
    }
    validate_scene(s);
    return s;
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["domain"] = d.domain;
    manifest["train"] = nlohmann::json::array();
    manifest["test"] = nlohmann::json::array();
    int index = 0;
    for (const CrowdScene& s : d.train) {
        const std::string id = detail::scene_id(index++);
        save_scene(s, dir, id);
        manifest["train"].push_back(id);
    }
    for (const CrowdScene& s : d.test) {
        const std::string id = detail::scene_id(index++);
        save_scene(s, dir, id);
        manifest["test"].push_back(id);
    }
    atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file_bytes(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed manifest in " + dir.string() + ": " + e.what());
    }
    Dataset d;
    d.domain = manifest.at("domain").get<std::string>();
    for (const auto& id : manifest.at("train")) d.train.push_back(load_scene(dir, id.get<std::string>(), d.domain));
    for (const auto& id : manifest.at("test")) d.test.push_back(load_scene(dir, id.get<std::string>(), d.domain));
    if (d.train.empty() || d.test.empty()) throw std::runtime_error("dataset splits must be nonempty");
    return d;
}

// ---------------------------------------------------------------------------
// training-time augmentation: uniform random crop plus a fair-coin
// horizontal flip

// Deterministic core: crop the window at (ox, oy), optionally mirrored
// horizontally. Mirrored x is (W_crop - 1) - x; fractional coordinates in
// the open sliver (W_crop - 1, W_crop) would land below zero and are
// dropped to keep the in-bounds invariant.
inline CrowdScene crop_flip(const CrowdScene& s, int ox, int oy, int crop_w, int crop_h, bool flip) {
    const int h = s.height(), w = s.width();
    if (crop_w > w || crop_h > h) throw std::invalid_argument("augment: crop larger than image");
    if (crop_w % 8 != 0 || crop_h % 8 != 0) throw std::invalid_argument("augment: crop must be divisible by 8");
    if (ox < 0 || oy < 0 || ox + crop_w > w || oy + crop_h > h)
        throw std::invalid_argument("augment: window outside image");

    CrowdScene out;
    out.domain = s.domain;
    out.image = TensorF({crop_h, crop_w});
    for (int iy = 0; iy < crop_h; ++iy)
        for (int ix = 0; ix < crop_w; ++ix) {
            const int sx = flip ? ox + crop_w - 1 - ix : ox + ix;
            out.image.data[static_cast<size_t>(iy * crop_w + ix)] =
                s.image.data[static_cast<size_t>((oy + iy) * w + sx)];
        }
    if (!s.body_mask.empty()) {
        out.body_mask.assign(static_cast<size_t>(crop_h) * crop_w, 0);
        for (int iy = 0; iy < crop_h; ++iy)
            for (int ix = 0; ix < crop_w; ++ix) {
                const int sx = flip ? ox + crop_w - 1 - ix : ox + ix;
                out.body_mask[static_cast<size_t>(iy * crop_w + ix)] =
                    s.body_mask[static_cast<size_t>((oy + iy) * w + sx)];
            }
    }
    for (const auto& p : s.points) {
        if (p[0] < ox || p[0] >= ox + crop_w || p[1] < oy || p[1] >= oy + crop_h) continue;
        double x = p[0] - ox;
        const double y = p[1] - oy;
        if (flip) {
            x = (crop_w - 1) - x;
            if (x < 0.0) continue;
        }
        out.points.push_back({x, y});
    }
    return out;
}

// Random crop + fair-coin horizontal flip. RNG draw order: x offset,
// y offset, coin.
inline CrowdScene augment(const CrowdScene& s, int crop_w, int crop_h, std::mt19937& rng) {
    const int h = s.height(), w = s.width();
    if (crop_w > w || crop_h > h) throw std::invalid_argument("augment: crop larger than image");
    std::uniform_int_distribution<int> dx(0, w - crop_w), dy(0, h - crop_h);
    const int ox = dx(rng), oy = dy(rng);
    const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    return crop_flip(s, ox, oy, crop_w, crop_h, flip);
}

inline CrowdScene augment(const CrowdScene& s, int crop_size, uint32_t seed) {
    std::mt19937 rng(seed);
    return augment(s, crop_size, crop_size, rng);
}

}  // namespace cacc
