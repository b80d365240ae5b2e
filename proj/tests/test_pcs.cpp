#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "cacc/dataset.hpp"
#include "cacc/pcs.hpp"
#include "oracles.hpp"

using namespace cacc;

TEST_CASE("anchor tiling counts match the closed form", "[pcs]") {
    AnchorConfig single;
    single.scales = {{8, 8}};
    single.stride = 8;
    REQUIRE(sample_bags(8, 8, single).size() == 1u);
    REQUIRE(sample_bags(16, 16, single).size() == 4u);

    AnchorConfig multi;
    multi.scales = {{8, 8}, {16, 16}};
    multi.stride = 4;
    const auto rects = sample_bags(16, 16, multi);
    const size_t expect = ((16 - 8) / 4 + 1) * ((16 - 8) / 4 + 1) + ((16 - 16) / 4 + 1) * ((16 - 16) / 4 + 1);
    REQUIRE(rects.size() == expect);
    for (const Rect& r : rects) {
        REQUIRE(r.x >= 0);
        REQUIRE(r.y >= 0);
        REQUIRE(r.x + r.w <= 16);  // clipped out, never shrunk
        REQUIRE(r.y + r.h <= 16);
    }

    // an oversized scale simply contributes nothing
    AnchorConfig big;
    big.scales = {{32, 32}};
    big.stride = 4;
    REQUIRE(sample_bags(16, 16, big).empty());

    AnchorConfig bad;
    bad.stride = 0;
    REQUIRE_THROWS_AS(sample_bags(16, 16, bad), std::invalid_argument);
}

TEST_CASE("partition follows half-open containment", "[pcs]") {
    const std::vector<Rect> rects{{0, 0, 8, 8}};
    auto [c1, b1] = partition_bags(rects, {{3.0, 3.0}});
    REQUIRE(c1.size() == 1u);
    REQUIRE(b1.empty());

    auto [c2, b2] = partition_bags(rects, {});
    REQUIRE(c2.empty());
    REQUIRE(b2.size() == 1u);

    // x = 8 is excluded by the half-open rule
    auto [c3, b3] = partition_bags(rects, {{8.0, 4.0}});
    REQUIRE(c3.empty());
    REQUIRE(b3.size() == 1u);
}

TEST_CASE("partition and refinement agree with the brute-force oracle", "[pcs]") {
    std::mt19937 rng(29);
    AnchorConfig anchors;  // {8x8, 16x16}, stride 4
    std::uniform_real_distribution<double> pos(0.0, 32.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<int> nd(0, 12);
        std::vector<std::array<double, 2>> pts;
        const int n = nd(rng);
        for (int i = 0; i < n; ++i) pts.push_back({pos(rng), pos(rng)});
        const auto rects = sample_bags(32, 32, anchors);

        auto [crowd, background] = partition_bags(rects, pts);
        auto [crowd_ref, background_ref] = oracle::partition_ref(rects, pts);
        REQUIRE(crowd == crowd_ref);
        REQUIRE(background == background_ref);
        REQUIRE(crowd.size() + background.size() == rects.size());

        const auto refined = refine_background(background, pts, 32, 32);
        const auto refined_ref = oracle::refine_ref(background, pts, 32, 32);
        REQUIRE(refined == refined_ref);
        // monotone: refined is a subsequence of background
        size_t j = 0;
        for (const Rect& r : background)
            if (j < refined.size() && refined[j] == r) ++j;
        REQUIRE(j == refined.size());
    }
}

TEST_CASE("refinement drops body bags under a nearby head and keeps edge bags", "[pcs]") {
    // head just above the bag, inside both U and the concentric doubled rect
    const std::vector<std::array<double, 2>> head{{4.0, 6.0}};
    const std::vector<Rect> bb{{0, 8, 8, 8}};
    REQUIRE(refine_background(bb, head, 32, 32).empty());

    // a bag at the top edge: U leaves the image, so it is kept even though
    // the concentric doubled rect contains a point
    const std::vector<Rect> top{{0, 0, 8, 8}};
    REQUIRE(refine_background(top, {{4.0, 2.0}}, 32, 32) == top);

    // no points at all: nothing can fire
    const std::vector<Rect> many{{0, 8, 8, 8}, {8, 8, 8, 8}, {16, 16, 8, 8}};
    REQUIRE(refine_background(many, {}, 32, 32) == many);
}

TEST_CASE("bag loss frozen values and shift invariance", "[pcs]") {
    // response maps whose channel means are (2, 0)
    TensorF m({2, 2, 2}, {2, 2, 2, 2, 0, 0, 0, 0});
    REQUIRE_THAT(bag_loss_value(m, 0), Catch::Matchers::WithinAbs(0.1269, 1e-4));
    REQUIRE_THAT(bag_loss_value(m, 1), Catch::Matchers::WithinAbs(2.1269, 1e-4));

    TensorF eq({2, 2, 2}, {1, 1, 1, 1, 1, 1, 1, 1});
    REQUIRE_THAT(bag_loss_value(eq, 0), Catch::Matchers::WithinAbs(0.6931, 1e-4));
    REQUIRE_THAT(bag_loss_value(eq, 1), Catch::Matchers::WithinAbs(0.6931, 1e-4));

    // adding a constant to both channels leaves the loss unchanged
    TensorF shifted = m;
    for (float& v : shifted.data) v += 5.f;
    REQUIRE_THAT(bag_loss_value(shifted, 0), Catch::Matchers::WithinAbs(bag_loss_value(m, 0), 1e-5));

    TensorF nan_resp({2, 1, 1}, {std::numeric_limits<float>::quiet_NaN(), 0.f});
    REQUIRE_THROWS_AS(bag_loss_value(nan_resp, 0), NumericError);
}

namespace {

Dataset pcs_dataset() {
    SynthConfig c;
    c.train_scenes = 10;
    c.test_scenes = 4;
    c.stripe_amp = 0.08;
    c.count_min = 4;
    c.count_max = 10;
    c.seed = 33;
    return synth_generate(c);
}

}  // namespace

TEST_CASE("weak learner training separates crowd from background", "[pcs]") {
    const Dataset d = pcs_dataset();
    PcsTrainConfig cfg;
    cfg.iterations = 250;
    std::vector<double> losses;
    const WeakLearner learner = train_weak_learner(d.train, cfg, 5, &losses);

    // near-symmetric initialization: first batch close to -ln(1/2)
    REQUIRE_THAT(losses.front(), Catch::Matchers::WithinAbs(0.6931, 0.15));
    REQUIRE(losses.back() < losses.front());

    const double acc = bag_accuracy(learner, d.test, cfg.anchors, cfg.refine);
    REQUIRE(acc >= 0.95);
}

TEST_CASE("weak learner training is seed-deterministic", "[pcs]") {
    const Dataset d = pcs_dataset();
    PcsTrainConfig cfg;
    cfg.iterations = 25;
    WeakLearner a = train_weak_learner(d.train, cfg, 7);
    WeakLearner b = train_weak_learner(d.train, cfg, 7);
    WeakLearner c = train_weak_learner(d.train, cfg, 8);
    bool differs = false;
    for (size_t i = 0; i < a.net.layers.size(); ++i) {
        if (!a.net.layers[i].has_params()) continue;
        REQUIRE(a.net.layers[i].w.data == b.net.layers[i].w.data);
        if (a.net.layers[i].w.data != c.net.layers[i].w.data) differs = true;
    }
    REQUIRE(differs);
}

TEST_CASE("training requires both bag classes", "[pcs]") {
    SynthConfig c;
    c.train_scenes = 2;
    c.test_scenes = 1;
    c.count_min = 0;
    c.count_max = 0;  // background only
    const Dataset d = synth_generate(c);
    PcsTrainConfig cfg;
    cfg.iterations = 1;
    REQUIRE_THROWS_WITH(train_weak_learner(d.train, cfg, 1), Catch::Matchers::ContainsSubstring("crowd"));
}

TEST_CASE("full-image inference matches per-bag application away from borders", "[pcs]") {
    const Dataset d = pcs_dataset();
    PcsTrainConfig cfg;
    cfg.iterations = 40;
    const WeakLearner learner = train_weak_learner(d.train, cfg, 9);
    const CrowdScene& s = d.test[0];

    const TensorF full = infer_segmentation(learner, s.image);
    REQUIRE(full.shape == std::vector<int>({2, s.height(), s.width()}));

    const Rect r{16, 24, 16, 16};
    TensorF patch({1, r.h, r.w});
    for (int iy = 0; iy < r.h; ++iy)
        for (int ix = 0; ix < r.w; ++ix)
            patch.data[static_cast<size_t>(iy * r.w + ix)] =
                s.image.data[static_cast<size_t>((r.y + iy) * s.width() + r.x + ix)];
    const TensorF local = learner.net.forward_nograd(patch);

    // three 3x3 convs -> 3-pixel halo; compare the interior
    for (int c2 = 0; c2 < 2; ++c2)
        for (int iy = 3; iy < r.h - 3; ++iy)
            for (int ix = 3; ix < r.w - 3; ++ix) {
                const float a = local.data[static_cast<size_t>((c2 * r.h + iy) * r.w + ix)];
                const float b = full.data[static_cast<size_t>(
                    (c2 * s.height() + r.y + iy) * s.width() + r.x + ix)];
                REQUIRE_THAT(a, Catch::Matchers::WithinAbs(b, 1e-5));
            }
}

TEST_CASE("crowd response separates crowd scenes from pure background", "[pcs]") {
    const Dataset d = pcs_dataset();
    PcsTrainConfig cfg;
    cfg.iterations = 150;
    const WeakLearner learner = train_weak_learner(d.train, cfg, 11);

    SynthConfig empty_cfg;
    empty_cfg.train_scenes = 2;
    empty_cfg.test_scenes = 1;
    empty_cfg.stripe_amp = 0.08;
    empty_cfg.count_min = 0;
    empty_cfg.count_max = 0;
    empty_cfg.seed = 44;
    const Dataset empty = synth_generate(empty_cfg);

    auto mean_crowd_response = [&](const CrowdScene& s) {
        const TensorF seg = infer_segmentation(learner, s.image);
        double acc = 0.0;
        const int plane = s.height() * s.width();
        for (int i = 0; i < plane; ++i) acc += seg.data[static_cast<size_t>(i)];
        return acc / plane;
    };
    double crowd_mean = 0.0;
    for (const CrowdScene& s : d.test) crowd_mean += mean_crowd_response(s);
    crowd_mean /= static_cast<double>(d.test.size());
    REQUIRE(mean_crowd_response(empty.train[0]) < crowd_mean);
}

TEST_CASE("refinement strictly reduces body-mask contamination", "[pcs]") {
    const Dataset d = pcs_dataset();
    AnchorConfig anchors;
    bool reduced_somewhere = false;
    for (const CrowdScene& s : d.train) {
        auto [crowd, background] = partition_bags(sample_bags(s, anchors), s.points);
        const auto refined = refine_background(background, s.points, s.width(), s.height());
        const double before = contamination_fraction(background, s.body_mask, s.width());
        const double after = contamination_fraction(refined, s.body_mask, s.width());
        REQUIRE(after <= before + 1e-12);
        if (after < before) reduced_somewhere = true;
    }
    REQUIRE(reduced_somewhere);
}

TEST_CASE("coverage percentages", "[pcs]") {
    std::vector<uint8_t> full(64, 1), empty(64, 0), half(64, 0);
    for (int i = 0; i < 32; ++i) half[static_cast<size_t>(i)] = 1;  // top four rows of 8x8
    const std::vector<std::array<double, 2>> pts{{1.0, 1.0}, {2.0, 6.0}};
    REQUIRE(coverage(full, 8, 8, pts) == 100.0);
    REQUIRE(coverage(empty, 8, 8, pts) == 0.0);
    REQUIRE(coverage(half, 8, 8, pts) == 50.0);
    REQUIRE(coverage(empty, 8, 8, {}) == 100.0);
}
