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
#include "cacc/density.hpp"
#include "cacc/graph.hpp"
#include "cacc/layers.hpp"
#include "cacc/pcs.hpp"
#include "cacc/sampling.hpp"
#include "cacc/tensor.hpp"

namespace cacc {

// Domain-adaptive counter training: a shared counting backbone, per-level
// domain classifiers gated by crowd segmentation, and a density
// discriminator aligned against sampled pseudo labels. All adversarial
// objectives run through gradient reversal, so one optimizer pass per
// iteration covers both players.

struct TrainConfig {
    double lambda1 = 1.0;       // weight of the segmentation-gated feature alignment
    double lambda2 = 0.3;       // weight of the density alignment
    double lambda_grl = 1.0;    // gradient reversal scale
    double counter_lr = 1e-4;
    double classifier_lr = 1e-5;
    int iterations = 3000;
    int pretrain_iterations = 800;
    int crop = 64;              // square training crop
    bool hard_seg = false;      // gate with thresholded segmentation instead of soft
    bool pcs_gate = true;       // false: all-ones gate (feature alignment without segmentation)
    int sppl_refresh = 50;      // iterations between pseudo-label re-renders per image
};

inline void validate_train_config(const TrainConfig& c) {
    if (c.lambda1 < 0.0 || c.lambda2 < 0.0) throw std::invalid_argument("lambda1/lambda2 must be nonnegative");
    if (!(c.lambda_grl > 0.0)) throw std::invalid_argument("lambda_grl must be positive");
    if (!(c.counter_lr > 0.0) || !(c.classifier_lr > 0.0))
        throw std::invalid_argument("learning rates must be positive");
    if (c.iterations < 0 || c.pretrain_iterations < 0) throw std::invalid_argument("iteration counts must be >= 0");
    if (c.crop <= 0 || c.crop % 8 != 0) throw std::invalid_argument("crop must be positive and divisible by 8");
    if (c.sppl_refresh <= 0) throw std::invalid_argument("sppl_refresh must be positive");
}

// Backbone widths after each of the three pooling stages.
constexpr std::array<int, 3> kCounterWidths{16, 32, 64};

// The counter: three conv-conv-pool stages whose post-pool features feed the
// per-level domain classifiers, then a decoder of three upsample+conv blocks
// and a nonnegative single-channel density head.
struct CounterNet {
    Sequential<float> stage1, stage2, stage3, decoder;

    CounterNet()
        : stage1({conv(1, 16), relu(), conv(16, 16), relu(), maxpool2()}),
          stage2({conv(16, 32), relu(), conv(32, 32), relu(), maxpool2()}),
          stage3({conv(32, 64), relu(), conv(64, 64), relu(), maxpool2()}),
          decoder({upsample2(), conv(64, 32), relu(), upsample2(), conv(32, 16), relu(), upsample2(),
                   conv(16, 8), relu(), conv(8, 1), relu()}) {}

    void init(uint32_t seed) {
        std::mt19937 rng(seed);
        glorot_init(stage1, rng);
        glorot_init(stage2, rng);
        glorot_init(stage3, rng);
        glorot_init(decoder, rng);
    }

    struct Feats {
        int f1 = -1, f2 = -1, f3 = -1;  // post-pool features per level
        int out = -1;                   // estimated density map (1,H,W)
    };

    Feats forward(GraphF& g, int x) {
        Feats f;
        f.f1 = stage1.forward(g, x);
        f.f2 = stage2.forward(g, f.f1);
        f.f3 = stage3.forward(g, f.f2);
        f.out = decoder.forward(g, f.f3);
        return f;
    }

    // density estimate for a whole (H,W) image without recording a tape
    TensorF forward_nograd(const TensorF& image) const {
        TensorF in({1, image.dim(0), image.dim(1)});
        in.data = image.data;
        TensorF t = stage1.forward_nograd(in);
        t = stage2.forward_nograd(t);
        t = stage3.forward_nograd(t);
        return decoder.forward_nograd(t);
    }

    std::vector<TensorF*> params() {
        std::vector<TensorF*> out;
        for (Sequential<float>* s : {&stage1, &stage2, &stage3, &decoder})
            for (TensorF* p : s->params()) out.push_back(p);
        return out;
    }

    std::vector<std::pair<std::string, TensorF*>> named_params() {
        std::vector<std::pair<std::string, TensorF*>> out;
        const char* names[4] = {"counter.s1.", "counter.s2.", "counter.s3.", "counter.dec."};
        Sequential<float>* seqs[4] = {&stage1, &stage2, &stage3, &decoder};
        for (int i = 0; i < 4; ++i)
            for (auto& [n, p] : seqs[i]->named_params(names[i])) out.emplace_back(n, p);
        return out;
    }
};

// Per-level domain classifier: gradient reversal, two convs, global average
// pool to a single source-vs-target logit.
struct DomainClassifier {
    Sequential<float> net;

    DomainClassifier(int channels, double lambda)
        : net({grad_reverse(lambda), conv(channels, std::max(channels / 2, 4)), relu(),
               conv(std::max(channels / 2, 4), 1)}) {}

    int forward_logit(GraphF& g, int feat) { return g.global_avg_pool(net.forward(g, feat)); }

    // probability of "source" for a feature block, in (0,1)
    float predict_prob(const TensorF& feat) const {
        const TensorF logits = net.forward_nograd(feat);
        double acc = 0.0;
        for (float v : logits.data) acc += v;
        return kern::stable_sigmoid(static_cast<float>(acc / static_cast<double>(logits.data.size())));
    }
};

// Discriminator on full-resolution density maps. The gradient reversal is
// applied by the caller on the estimated-density branch only; pseudo-label
// inputs enter as constants.
struct DensityDiscriminator {
    Sequential<float> net;

    DensityDiscriminator() : net({conv(1, 8), relu(), conv(8, 8), relu(), conv(8, 1)}) {}

    int forward_logit(GraphF& g, int density) { return g.global_avg_pool(net.forward(g, density)); }

    float predict_prob(const TensorF& density) const {
        const TensorF logits = net.forward_nograd(density);
        double acc = 0.0;
        for (float v : logits.data) acc += v;
        return kern::stable_sigmoid(static_cast<float>(acc / static_cast<double>(logits.data.size())));
    }
};

// ---------------------------------------------------------------------------
// segmentation post-processing

// min-max normalization to [0,1]; a constant map degenerates to all zeros
inline TensorF normalize_seg(const TensorF& seg) {
    check_finite(seg, "normalize_seg");
    float lo = seg.data[0], hi = seg.data[0];
    for (float v : seg.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    TensorF out(seg.shape);
    if (hi > lo)
        for (size_t i = 0; i < seg.data.size(); ++i) out.data[i] = (seg.data[i] - lo) / (hi - lo);
    return out;
}

// threshold at the mean, strictly above
inline TensorF harden_seg(const TensorF& seg) {
    double mean = 0.0;
    for (float v : seg.data) mean += v;
    mean /= static_cast<double>(seg.data.size());
    TensorF out(seg.shape);
    for (size_t i = 0; i < seg.data.size(); ++i) out.data[i] = seg.data[i] > mean ? 1.f : 0.f;
    return out;
}

inline std::vector<uint8_t> hard_mask(const TensorF& hard) {
    std::vector<uint8_t> m(hard.data.size());
    for (size_t i = 0; i < hard.data.size(); ++i) m[i] = hard.data[i] > 0.5f ? 1 : 0;
    return m;
}

// non-overlapping block average down to the resolution of pooling level l
inline TensorF seg_to_level(const TensorF& seg, int level) {
    if (seg.rank() != 2) throw std::invalid_argument("seg_to_level: need (H,W)");
    if (level < 0) throw std::invalid_argument("seg_to_level: negative level");
    const int b = 1 << level;
    const int h = seg.dim(0), w = seg.dim(1);
    if (h % b != 0 || w % b != 0)
        throw std::invalid_argument("seg_to_level: size " + shape_str(seg.shape) + " not divisible by " +
                                    std::to_string(b));
    TensorF out({h / b, w / b});
    for (int oy = 0; oy < h / b; ++oy)
        for (int ox = 0; ox < w / b; ++ox) {
            double acc = 0.0;
            for (int iy = 0; iy < b; ++iy)
                for (int ix = 0; ix < b; ++ix)
                    acc += seg.data[static_cast<size_t>((oy * b + iy) * w + ox * b + ix)];
            out.data[static_cast<size_t>(oy * (w / b) + ox)] = static_cast<float>(acc / (b * b));
        }
    return out;
}

// crowd-channel soft (or hard) segmentation of one crop, used as the
// feature gate; all-ones when no weak learner is in play
inline TensorF crop_gate(const WeakLearner* pcs, const TensorF& crop_image, bool hard) {
    const int h = crop_image.dim(0), w = crop_image.dim(1);
    if (!pcs) {
        TensorF ones({h, w});
        for (float& v : ones.data) v = 1.f;
        return ones;
    }
    const TensorF seg = infer_segmentation(*pcs, crop_image);
    TensorF crowd({h, w});
    for (int i = 0; i < h * w; ++i) crowd.data[static_cast<size_t>(i)] = seg.data[static_cast<size_t>(i)];
    const TensorF norm = normalize_seg(crowd);
    return hard ? harden_seg(norm) : norm;
}

// ---------------------------------------------------------------------------
// adversarial losses

// Sum of per-level binary cross-entropies for one image: features gated by
// the (level-matched) segmentation, then classified. Source images carry
// label 1, target images label 0.
inline int crt_image_loss(GraphF& g, const CounterNet::Feats& feats, const TensorF& gate_full,
                          float domain_label, std::array<DomainClassifier, 3>& classifiers) {
    const int ids[3] = {feats.f1, feats.f2, feats.f3};
    int total = -1;
    for (int level = 0; level < 3; ++level) {
        const TensorF gate = seg_to_level(gate_full, level + 1);
        const int gated = g.mul_gate(ids[level], gate);
        const int loss = g.bce_logits(classifiers[static_cast<size_t>(level)].forward_logit(g, gated), domain_label);
        total = total < 0 ? loss : g.add(total, loss);
    }
    return total;
}

// ---------------------------------------------------------------------------
// sampled pseudo labels

// Normalize the soft segmentation into a pixel distribution (Eq. of the
// per-pixel probabilities), draw n pixel centers i.i.d. via the alias
// table, and render them like ground truth. A zero segmentation or n = 0
// yields the zero map.
inline TensorF make_sppl(const TensorF& seg, long long n, const DensityConfig& dc, std::mt19937& rng) {
    if (seg.rank() != 2) throw std::invalid_argument("make_sppl: need (H,W) segmentation");
    check_finite(seg, "make_sppl");
    if (n < 0) throw std::invalid_argument("make_sppl: negative count");
    const int h = seg.dim(0), w = seg.dim(1);
    double total = 0.0;
    for (float v : seg.data) {
        if (v < 0.f) throw std::invalid_argument("make_sppl: segmentation must be nonnegative");
        total += v;
    }
    if (!(total > 0.0) || n == 0) return TensorF({h, w});
    const AliasTable table(std::vector<double>(seg.data.begin(), seg.data.end()));
    std::vector<std::array<double, 2>> pts;
    pts.reserve(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) {
        const int idx = table.sample(rng);
        pts.push_back({idx % w + 0.5, idx / w + 0.5});
    }
    return make_density_map(pts, h, w, dc);
}

// inertial count update: a convex blend steered by relative disagreement
inline double update_count(double n_prev, double est) {
    if (!(n_prev >= 0.0) || !(est >= 0.0)) throw std::invalid_argument("update_count: inputs must be >= 0");
    if (n_prev == 0.0 && est == 0.0) return 0.0;
    const double alpha = std::abs(n_prev - est) / std::max(n_prev, est);
    return alpha * n_prev + (1.0 - alpha) * est;
}

// ---------------------------------------------------------------------------
// training loops

namespace detail {

// One training crop: scene index, window, and mirror coin, in that draw
// order. Exposing the window lets the caller slice cached per-image state.
struct CropDraw {
    int scene = 0, ox = 0, oy = 0;
    bool flip = false;
};

inline CrowdScene draw_crop(const std::vector<CrowdScene>& scenes, int crop, std::mt19937& rng,
                            CropDraw* info = nullptr) {
    std::uniform_int_distribution<size_t> pick(0, scenes.size() - 1);
    const size_t i = pick(rng);
    const CrowdScene& s = scenes[i];
    std::uniform_int_distribution<int> dx(0, s.width() - crop), dy(0, s.height() - crop);
    const int ox = dx(rng), oy = dy(rng);
    const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    if (info) *info = {static_cast<int>(i), ox, oy, flip};
    return crop_flip(s, ox, oy, crop, crop, flip);
}

inline TensorF as_chw(const TensorF& hw) {
    TensorF out({1, hw.dim(0), hw.dim(1)});
    out.data = hw.data;
    return out;
}

// crop a full-image (H,W) map to the training window, mirroring columns
// when the crop was flipped
inline TensorF slice_map(const TensorF& full, const CropDraw& d, int crop) {
    const int w = full.dim(1);
    TensorF out({crop, crop});
    for (int iy = 0; iy < crop; ++iy)
        for (int ix = 0; ix < crop; ++ix) {
            const int sx = d.flip ? d.ox + crop - 1 - ix : d.ox + ix;
            out.data[static_cast<size_t>(iy * crop + ix)] = full.data[static_cast<size_t>((d.oy + iy) * w + sx)];
        }
    return out;
}

inline uint32_t mix_seed(uint32_t seed, uint32_t salt) {
    uint32_t x = seed ^ (salt * 0x9E3779B9u);
    x ^= x >> 16;
    x *= 0x7FEB352Du;
    x ^= x >> 15;
    x *= 0x846CA68Bu;
    x ^= x >> 16;
    return x;
}

}  // namespace detail

// Supervised counting on augmented source crops. The counter must be
// initialized by the caller; the crop stream is drawn from mt19937(seed).
inline std::vector<double> pretrain_source(CounterNet& counter, const std::vector<CrowdScene>& source_train,
                                           const TrainConfig& cfg, const DensityConfig& dc, uint32_t seed) {
    validate_train_config(cfg);
    if (source_train.empty()) throw std::invalid_argument("pretrain_source: empty dataset");
    std::mt19937 rng(seed);
    Adam<float> opt(counter.params(), static_cast<float>(cfg.counter_lr));
    std::vector<double> losses;
    losses.reserve(static_cast<size_t>(cfg.pretrain_iterations));
    for (int it = 0; it < cfg.pretrain_iterations; ++it) {
        const CrowdScene crop = detail::draw_crop(source_train, cfg.crop, rng);
        opt.zero_grad();
        GraphF g;
        const CounterNet::Feats f = counter.forward(g, g.input(detail::as_chw(crop.image)));
        const int l = g.euclidean_loss(
            f.out, detail::as_chw(make_density_map(crop.points, cfg.crop, cfg.crop, dc)));
        losses.push_back(g.scalar(l));
        g.backward(l);
        opt.step();
    }
    return losses;
}

// initial per-image count estimates on the target domain
inline std::vector<double> init_counts(const CounterNet& counter, const std::vector<CrowdScene>& target) {
    std::vector<double> n;
    n.reserve(target.size());
    for (const CrowdScene& s : target) n.push_back(count(counter.forward_nograd(s.image)));
    return n;
}

struct IterRecord {
    int iter = 0;
    double l_den = 0.0, l_crt = 0.0, l_cda = 0.0, l_total = 0.0;
    double n_mean = 0.0;
};

// The adaptation loop. Per iteration: one source crop with the counting
// loss, one target crop, segmentation-gated feature alignment on both
// domains, density alignment of the target estimate against its sampled
// pseudo label, one Adam step each for the counter and the adversaries,
// then the inertial count update for the sampled target image.
//
// Randomness is split into independent streams (source crops / target crops
// / pseudo-label sampling / adversary init) so that disabling the
// adversarial terms (lambda1 = lambda2 = 0) leaves the source stream — and
// thus the whole trajectory — bit-identical to pretrain_source under the
// same seed.
inline std::vector<IterRecord> adapt_train(CounterNet& counter, const WeakLearner* pcs,
                                           const std::vector<CrowdScene>& source_train,
                                           const std::vector<CrowdScene>& target_train,
                                           const TrainConfig& cfg, const DensityConfig& dc, uint32_t seed) {
    validate_train_config(cfg);
    if (source_train.empty() || target_train.empty())
        throw std::invalid_argument("adapt_train: both domains need training scenes");
    const bool use_crt = cfg.lambda1 > 0.0;
    const bool use_cda = cfg.lambda2 > 0.0;
    const WeakLearner* gate_pcs = cfg.pcs_gate ? pcs : nullptr;
    if (use_crt && cfg.pcs_gate && !pcs)
        throw std::invalid_argument("adapt_train: segmentation gating requires a trained weak learner");

    std::mt19937 rng_source(seed);
    std::mt19937 rng_target(detail::mix_seed(seed, 1));
    std::mt19937 rng_sppl(detail::mix_seed(seed, 2));
    std::mt19937 rng_cls(detail::mix_seed(seed, 3));

    std::array<DomainClassifier, 3> classifiers{DomainClassifier(kCounterWidths[0], cfg.lambda_grl),
                                                DomainClassifier(kCounterWidths[1], cfg.lambda_grl),
                                                DomainClassifier(kCounterWidths[2], cfg.lambda_grl)};
    DensityDiscriminator dm;
    for (DomainClassifier& d : classifiers) glorot_init(d.net, rng_cls);
    glorot_init(dm.net, rng_cls);

    Adam<float> opt_counter(counter.params(), static_cast<float>(cfg.counter_lr));
    std::vector<TensorF*> cls_params;
    for (DomainClassifier& d : classifiers)
        for (TensorF* p : d.net.params()) cls_params.push_back(p);
    for (TensorF* p : dm.net.params()) cls_params.push_back(p);
    Adam<float> opt_cls(cls_params, static_cast<float>(cfg.classifier_lr));

    // per-target-image pseudo-label state
    std::vector<double> n;
    std::vector<TensorF> target_seg(target_train.size());  // cached soft seg, lazy
    std::vector<TensorF> sppl(target_train.size());
    std::vector<int> rendered_at(target_train.size(), -1);
    if (use_cda) n = init_counts(counter, target_train);

    std::vector<IterRecord> log;
    log.reserve(static_cast<size_t>(cfg.iterations));
    for (int it = 0; it < cfg.iterations; ++it) {
        try {
            const CrowdScene src_crop = detail::draw_crop(source_train, cfg.crop, rng_source);
            opt_counter.zero_grad();
            if (use_crt || use_cda) opt_cls.zero_grad();

            GraphF g;
            const CounterNet::Feats fs = counter.forward(g, g.input(detail::as_chw(src_crop.image)));
            const int l_den_id = g.euclidean_loss(
                fs.out, detail::as_chw(make_density_map(src_crop.points, cfg.crop, cfg.crop, dc)));
            int total = l_den_id;

            IterRecord rec;
            rec.iter = it;
            rec.l_den = g.scalar(l_den_id);

            detail::CropDraw td;
            CounterNet::Feats ft;
            CrowdScene tgt_crop;
            if (use_crt || use_cda) {
                tgt_crop = detail::draw_crop(target_train, cfg.crop, rng_target, &td);
                ft = counter.forward(g, g.input(detail::as_chw(tgt_crop.image)));
            }

            if (use_crt) {
                const TensorF gate_s = crop_gate(gate_pcs, src_crop.image, cfg.hard_seg);
                const TensorF gate_t = crop_gate(gate_pcs, tgt_crop.image, cfg.hard_seg);
                const int crt = g.scale(g.add(crt_image_loss(g, fs, gate_s, 1.f, classifiers),
                                              crt_image_loss(g, ft, gate_t, 0.f, classifiers)),
                                        0.5f);
                rec.l_crt = g.scalar(crt);
                total = g.add(total, g.scale(crt, static_cast<float>(cfg.lambda1)));
            }

            if (use_cda) {
                const size_t ti = static_cast<size_t>(td.scene);
                if (rendered_at[ti] < 0 || it - rendered_at[ti] >= cfg.sppl_refresh) {
                    if (target_seg[ti].numel() == 0) {
                        const CrowdScene& full = target_train[ti];
                        if (pcs) {
                            target_seg[ti] = crop_gate(pcs, full.image, false);
                        } else {
                            target_seg[ti] = TensorF({full.height(), full.width()});
                            for (float& v : target_seg[ti].data) v = 1.f;
                        }
                    }
                    const long long draws = std::llround(n[ti]);
                    sppl[ti] = make_sppl(target_seg[ti], draws, dc, rng_sppl);
                    rendered_at[ti] = it;
                }
                const int real_logit = dm.forward_logit(g, g.input(detail::as_chw(detail::slice_map(
                                                               sppl[ti], td, cfg.crop))));
                const int fake_logit =
                    dm.forward_logit(g, g.grad_reverse(ft.out, static_cast<float>(cfg.lambda_grl)));
                const int cda = g.add(g.bce_logits(real_logit, 1.f), g.bce_logits(fake_logit, 0.f));
                rec.l_cda = g.scalar(cda);
                total = g.add(total, g.scale(cda, static_cast<float>(cfg.lambda2)));
            }

            rec.l_total = g.scalar(total);
            g.backward(total);
            opt_counter.step();
            if (use_crt || use_cda) opt_cls.step();

            if (use_cda) {
                const size_t ti = static_cast<size_t>(td.scene);
                const CrowdScene& full = target_train[ti];
                double est = 0.0;
                for (float v : g.value(ft.out).data) est += v;
                est *= static_cast<double>(full.height()) * full.width() / (cfg.crop * cfg.crop);
                n[ti] = update_count(n[ti], est);
                double acc = 0.0;
                for (double v : n) acc += v;
                rec.n_mean = acc / static_cast<double>(n.size());
            }

            log.push_back(rec);
        } catch (const NumericError& e) {
            throw NumericError("adapt_train aborted at iteration " + std::to_string(it) + ": " + e.what());
        }
    }
    return log;
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalReport {
    double mae = 0.0;
    double rmse = 0.0;
    std::vector<double> est_counts;
    std::vector<double> gt_counts;
};

inline EvalReport evaluate_counter(const CounterNet& counter, const std::vector<CrowdScene>& scenes) {
    if (scenes.empty()) throw std::invalid_argument("evaluate_counter: empty split");
    EvalReport r;
    for (const CrowdScene& s : scenes) {
        r.est_counts.push_back(count(counter.forward_nograd(s.image)));
        r.gt_counts.push_back(static_cast<double>(s.points.size()));
    }
    r.mae = mae(r.est_counts, r.gt_counts);
    r.rmse = rmse(r.est_counts, r.gt_counts);
    return r;
}

}  // namespace cacc
