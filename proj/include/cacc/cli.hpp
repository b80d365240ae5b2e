#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cacc/adapt.hpp"
#include "cacc/checkpoint.hpp"
#include "cacc/config.hpp"
#include "cacc/dataset.hpp"
#include "cacc/pcs.hpp"
#include "cacc/pgm.hpp"

namespace cacc::cli {

namespace fs = std::filesystem;

// Effective settings for one command: the config with every command-line
// override already folded in, so the provenance record describes exactly
// what ran.
struct Ctx {
    ExperimentConfig cfg;
    std::ostream* out = nullptr;

    fs::path out_dir() const { return cfg.out_dir; }
    fs::path source_dir() const { return cfg.source_dir; }
    fs::path target_dir() const { return cfg.target_dir; }
};

inline void write_run_record(const Ctx& c) {
    fs::create_directories(c.out_dir());
    nlohmann::json j{{"config_hash", config_hash(c.cfg)},
                     {"seed", c.cfg.seed},
                     {"versions", {{"cacc", kVersion}, {"checkpoint", kCheckpointVersion}}}};
    atomic_write_file(c.out_dir() / "run.json", j.dump(2) + "\n");
}

inline fs::path counter_checkpoint(const Ctx& c) {
    return c.cfg.ablation == "source-only" ? c.out_dir() / "pretrain.ckpt"
                                           : c.out_dir() / ("adapt-" + c.cfg.ablation + ".ckpt");
}

inline void require_artifact(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p))
        throw std::invalid_argument("missing " + p.string() + "; run `cacc " + producer + "` first");
}

// fold the ablation mode into the training knobs
inline TrainConfig ablated_train(const ExperimentConfig& cfg) {
    TrainConfig tc = cfg.train;
    if (cfg.ablation == "crt-no-pcs") {
        tc.lambda2 = 0.0;
        tc.pcs_gate = false;
    } else if (cfg.ablation == "crt-pcs") {
        tc.lambda2 = 0.0;
        tc.pcs_gate = true;
    }
    return tc;
}

inline void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& records) {
    std::string text;
    for (const nlohmann::json& r : records) text += r.dump() + "\n";
    atomic_write_file(path, text);
}

// ---------------------------------------------------------------------------
// commands

inline void cmd_gen_data(const Ctx& c) {
    const Dataset src = synth_generate(c.cfg.source);
    const Dataset tgt = synth_generate(c.cfg.target);
    save_dataset(src, c.source_dir());
    save_dataset(tgt, c.target_dir());
    *c.out << "source: " << src.train.size() << " train + " << src.test.size() << " test -> "
           << c.source_dir().string() << "\n";
    *c.out << "target: " << tgt.train.size() << " train + " << tgt.test.size() << " test -> "
           << c.target_dir().string() << "\n";
}

inline void cmd_train_pcs(const Ctx& c) {
    require_artifact(c.source_dir() / "manifest.json", "gen-data");
    const Dataset src = load_dataset(c.source_dir());
    std::vector<double> losses;
    WeakLearner learner = train_weak_learner(src.train, c.cfg.pcs, c.cfg.seed, &losses);
    save_arrays(c.out_dir() / "pcs.ckpt", named_to_arrays(learner.named_params()));
    std::vector<nlohmann::json> records;
    for (size_t i = 0; i < losses.size(); ++i)
        records.push_back({{"iter", static_cast<int>(i)}, {"loss", losses[i]}});
    write_jsonl(c.out_dir() / "pcs_metrics.jsonl", records);
    *c.out << "weak learner: " << losses.size() << " iterations, final loss " << losses.back() << "\n";
}

inline void cmd_seg(const Ctx& c) {
    require_artifact(c.out_dir() / "pcs.ckpt", "train-pcs");
    require_artifact(c.target_dir() / "manifest.json", "gen-data");
    WeakLearner learner;
    load_into(c.out_dir() / "pcs.ckpt", learner.named_params());
    const Dataset tgt = load_dataset(c.target_dir());
    const fs::path dir = c.out_dir() / "seg";
    fs::create_directories(dir);
    for (size_t i = 0; i < tgt.test.size(); ++i) {
        const std::string id = detail::scene_id(static_cast<int>(tgt.train.size() + i));
        const TensorF soft = crop_gate(&learner, tgt.test[i].image, false);
        write_pgm(dir / (id + "_soft.pgm"), soft);
        write_pgm(dir / (id + "_hard.pgm"), harden_seg(soft));
    }
    *c.out << "wrote " << tgt.test.size() << " segmentation pairs to " << dir.string() << "\n";
}

inline void cmd_pretrain(const Ctx& c) {
    require_artifact(c.source_dir() / "manifest.json", "gen-data");
    const Dataset src = load_dataset(c.source_dir());
    CounterNet counter;
    counter.init(detail::mix_seed(c.cfg.seed, 0xC0u));
    const std::vector<double> losses = pretrain_source(counter, src.train, c.cfg.train, c.cfg.density, c.cfg.seed);
    save_arrays(c.out_dir() / "pretrain.ckpt", named_to_arrays(counter.named_params()));
    std::vector<nlohmann::json> records;
    for (size_t i = 0; i < losses.size(); ++i)
        records.push_back({{"iter", static_cast<int>(i)}, {"l_den", losses[i]}});
    write_jsonl(c.out_dir() / "pretrain_metrics.jsonl", records);
    *c.out << "pretrained " << losses.size() << " iterations, final density loss " << losses.back() << "\n";
}

inline void cmd_adapt(const Ctx& c) {
    require_artifact(c.out_dir() / "pretrain.ckpt", "pretrain");
    CounterNet counter;
    load_into(c.out_dir() / "pretrain.ckpt", counter.named_params());

    const fs::path ckpt = c.out_dir() / ("adapt-" + c.cfg.ablation + ".ckpt");
    const fs::path metrics = c.out_dir() / ("metrics-" + c.cfg.ablation + ".jsonl");
    if (c.cfg.ablation == "source-only") {
        // no adaptation stage: the pretrained counter is the result
        save_arrays(ckpt, named_to_arrays(counter.named_params()));
        write_jsonl(metrics, {});
        *c.out << "source-only: kept pretrained weights\n";
        return;
    }

    require_artifact(c.source_dir() / "manifest.json", "gen-data");
    require_artifact(c.target_dir() / "manifest.json", "gen-data");
    const Dataset src = load_dataset(c.source_dir());
    const Dataset tgt = load_dataset(c.target_dir());

    const TrainConfig tc = ablated_train(c.cfg);
    WeakLearner learner;
    const WeakLearner* pcs = nullptr;
    if (tc.pcs_gate && (tc.lambda1 > 0.0 || tc.lambda2 > 0.0)) {
        require_artifact(c.out_dir() / "pcs.ckpt", "train-pcs");
        load_into(c.out_dir() / "pcs.ckpt", learner.named_params());
        pcs = &learner;
    }

    const std::vector<IterRecord> log =
        adapt_train(counter, pcs, src.train, tgt.train, tc, c.cfg.density, c.cfg.seed);
    save_arrays(ckpt, named_to_arrays(counter.named_params()));
    std::vector<nlohmann::json> records;
    for (const IterRecord& r : log)
        records.push_back({{"iter", r.iter},
                           {"l_den", r.l_den},
                           {"l_crt", r.l_crt},
                           {"l_cda", r.l_cda},
                           {"l_total", r.l_total},
                           {"n_mean", r.n_mean}});
    write_jsonl(metrics, records);
    *c.out << "adapted (" << c.cfg.ablation << "): " << log.size() << " iterations\n";
}

inline void cmd_eval(const Ctx& c, bool oracle) {
    require_artifact(c.target_dir() / "manifest.json", "gen-data");
    const Dataset tgt = load_dataset(c.target_dir());
    if (tgt.test.empty()) throw std::invalid_argument("target test split is empty");

    EvalReport report;
    if (oracle) {
        for (const CrowdScene& s : tgt.test) {
            report.gt_counts.push_back(static_cast<double>(s.points.size()));
            report.est_counts.push_back(static_cast<double>(s.points.size()));
        }
        report.mae = mae(report.est_counts, report.gt_counts);
        report.rmse = rmse(report.est_counts, report.gt_counts);
    } else {
        require_artifact(counter_checkpoint(c), c.cfg.ablation == "source-only" ? "pretrain" : "adapt");
        CounterNet counter;
        load_into(counter_checkpoint(c), counter.named_params());
        report = evaluate_counter(counter, tgt.test);
    }

    nlohmann::json j{{"ablation", oracle ? "oracle" : c.cfg.ablation},
                     {"images", static_cast<int>(tgt.test.size())},
                     {"mae", report.mae},
                     {"rmse", report.rmse},
                     {"coverage", nullptr}};
    if (!oracle && fs::exists(c.out_dir() / "pcs.ckpt")) {
        WeakLearner learner;
        load_into(c.out_dir() / "pcs.ckpt", learner.named_params());
        double acc = 0.0;
        for (const CrowdScene& s : tgt.test) {
            const TensorF hard = harden_seg(crop_gate(&learner, s.image, false));
            acc += coverage(hard_mask(hard), s.height(), s.width(), s.points);
        }
        j["coverage"] = acc / static_cast<double>(tgt.test.size());
    }

    const std::string tag = oracle ? "oracle" : c.cfg.ablation;
    atomic_write_file(c.out_dir() / ("eval-" + tag + ".json"), j.dump(2) + "\n");
    std::string csv = "scene,ground_truth,estimate\n";
    for (size_t i = 0; i < tgt.test.size(); ++i) {
        csv += detail::scene_id(static_cast<int>(tgt.train.size() + i)) + "," +
               nlohmann::json(report.gt_counts[i]).dump() + "," +
               nlohmann::json(report.est_counts[i]).dump() + "\n";
    }
    atomic_write_file(c.out_dir() / ("eval-" + tag + ".csv"), csv);
    *c.out << "eval (" << tag << "): mae " << report.mae << ", rmse " << report.rmse << "\n";
}

inline void cmd_render(const Ctx& c) {
    require_artifact(c.target_dir() / "manifest.json", "gen-data");
    require_artifact(counter_checkpoint(c), c.cfg.ablation == "source-only" ? "pretrain" : "adapt");
    const Dataset tgt = load_dataset(c.target_dir());
    CounterNet counter;
    load_into(counter_checkpoint(c), counter.named_params());

    const fs::path dir = c.out_dir() / "render";
    fs::create_directories(dir);
    for (size_t i = 0; i < tgt.test.size(); ++i) {
        const std::string id = detail::scene_id(static_cast<int>(tgt.train.size() + i));
        const CrowdScene& s = tgt.test[i];
        write_pgm(dir / (id + "_input.pgm"), s.image);
        const TensorF den = counter.forward_nograd(s.image);
        TensorF flat({s.height(), s.width()});
        flat.data = den.data;
        write_pgm(dir / (id + "_density.pgm"), normalize_for_render(flat));
    }
    *c.out << "rendered " << tgt.test.size() << " scenes to " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// entry point

inline int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"crowd counting with point-supervised segmentation and adversarial domain adaptation"};
    app.name("cacc");
    bool print_default = false;
    app.add_flag("--print-default-config", print_default, "dump the default configuration as JSON and exit");
    app.require_subcommand(0, 1);

    struct Common {
        std::string config, out_dir, ablation;
        uint32_t seed = 0;
        bool oracle = false;
    };
    std::map<std::string, Common> opts;
    auto add_common = [&](CLI::App* sub, bool with_ablation) {
        Common& o = opts[sub->get_name()];
        sub->add_option("--config", o.config, "experiment configuration file (JSON)")->required();
        sub->add_option("--seed", o.seed, "override the configured seed");
        sub->add_option("--out", o.out_dir, "override the configured output directory");
        if (with_ablation)
            sub->add_option("--ablation", o.ablation, "source-only | crt-no-pcs | crt-pcs | full");
        return sub;
    };

    add_common(app.add_subcommand("gen-data", "synthesize the source and target datasets"), false);
    add_common(app.add_subcommand("train-pcs", "train the point-supervised crowd segmenter"), false);
    add_common(app.add_subcommand("seg", "write segmentation maps for the target test split"), false);
    add_common(app.add_subcommand("pretrain", "supervised counter training on the source domain"), false);
    add_common(app.add_subcommand("adapt", "adversarial adaptation to the target domain"), true);
    CLI::App* eval_cmd = add_common(app.add_subcommand("eval", "evaluate counts on the target test split"), true);
    eval_cmd->add_flag("--oracle", opts["eval"].oracle, "score the ground truth against itself");
    add_common(app.add_subcommand("render", "render inputs and estimated density maps"), true);

    std::vector<const char*> argv{"cacc"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    if (print_default) {
        out << dump_config(ExperimentConfig{});
        return 0;
    }
    const std::vector<CLI::App*> chosen = app.get_subcommands();
    if (chosen.empty()) {
        err << app.help();
        return 1;
    }

    const std::string name = chosen[0]->get_name();
    const Common& o = opts[name];
    try {
        Ctx ctx;
        ctx.cfg = load_config_file(o.config);
        if (chosen[0]->count("--seed")) ctx.cfg.seed = o.seed;
        if (!o.out_dir.empty()) ctx.cfg.out_dir = o.out_dir;
        if (!o.ablation.empty()) ctx.cfg.ablation = o.ablation;
        validate_config(ctx.cfg);
        ctx.out = &out;
        write_run_record(ctx);

        if (name == "gen-data") cmd_gen_data(ctx);
        else if (name == "train-pcs") cmd_train_pcs(ctx);
        else if (name == "seg") cmd_seg(ctx);
        else if (name == "pretrain") cmd_pretrain(ctx);
        else if (name == "adapt") cmd_adapt(ctx);
        else if (name == "eval") cmd_eval(ctx, o.oracle);
        else if (name == "render") cmd_render(ctx);
        return 0;
    } catch (const NumericError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace cacc::cli
