// micro-dualnet command-line pipeline: synthetic data generation, entity
// extraction, training, evaluation, component ablation sweeps and the
// two-part hurdle analysis.
//
// Exit codes: 0 success, 1 I/O failure, 2 config/validation error,
// 3 partial failure (some ablation runs failed).

#include <CLI11.hpp>
#include <iostream>

#include "mdn/stats.hpp"
#include "mdn/synth.hpp"
#include "mdn/train.hpp"

namespace fs = std::filesystem;
using namespace mdn;

namespace {

struct CommonArgs {
    std::string out;
    uint64_t seed = 7;
};

Config load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    Config cfg = config_path.empty() ? Config() : Config::from_file(config_path);
    for (const auto& kv : overrides) cfg.apply_override(kv);
    return cfg;
}

void write_metrics_report(const MetricsReport& rep, const fs::path& out_dir,
                          const std::string& stem) {
    nlohmann::json j = {{"top1", rep.top1},
                        {"top5", rep.top5},
                        {"body_top1", rep.body_top1},
                        {"f1_mean", rep.f1_mean},
                        {"body", {{"macro_f1", rep.body.macro_f1}, {"micro_f1", rep.body.micro_f1}}},
                        {"action",
                         {{"macro_f1", rep.action.macro_f1}, {"micro_f1", rep.action.micro_f1}}},
                        {"per_class_f1", rep.action.per_class_f1}};
    std::ofstream js(out_dir / (stem + ".json"));
    js << j.dump(2) << "\n";
    std::ofstream csv(out_dir / (stem + ".csv"));
    csv << "metric,value\n";
    csv << "top1," << rep.top1 << "\n";
    csv << "top5," << rep.top5 << "\n";
    csv << "body_top1," << rep.body_top1 << "\n";
    csv << "body_macro_f1," << rep.body.macro_f1 << "\n";
    csv << "body_micro_f1," << rep.body.micro_f1 << "\n";
    csv << "action_macro_f1," << rep.action.macro_f1 << "\n";
    csv << "action_micro_f1," << rep.action.micro_f1 << "\n";
    csv << "f1_mean," << rep.f1_mean << "\n";
}

int cmd_gen_synth(const CommonArgs& common, int per_class, double noise, int canvas,
                  int duration, bool png) {
    SynthConfig cfg;
    cfg.canvas = canvas;
    cfg.duration = duration;
    cfg.noise = noise;
    cfg.seed = common.seed;
    cfg.n_per_class = per_class;
    cfg.png = png;
    gen_dataset(common.out, builtin_specs(duration), cfg);
    std::cerr << "wrote " << per_class * 8 << " samples to " << common.out << "\n";
    return 0;
}

int cmd_extract_entities(const CommonArgs& common, const std::string& keypoints,
                         const std::string& kind, double theta, double pad, double width,
                         double height) {
    auto skeletons = load_keypoints(keypoints);
    const auto defs = default_entity_defs(dataset_kind_from(kind));
    auto tracks = entity_box_tracks(skeletons, defs, theta, pad, width, height);
    fs::create_directories(common.out);
    std::ofstream csv(fs::path(common.out) / "entities.csv");
    check<IoError>(csv.good(), "cannot write entities.csv under ", common.out);
    csv << "frame,entity,x_min,y_min,x_max,y_max,source,conf\n";
    for (size_t t = 0; t < tracks.size(); ++t)
        for (size_t i = 0; i < defs.size(); ++i) {
            const auto& b = tracks[t][i];
            csv << t << "," << defs[i].name << "," << b.x_min << "," << b.y_min << ","
                << b.x_max << "," << b.y_max << "," << box_source_name(b.source) << ","
                << b.confidence << "\n";
        }
    std::cerr << "wrote " << tracks.size() * defs.size() << " boxes\n";
    return 0;
}

int cmd_train(const CommonArgs& common, const std::string& config_path, const std::string& data,
              const std::vector<std::string>& overrides, bool seed_given) {
    Config cfg = load_config(config_path, overrides);
    if (!data.empty()) cfg.set("data.root", data);
    if (seed_given) cfg.set("train.seed", std::to_string(common.seed));
    check<ConfigError>(!cfg.get_str("data.root").empty(), "no dataset: pass --data or data.root");
    auto ds = load_dataset(cfg.get_str("data.root"));
    fs::create_directories(common.out);
    auto outcome = train_model(cfg, ds, common.out, &std::cerr);
    std::cerr << "trained " << outcome.epochs_run << " epochs, train top1 "
              << outcome.final_train_top1 << "%, best val top1 " << outcome.best_val_top1
              << "%\n";
    if (!ds.split_indices("test").empty()) {
        auto test = evaluate_checkpoint(cfg, ds, outcome.best_ckpt, "test");
        write_metrics_report(test, common.out, "report");
        std::cerr << "test top1 " << test.top1 << "%, f1_mean " << test.f1_mean << "\n";
    }
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& config_path, const std::string& data,
             const std::string& ckpt, const std::string& split,
             const std::vector<std::string>& overrides) {
    Config cfg = load_config(config_path, overrides);
    if (!data.empty()) cfg.set("data.root", data);
    auto ds = load_dataset(cfg.get_str("data.root"));
    auto rep = evaluate_checkpoint(cfg, ds, ckpt, split);
    fs::create_directories(common.out);
    write_metrics_report(rep, common.out, "report");
    std::cerr << split << " top1 " << rep.top1 << "%, top5 " << rep.top5 << "%, f1_mean "
              << rep.f1_mean << "\n";
    return 0;
}

int cmd_ablate(const CommonArgs& common, const std::string& config_path, const std::string& data,
               const std::string& seeds_csv, const std::vector<std::string>& overrides) {
    Config cfg = load_config(config_path, overrides);
    if (!data.empty()) cfg.set("data.root", data);
    auto ds = load_dataset(cfg.get_str("data.root"));
    std::vector<uint64_t> seeds;
    {
        std::stringstream ss(seeds_csv);
        std::string cell;
        while (std::getline(ss, cell, ',')) seeds.push_back(std::stoull(cell));
    }
    check<ConfigError>(!seeds.empty(), "ablate: no seeds given");
    fs::create_directories(common.out);
    auto runs = run_ablation(cfg, ds, common.out, seeds, &std::cerr);
    {
        std::ofstream csv(fs::path(common.out) / "ablation.csv");
        write_ablation_csv(runs, csv);
        std::ofstream per_run(fs::path(common.out) / "ablation_runs.csv");
        per_run << "config,seed,status,top1,body_top1,f1_mean,error\n";
        for (const auto& r : runs)
            per_run << r.config_name << "," << r.seed << "," << (r.failed ? "failed" : "ok")
                    << "," << r.test.top1 << "," << r.test.body_top1 << "," << r.test.f1_mean
                    << "," << (r.failed ? r.error : "") << "\n";
    }
    int failures = 0;
    for (const auto& r : runs) failures += r.failed ? 1 : 0;
    std::cerr << "ablation done: " << runs.size() - failures << "/" << runs.size()
              << " runs succeeded\n";
    return failures > 0 ? 3 : 0;
}

int cmd_hurdle(const CommonArgs& common, const std::string& input, const std::string& family,
               double alpha, bool only_significant) {
    std::ifstream in(input);
    check<IoError>(in.good(), "cannot open ", input);
    auto data = read_hurdle_csv(in);
    auto results = run_hurdle_analysis(data, adjust_family_from(family));
    if (only_significant) {
        std::vector<TestResult> kept;
        for (const auto& r : results)
            if (!r.skipped && r.p <= alpha) kept.push_back(r);
        results = std::move(kept);
    }
    fs::create_directories(common.out);
    std::ofstream csv(fs::path(common.out) / "hurdle.csv");
    check<IoError>(csv.good(), "cannot write hurdle.csv under ", common.out);
    write_results_csv(results, csv);
    std::cerr << "wrote " << results.size() << " contrasts\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Micro-DualNet: keypoint-guided dual-path micro-action recognition"};
    app.require_subcommand(1);

    CommonArgs common;
    bool seed_given = false;

    // gen-synth
    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic micro-action dataset");
    int per_class = 40, canvas = 96, duration = 12;
    double noise = 0.1;
    bool png = false;
    gen->add_option("--out", common.out, "output dataset directory")->required();
    gen->add_option("--per-class", per_class, "samples per action class");
    gen->add_option("--seed", common.seed, "generator seed");
    gen->add_option("--noise", noise, "keypoint confidence noise level");
    gen->add_option("--canvas", canvas, "canvas side in pixels");
    gen->add_option("--duration", duration, "frames per clip");
    gen->add_flag("--png", png, "write per-frame PNGs instead of raw MDNVID1");

    // extract-entities
    auto* extract = app.add_subcommand("extract-entities",
                                       "compute entity boxes from a keypoint file");
    std::string keypoints, kind = "ma52-like";
    double theta = 0.3, pad = 0.10, img_w = 96, img_h = 96;
    extract->add_option("--keypoints", keypoints, "keypoint jsonl file or directory")->required();
    extract->add_option("--out", common.out, "output directory")->required();
    extract->add_option("--kind", kind, "entity set: ma52-like | imigue-like");
    extract->add_option("--theta", theta, "visibility confidence threshold");
    extract->add_option("--pad", pad, "box padding fraction per side");
    extract->add_option("--width", img_w, "image width for clamping");
    extract->add_option("--height", img_h, "image height for clamping");
    extract->add_option("--seed", common.seed, "unused; accepted for uniformity");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string config_path, data_root, ckpt, split = "test";
    std::vector<std::string> overrides;
    train->add_option("--config", config_path, "config file (key = value sections)")
        ->check(CLI::ExistingFile);
    train->add_option("--data", data_root, "dataset root (overrides data.root)");
    train->add_option("--out", common.out, "run output directory")->required();
    train->add_option("--seed", common.seed, "training seed override")
        ->each([&](const std::string&) { seed_given = true; });
    train->add_option("--set", overrides, "config override section.key=value");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    eval->add_option("--config", config_path, "config file")->check(CLI::ExistingFile);
    eval->add_option("--data", data_root, "dataset root");
    eval->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    eval->add_option("--split", split, "split: train | val | test");
    eval->add_option("--out", common.out, "output directory")->required();
    eval->add_option("--seed", common.seed, "unused; accepted for uniformity");
    eval->add_option("--set", overrides, "config override section.key=value");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run the component ablation lattice");
    std::string seeds_csv = "1,2,3";
    ablate->add_option("--config", config_path, "config file")->check(CLI::ExistingFile);
    ablate->add_option("--data", data_root, "dataset root")->required();
    ablate->add_option("--out", common.out, "output directory")->required();
    ablate->add_option("--seeds", seeds_csv, "comma-separated training seeds");
    ablate->add_option("--set", overrides, "config override section.key=value");

    // hurdle
    auto* hurdle = app.add_subcommand("hurdle", "two-part hurdle analysis of engagement");
    std::string input, family = "all";
    double alpha = 0.05;
    bool only_significant = false;
    hurdle->add_option("--input", input, "subject CSV (subject_id,group,<actions...>)")
        ->required();
    hurdle->add_option("--out", common.out, "output directory")->required();
    hurdle->add_option("--alpha", alpha, "significance threshold for filtering");
    hurdle->add_flag("--only-significant", only_significant, "keep rows with p <= alpha");
    hurdle->add_option("--family", family, "BH family: all | per-action | per-part");
    hurdle->add_option("--seed", common.seed, "unused; accepted for uniformity");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_synth(common, per_class, noise, canvas, duration, png);
        if (extract->parsed())
            return cmd_extract_entities(common, keypoints, kind, theta, pad, img_w, img_h);
        if (train->parsed())
            return cmd_train(common, config_path, data_root, overrides, seed_given);
        if (eval->parsed())
            return cmd_eval(common, config_path, data_root, ckpt, split, overrides);
        if (ablate->parsed())
            return cmd_ablate(common, config_path, data_root, seeds_csv, overrides);
        if (hurdle->parsed())
            return cmd_hurdle(common, input, family, alpha, only_significant);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
