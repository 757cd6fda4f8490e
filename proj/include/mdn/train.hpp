#pragma once

// Training loop (SGD + warmup/cosine schedule), evaluation over a split, and
// the component-ablation harness.

#include <iostream>

#include "mdn/checkpoint.hpp"
#include "mdn/config.hpp"
#include "mdn/data.hpp"
#include "mdn/metrics.hpp"
#include "mdn/optim.hpp"

namespace mdn {

template <typename S>
MetricsReport evaluate_model(MicroDualNet<S>& model, const Dataset& ds,
                             const std::string& split, const LoaderConfig& loader,
                             const std::vector<EntityDef>& defs, int64_t batch_size) {
    auto idx = ds.split_indices(split);
    check<Error>(!idx.empty(), "evaluate: split '", split, "' is empty");
    LoaderConfig eval_loader = loader;
    eval_loader.augment = false;
    Rng rng(0);  // unused without augmentation
    std::vector<std::vector<float>> logits;
    std::vector<int64_t> action_labels, body_labels;
    for (size_t start = 0; start < idx.size(); start += batch_size) {
        std::vector<size_t> chunk(idx.begin() + start,
                                  idx.begin() + std::min(idx.size(), start + batch_size));
        auto batch = make_batch<S>(ds, chunk, defs, eval_loader, rng);
        auto out = model.forward(batch, /*training=*/false);
        const int64_t c = out.logits.dim(1);
        for (size_t i = 0; i < chunk.size(); ++i) {
            std::vector<float> row(c);
            for (int64_t j = 0; j < c; ++j)
                row[j] = static_cast<float>(out.logits.data()[i * c + j]);
            logits.push_back(std::move(row));
            action_labels.push_back(batch.labels[i]);
            body_labels.push_back(batch.body_labels[i]);
        }
    }
    return compute_metrics(logits, action_labels, body_labels, ds.action_to_body, ds.num_bodies);
}

struct TrainOutcome {
    int epochs_run = 0;
    double final_train_top1 = 0;  // eval-mode over the train split
    double best_val_top1 = 0;
    int best_epoch = -1;
    double final_loss = 0;
    std::vector<double> epoch_losses;
    std::filesystem::path best_ckpt;
    std::filesystem::path last_ckpt;
};

// Full training run driven by a Config. Writes last/best checkpoints, a
// JSON-lines metrics log and a routing-statistics CSV under out_dir.
inline TrainOutcome train_model(const Config& cfg, const Dataset& ds,
                                const std::filesystem::path& out_dir,
                                std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto defs = default_entity_defs(cfg.dataset_kind());
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
    auto model_cfg = cfg.model_config(ds.num_actions);
    MicroDualNet<float> model(model_cfg, defs, seed);

    OptimConfig opt_cfg{cfg.get_double("train.lr"), cfg.get_double("train.momentum"),
                        cfg.get_double("train.weight_decay")};
    SgdOptimizer<float> opt(opt_cfg);

    const int64_t epochs = cfg.get_int("train.epochs");
    const int64_t batch_size = cfg.get_int("train.batch_size");
    const double warmup = cfg.get_double("train.warmup_epochs");
    const double warmup_start = cfg.get_double("train.warmup_start");
    const double stop_at = cfg.get_double("train.stop_at_train_top1");
    const int64_t eval_every = std::max<int64_t>(1, cfg.get_int("train.eval_every"));
    auto train_loader = cfg.loader_config(/*augment=*/true);
    auto eval_loader = cfg.loader_config(/*augment=*/false);

    auto train_idx = ds.split_indices("train");
    check<Error>(!train_idx.empty(), "train: dataset has no train split");
    const bool have_val = !ds.split_indices("val").empty();

    std::ofstream metrics_log(out_dir / "metrics.jsonl");
    std::ofstream routing_log(out_dir / "routing_stats.csv");
    routing_log << "epoch,entity_name,mean_alpha_st,mean_alpha_ts\n";
    Rng aug_rng(derive_seed(seed, 3));

    TrainOutcome outcome;
    outcome.last_ckpt = out_dir / "last.ckpt";
    outcome.best_ckpt = out_dir / "best.ckpt";
    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
        opt.set_lr(lr_at(static_cast<double>(epoch), static_cast<double>(epochs), opt_cfg.lr,
                         warmup, warmup_start));
        auto order = train_idx;
        Rng shuffle_rng(derive_seed(seed, 10000 + static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double ce_sum = 0, mac_sum = 0, total_sum = 0;
        int64_t batches = 0, train_hits = 0, train_count = 0;
        const int64_t k = static_cast<int64_t>(defs.size());
        std::vector<double> alpha_st_sum(k, 0.0);
        std::vector<double> alpha_count(k, 0.0);
        for (size_t start = 0; start < order.size(); start += batch_size) {
            std::vector<size_t> chunk(order.begin() + start,
                                      order.begin() + std::min(order.size(),
                                                               start + batch_size));
            const int64_t batch_id = static_cast<int64_t>(start / batch_size);
            auto batch = make_batch<float>(ds, chunk, defs, train_loader, aug_rng);
            try {
                Tape<float> tape;
                TapeScope<float> scope(&tape);
                auto out = model.forward(batch, /*training=*/true);
                auto loss = model.loss(out, batch.labels);
                tape.backward(loss.loss);
                {
                    TapeScope<float> no_tape(nullptr);
                    opt.step(model.registry());
                }
                ce_sum += loss.report.ce;
                mac_sum += loss.report.mac;
                total_sum += loss.report.total;
                ++batches;
                const int64_t c = out.logits.dim(1);
                for (size_t i = 0; i < chunk.size(); ++i) {
                    std::vector<float> row(c);
                    for (int64_t j = 0; j < c; ++j) row[j] = out.logits.data()[i * c + j];
                    train_hits += argmax_class(row) == batch.labels[i];
                    ++train_count;
                }
                if (out.alpha.defined()) {
                    const int64_t slots = out.alpha.numel() / 2;
                    for (int64_t s = 0; s < slots; ++s) {
                        if (!out.mask[s]) continue;
                        alpha_st_sum[s % k] += out.alpha.data()[s * 2];
                        alpha_count[s % k] += 1.0;
                    }
                }
            } catch (const NumericError& e) {
                std::ofstream diag(out_dir / "diagnostic_abort.json");
                nlohmann::json d = {{"epoch", epoch},
                                    {"batch_id", batch_id},
                                    {"error", e.what()},
                                    {"sample_ids", nlohmann::json::array()}};
                for (size_t i : chunk) d["sample_ids"].push_back(ds.entries[i].id);
                diag << d.dump(2) << "\n";
                fail<Error>("training aborted at epoch ", epoch, " batch ", batch_id, ": ",
                            e.what(), " (diagnostic written to diagnostic_abort.json)");
            }
        }
        const double train_top1_est =
            train_count > 0 ? 100.0 * static_cast<double>(train_hits) / train_count : 0.0;
        outcome.final_loss = batches > 0 ? total_sum / batches : 0.0;
        outcome.epoch_losses.push_back(outcome.final_loss);
        outcome.epochs_run = static_cast<int>(epoch) + 1;

        nlohmann::json line = {
            {"epoch", epoch},
            {"lr", opt.lr()},
            {"loss",
             {{"ce", batches ? ce_sum / batches : 0.0},
              {"mac", batches ? mac_sum / batches : 0.0},
              {"total", outcome.final_loss}}},
            {"train_top1_estimate", train_top1_est}};

        if (have_val && ((epoch + 1) % eval_every == 0 || epoch + 1 == epochs)) {
            auto val = evaluate_model(model, ds, "val", eval_loader, defs, batch_size);
            line["val_top1"] = val.top1;
            line["val_f1_mean"] = val.f1_mean;
            if (val.top1 > outcome.best_val_top1 || outcome.best_epoch < 0) {
                outcome.best_val_top1 = val.top1;
                outcome.best_epoch = static_cast<int>(epoch);
                save_checkpoint(model.registry(), outcome.best_ckpt);
            }
        }
        save_checkpoint(model.registry(), outcome.last_ckpt);

        for (int64_t i = 0; i < k; ++i) {
            const double mean_st = alpha_count[i] > 0 ? alpha_st_sum[i] / alpha_count[i] : 0.5;
            routing_log << epoch << "," << defs[i].name << "," << mean_st << ","
                        << (alpha_count[i] > 0 ? 1.0 - mean_st : 0.5) << "\n";
        }
        metrics_log << line.dump() << "\n";
        metrics_log.flush();
        if (log)
            (*log) << "epoch " << epoch << " lr " << opt.lr() << " loss " << outcome.final_loss
                   << " train~" << train_top1_est << "%\n";

        if (stop_at > 0 && train_top1_est >= stop_at - 5.0) {
            auto train_eval = evaluate_model(model, ds, "train", eval_loader, defs, batch_size);
            outcome.final_train_top1 = train_eval.top1;
            if (train_eval.top1 >= stop_at) break;
        }
    }
    if (outcome.final_train_top1 == 0) {
        auto train_eval = evaluate_model(model, ds, "train", eval_loader, defs, batch_size);
        outcome.final_train_top1 = train_eval.top1;
    }
    if (outcome.best_epoch < 0) save_checkpoint(model.registry(), outcome.best_ckpt);
    return outcome;
}

// Loads a checkpoint into a model built from the config and scores a split.
inline MetricsReport evaluate_checkpoint(const Config& cfg, const Dataset& ds,
                                         const std::filesystem::path& ckpt,
                                         const std::string& split) {
    const auto defs = default_entity_defs(cfg.dataset_kind());
    auto model_cfg = cfg.model_config(ds.num_actions);
    MicroDualNet<float> model(model_cfg, defs, 0);
    load_checkpoint(model.registry(), ckpt);
    return evaluate_model(model, ds, split, cfg.loader_config(false), defs,
                          cfg.get_int("train.batch_size"));
}

// ---------------------------------------------------------------------------
// Ablation harness: the component lattice evaluated over several seeds.

inline const std::vector<std::string>& ablation_lattice() {
    static const std::vector<std::string> names = {"baseline", "ts_only",      "st_only",
                                                   "sem",      "dual",         "mac",
                                                   "routing_nomac", "full"};
    return names;
}

inline Config apply_ablation(Config cfg, const std::string& name) {
    for (const auto& key : {"ablation.st_only", "ablation.ts_only", "ablation.no_mac",
                            "ablation.no_routing", "ablation.no_sem", "ablation.sem_only"})
        cfg.set(key, "false");
    if (name == "baseline")
        cfg.set("ablation.no_sem", "true");
    else if (name == "ts_only")
        cfg.set("ablation.ts_only", "true");
    else if (name == "st_only")
        cfg.set("ablation.st_only", "true");
    else if (name == "sem")
        cfg.set("ablation.sem_only", "true");
    else if (name == "dual") {
        cfg.set("ablation.no_mac", "true");
        cfg.set("ablation.no_routing", "true");
    } else if (name == "mac")
        cfg.set("ablation.no_routing", "true");
    else if (name == "routing_nomac")
        cfg.set("ablation.no_mac", "true");
    else
        check<ConfigError>(name == "full", "unknown ablation config '", name, "'");
    return cfg;
}

struct AblationRun {
    std::string config_name;
    uint64_t seed = 0;
    bool failed = false;
    std::string error;
    MetricsReport test;
};

inline std::vector<AblationRun> run_ablation(const Config& base, const Dataset& ds,
                                             const std::filesystem::path& out_dir,
                                             const std::vector<uint64_t>& seeds,
                                             std::ostream* log = nullptr) {
    std::vector<AblationRun> runs;
    for (const auto& name : ablation_lattice()) {
        for (uint64_t seed : seeds) {
            AblationRun run;
            run.config_name = name;
            run.seed = seed;
            try {
                Config cfg = apply_ablation(base, name);
                cfg.set("train.seed", std::to_string(seed));
                const auto run_dir = out_dir / ("run_" + name + "_s" + std::to_string(seed));
                auto outcome = train_model(cfg, ds, run_dir, log);
                run.test = evaluate_checkpoint(cfg, ds, outcome.best_ckpt, "test");
                if (log)
                    (*log) << name << " seed " << seed << ": test top1 " << run.test.top1
                           << "\n";
            } catch (const std::exception& e) {
                run.failed = true;
                run.error = e.what();
                if (log) (*log) << name << " seed " << seed << " FAILED: " << e.what() << "\n";
            }
            runs.push_back(std::move(run));
        }
    }
    return runs;
}

// Component-matrix CSV, one row per lattice configuration with the seed-mean
// scores.
inline void write_ablation_csv(const std::vector<AblationRun>& runs, std::ostream& out) {
    out << "config,sem,dual_path,mac,routing,seeds,top1_mean,body_top1_mean,f1_mean\n";
    for (const auto& name : ablation_lattice()) {
        const bool has_sem = name != "baseline";
        const bool dual = name == "dual" || name == "mac" || name == "routing_nomac" ||
                          name == "full";
        const bool mac = name == "mac" || name == "full";
        const bool routing = name == "routing_nomac" || name == "full";
        double top1 = 0, body = 0, f1 = 0;
        int count = 0;
        for (const auto& r : runs) {
            if (r.config_name != name || r.failed) continue;
            top1 += r.test.top1;
            body += r.test.body_top1;
            f1 += r.test.f1_mean;
            ++count;
        }
        out << name << "," << (has_sem ? 1 : 0) << "," << (dual ? 1 : 0) << "," << (mac ? 1 : 0)
            << "," << (routing ? 1 : 0) << "," << count << ","
            << (count ? top1 / count : 0.0) << "," << (count ? body / count : 0.0) << ","
            << (count ? f1 / count : 0.0) << "\n";
    }
}

}  // namespace mdn
