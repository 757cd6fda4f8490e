// Acceptance suite: one check per release criterion, each printing a PASS or
// FAIL line. Run `acceptance` for everything or `acceptance N [N...]` for a
// subset. Exit code is the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>

#include "mdn/gradcheck.hpp"
#include "mdn/stats.hpp"
#include "mdn/synth.hpp"
#include "mdn/train.hpp"

using namespace mdn;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct CheckContext {
    std::vector<std::string> failures;
    void expect(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path work_dir() {
    auto p = fs::temp_directory_path() / "mdn_acceptance";
    fs::create_directories(p);
    return p;
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient integrity

Tensor<double> rnd(Shape shape, Rng& rng, double scale = 1.0) {
    return Tensor<double>::randn(std::move(shape), rng, scale);
}

void check_per_op_gradients(CheckContext& ctx) {
    Rng rng(515);
    Rng aux(616);
    auto other = rnd({3, 4}, aux);
    auto weight = rnd({4, 5}, aux, 0.5);
    auto gamma = rnd({4}, aux, 0.2);
    auto beta = rnd({4}, aux, 0.2);
    auto table = rnd({5, 4}, aux);
    using Fn = std::function<Tensor<double>(const Tensor<double>&)>;
    std::vector<std::pair<const char*, Fn>> ops = {
        {"add", [&](const Tensor<double>& x) { return sum_all(add(x, other)); }},
        {"sub", [&](const Tensor<double>& x) { return sum_all(sub(other, x)); }},
        {"mul", [&](const Tensor<double>& x) { return sum_all(mul(x, mul(x, other))); }},
        {"scalar_mul", [](const Tensor<double>& x) { return sum_all(scalar_mul(x, -1.7)); }},
        {"matmul", [&](const Tensor<double>& x) {
             return sum_all(mul(matmul(x, weight), matmul(x, weight)));
         }},
        {"concat", [&](const Tensor<double>& x) {
             return sum_all(mul(concat<double>({x, x}, 1), concat<double>({other, x}, 1)));
         }},
        {"slice", [](const Tensor<double>& x) {
             return sum_all(mul(slice(x, 1, 1, 2), slice(x, 1, 0, 2)));
         }},
        {"reshape", [&](const Tensor<double>& x) {
             return sum_all(mul(reshape(x, {4, 3}), reshape(x, {4, 3})));
         }},
        {"transpose", [&](const Tensor<double>& x) {
             return sum_all(mul(transpose(x, {1, 0}), transpose(x, {1, 0})));
         }},
        {"softmax", [&](const Tensor<double>& x) { return sum_all(mul(softmax_last(x), other)); }},
        {"softmax_masked", [&](const Tensor<double>& x) {
             static const std::vector<uint8_t> mask = {1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1, 0};
             return sum_all(mul(softmax_last(x, &mask), other));
         }},
        {"logsumexp", [](const Tensor<double>& x) { return sum_all(logsumexp_last(x)); }},
        {"layer_norm", [&](const Tensor<double>& x) {
             return sum_all(mul(layer_norm(x, gamma, beta), other));
         }},
        {"gelu", [&](const Tensor<double>& x) { return sum_all(mul(gelu(x), other)); }},
        {"relu", [&](const Tensor<double>& x) { return sum_all(mul(relu(x), other)); }},
        {"sum_axes", [](const Tensor<double>& x) {
             return sum_all(mul(sum_axes(x, {0}), sum_axes(x, {0})));
         }},
        {"mean_axes", [](const Tensor<double>& x) {
             return sum_all(mul(mean_axes(x, {1}), mean_axes(x, {1})));
         }},
        {"l2_normalize", [&](const Tensor<double>& x) {
             return sum_all(mul(l2_normalize_last(x), other));
         }},
        {"dropout", [](const Tensor<double>& x) {
             Rng r(5);  // per-call seeded mask keeps fn pure
             return sum_all(mul(dropout(x, 0.3, r, true), dropout(x, 0.0, r, true)));
         }},
        {"exp", [](const Tensor<double>& x) { return sum_all(exp(scalar_mul(x, 0.4))); }},
        {"log", [](const Tensor<double>& x) { return sum_all(log(scalar_add(mul(x, x), 1.0))); }},
        {"rowwise_scale", [&](const Tensor<double>& x) {
             auto s = reshape(sum_axes(x, {1}), {3, 1});
             return sum_all(rowwise_scale(x, s));
         }},
        {"select_index_last", [](const Tensor<double>& x) {
             return sum_all(mul(select_index_last(x, {2, 0, 3}), select_index_last(x, {1, 1, 0})));
         }},
        {"embedding_lookup", [&](const Tensor<double>& x) {
             auto e = embedding_lookup(table, {0, 4, 4});
             auto y = matmul(x, transpose(e, {1, 0}));
             return sum_all(mul(y, y));
         }},
    };
    for (auto& [name, fn] : ops) {
        double worst = 0;
        for (int rep = 0; rep < 20; ++rep) {
            auto point = rnd({3, 4}, rng);
            worst = std::max(worst, grad_check(fn, point));
        }
        ctx.expect(worst < 1e-3, strcat_msg("op '", name, "' grad error ", worst));
    }
    // structured ops with their own shapes
    {
        auto w = rnd({3, 2, 3, 3}, aux, 0.4);
        auto b = rnd({3}, aux, 0.1);
        double worst = 0;
        for (int rep = 0; rep < 20; ++rep) {
            auto p = rnd({2, 2, 6, 6}, rng);
            worst = std::max(worst, grad_check(
                                        [&](const Tensor<double>& x) {
                                            auto y = conv2d(x, w, b, 2, 1);
                                            return sum_all(mul(y, y));
                                        },
                                        p));
        }
        ctx.expect(worst < 1e-3, strcat_msg("op 'conv2d' grad error ", worst));
    }
    {
        double worst = 0;
        for (int rep = 0; rep < 20; ++rep) {
            auto p = rnd({1, 3, 8, 2, 2}, rng);
            worst = std::max(worst, grad_check(
                                        [](const Tensor<double>& x) {
                                            auto y = temporal_shift(x, 0.25);
                                            return sum_all(mul(y, y));
                                        },
                                        p));
        }
        ctx.expect(worst < 1e-3, strcat_msg("op 'temporal_shift' grad error ", worst));
    }
    {
        std::vector<AlignBox> boxes = {{2.0, 1.0, 14.0, 13.0, true}, {0.0, 0.0, 9.0, 16.0, true}};
        double worst = 0;
        for (int rep = 0; rep < 20; ++rep) {
            auto p = rnd({2, 2, 4, 4}, rng);
            worst = std::max(worst, grad_check(
                                        [&](const Tensor<double>& x) {
                                            auto y = roi_align(x, boxes, 2, 2, 0.25);
                                            return sum_all(mul(y, y));
                                        },
                                        p));
        }
        ctx.expect(worst < 1e-3, strcat_msg("op 'roi_align' grad error ", worst));
    }
    {
        double worst = 0;
        for (int rep = 0; rep < 20; ++rep) {
            auto p = rnd({2, 4, 4}, rng);
            worst = std::max(worst, grad_check(
                                        [](const Tensor<double>& x) {
                                            return sum_all(mul(diag_last2(x), diag_last2(x)));
                                        },
                                        p));
        }
        ctx.expect(worst < 1e-3, strcat_msg("op 'diag_last2' grad error ", worst));
    }
}

void criterion_1(CheckContext& ctx) {
    const auto t0 = Clock::now();
    check_per_op_gradients(ctx);

    // full objective on a B=1, T=4, K=3, D=16 instance, every parameter
    ModelConfig cfg;
    cfg.d = 16;
    cfg.backbone_channels = {3, 4, 6, 6};
    cfg.roi_p = 2;
    cfg.roi_samples = 2;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_dim = 24;
    cfg.dropout = 0.0;  // gradient checks need a pure forward
    cfg.classifier_h1 = 12;
    cfg.classifier_h2 = 8;
    cfg.num_classes = 4;
    auto defs = default_entity_defs(DatasetKind::kMa52Like);
    defs.resize(3);
    MicroDualNet<double> model(cfg, defs, 99);

    Batch<double> batch;
    Rng rng(7);
    batch.frames = Tensor<double>::uniform({1, 4, 3, 16, 16}, rng, 0.0, 1.0);
    batch.labels = {2};
    batch.boxes.resize(1);
    batch.boxes[0].resize(4, std::vector<EntityBox>(3));
    std::uniform_real_distribution<double> u(0.0, 16.0);
    for (int t = 0; t < 4; ++t)
        for (int k = 0; k < 3; ++k) {
            auto& b = batch.boxes[0][t][k];
            double x0 = u(rng), x1 = u(rng), y0 = u(rng), y1 = u(rng);
            b.x_min = std::min(x0, x1);
            b.x_max = std::max(x0, x1) + 1.0;
            b.y_min = std::min(y0, y1);
            b.y_max = std::max(y0, y1) + 1.0;
            b.source = BoxSource::kComputed;
            b.visible = true;
            b.confidence = 0.4 + 0.15 * k;
        }
    batch.boxes[0][2][1].source = BoxSource::kInvalid;  // one occluded slot
    batch.boxes[0][2][1].confidence = 0.0;

    // eval-mode forward: dropout masks are train-time regularization, and a
    // stochastic objective cannot be finite-differenced
    auto objective = [&]() {
        auto out = model.forward(batch, /*training=*/false);
        return model.loss(out, batch.labels).loss;
    };
    double worst = 0;
    std::string worst_name = "none";
    for (auto& entry : model.registry().entries()) {
        const double err = grad_check_wrt(objective, entry.tensor);
        if (err > worst) {
            worst = err;
            worst_name = entry.name;
        }
    }
    {
        batch.frames.set_requires_grad(true);
        const double err = grad_check_wrt(objective, batch.frames);
        if (err > worst) {
            worst = err;
            worst_name = "input frames";
        }
    }
    ctx.expect(worst < 1e-3,
               strcat_msg("full objective grad error ", worst, " at '", worst_name, "'"));
    const double elapsed = seconds_since(t0);
    ctx.expect(elapsed < 60.0, strcat_msg("gradient integrity took ", elapsed, " s (limit 60)"));
    std::fprintf(stderr, "  [c1] worst full-model grad error %.3g at %s (%.1f s)\n", worst,
                 worst_name.c_str(), elapsed);
}

// ---------------------------------------------------------------------------
// Criterion 2: geometry oracles

EntityBox geometry_box_oracle(const FrameSkeleton& skel, const EntityDef& def, double theta,
                              double pad, double w, double h, const EntityBox* prev) {
    std::vector<const Keypoint*> vis;
    for (int j : def.joints)
        if (skel.keypoints[j].c > theta) vis.push_back(&skel.keypoints[j]);
    if (vis.size() >= 2) {
        double x0 = vis[0]->x, x1 = vis[0]->x, y0 = vis[0]->y, y1 = vis[0]->y;
        double conf = 0;
        for (auto* k : vis) {
            x0 = std::min(x0, k->x);
            x1 = std::max(x1, k->x);
            y0 = std::min(y0, k->y);
            y1 = std::max(y1, k->y);
            conf += k->c;
        }
        EntityBox b;
        b.x_min = std::max(0.0, x0 - pad * (x1 - x0));
        b.x_max = std::min(w, x1 + pad * (x1 - x0));
        b.y_min = std::max(0.0, y0 - pad * (y1 - y0));
        b.y_max = std::min(h, y1 + pad * (y1 - y0));
        b.visible = true;
        b.source = BoxSource::kComputed;
        b.confidence = conf / static_cast<double>(vis.size());
        return b;
    }
    if (prev && prev->source != BoxSource::kInvalid) {
        EntityBox b = *prev;
        b.visible = false;
        b.source = BoxSource::kCarriedForward;
        b.confidence = 0;
        return b;
    }
    return EntityBox{};
}

double dense_bilinear(const Tensor<double>& fm, int64_t n, int64_t c, double y, double x) {
    const int64_t h = fm.dim(2), w = fm.dim(3);
    double acc = 0;
    for (int64_t iy = 0; iy < h; ++iy)
        for (int64_t ix = 0; ix < w; ++ix) {
            const double wy = std::max(0.0, 1.0 - std::abs((y - 0.5) - static_cast<double>(iy)));
            const double wx = std::max(0.0, 1.0 - std::abs((x - 0.5) - static_cast<double>(ix)));
            acc += wy * wx * fm.data()[((n * fm.dim(1) + c) * h + iy) * w + ix];
        }
    return acc;
}

void criterion_2(CheckContext& ctx) {
    Rng rng(2026);
    std::uniform_real_distribution<double> coord(-8.0, 104.0);
    std::uniform_real_distribution<double> conf(0.0, 1.0);
    const auto defs = default_entity_defs(DatasetKind::kMa52Like);
    int mismatches = 0;
    // 200 fuzzed skeleton sequences with occlusion chains
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<FrameSkeleton> seq(4);
        for (auto& skel : seq)
            for (auto& kp : skel.keypoints) {
                kp = {coord(rng), coord(rng), conf(rng)};
                if (conf(rng) < 0.25) kp.c = 0.0;  // occlusion bursts
            }
        for (const auto& def : defs) {
            const EntityBox* prev_got = nullptr;
            EntityBox prev_want{};
            const EntityBox* prev_want_ptr = nullptr;
            EntityBox got_prev_store{};
            for (const auto& skel : seq) {
                auto got = compute_entity_box(skel, def, prev_got, 0.3, 0.10, 96, 96);
                auto want =
                    geometry_box_oracle(skel, def, 0.3, 0.10, 96, 96, prev_want_ptr);
                const bool same = got.source == want.source && got.x_min == want.x_min &&
                                  got.x_max == want.x_max && got.y_min == want.y_min &&
                                  got.y_max == want.y_max && got.confidence == want.confidence;
                if (!same) ++mismatches;
                got_prev_store = got;
                prev_got = &got_prev_store;
                prev_want = want;
                prev_want_ptr = &prev_want;
            }
        }
    }
    ctx.expect(mismatches == 0, strcat_msg(mismatches, " box mismatches vs hand oracle"));

    // roi_align vs the dense bilinear oracle
    auto fm = Tensor<double>::randn({1, 3, 12, 12}, rng);
    std::uniform_real_distribution<double> bc(0.0, 96.0);
    double worst = 0;
    for (int rep = 0; rep < 50; ++rep) {
        double x0 = bc(rng), x1 = bc(rng), y0 = bc(rng), y1 = bc(rng);
        if (x0 > x1) std::swap(x0, x1);
        if (y0 > y1) std::swap(y0, y1);
        x1 = std::max(x1, x0 + 1.0);
        y1 = std::max(y1, y0 + 1.0);
        AlignBox box{x0, y0, x1, y1, true};
        auto got = roi_align(fm, {box}, 4, 2, 1.0 / 8.0);
        const double scale = 1.0 / 8.0;
        const double bw = (x1 - x0) * scale / 4, bh = (y1 - y0) * scale / 4;
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t by = 0; by < 4; ++by)
                for (int64_t bx = 0; bx < 4; ++bx) {
                    double acc = 0;
                    for (int sy = 0; sy < 2; ++sy)
                        for (int sx = 0; sx < 2; ++sx)
                            acc += dense_bilinear(fm, 0, c, y0 * scale + (by + (sy + 0.5) / 2) * bh,
                                                  x0 * scale + (bx + (sx + 0.5) / 2) * bw);
                    acc /= 4.0;
                    worst = std::max(worst,
                                     std::abs(acc - got.data()[(c * 4 + by) * 4 + bx]));
                }
    }
    ctx.expect(worst < 1e-5, strcat_msg("roi_align deviates from dense oracle by ", worst));
}

// ---------------------------------------------------------------------------
// Criterion 3: closed-form losses

void criterion_3(CheckContext& ctx) {
    Rng rng(3);
    auto z = l2_normalize_last(Tensor<double>::randn({1, 8}, rng));
    auto t1 = mac_term(reshape(z, {8}), z, 0, 0.07);
    ctx.expect(std::abs(t1.item()) < 1e-12, strcat_msg("mac_term at T=1 is ", t1.item()));

    auto q = reshape(l2_normalize_last(Tensor<double>::randn({1, 8}, rng)), {8});
    auto rows = concat<double>({reshape(q, {1, 8}), reshape(q, {1, 8}), reshape(q, {1, 8}),
                                reshape(q, {1, 8})},
                               0);
    auto t2 = mac_term(q, rows, 1, 0.07);
    ctx.expect(std::abs(t2.item() - std::log(4.0)) < 1e-5,
               strcat_msg("mac_term identical-rows = ", t2.item(), " want ln 4"));

    auto e0 = Tensor<double>::from({1, 4}, {1, 0, 0, 0});
    auto e1 = Tensor<double>::from({1, 4}, {0, 1, 0, 0});
    auto e2 = Tensor<double>::from({1, 4}, {0, 0, 1, 0});
    auto e3 = Tensor<double>::from({1, 4}, {0, 0, 0, 1});
    auto t3 = mac_term(reshape(e0, {4}), concat<double>({e0, e1, e2, e3}, 0), 0, 0.07);
    const double want = std::log(1.0 + 3.0 * std::exp(-1.0 / 0.07));
    ctx.expect(std::abs(t3.item() - want) / want < 0.01,
               strcat_msg("mac_term orthogonal-negatives = ", t3.item(), " want ", want));
    ctx.expect(std::abs(t3.item() - 1.88e-6) / 1.88e-6 < 0.02,
               strcat_msg("mac_term orthogonal-negatives = ", t3.item(), " want ~1.88e-6"));

    auto logits = Tensor<double>::filled({2, 52}, 0.0);
    auto ce = cross_entropy(logits, {3, 51});
    ctx.expect(std::abs(ce.item() - std::log(52.0)) < 1e-4,
               strcat_msg("uniform-logits ce = ", ce.item(), " want ln 52"));
}

// ---------------------------------------------------------------------------
// Criterion 4: routing contract

void criterion_4(CheckContext& ctx) {
    auto w = route_weights({1.0, 0.0}, 0.7);
    ctx.expect(std::abs(w[0] - 0.8067) < 1e-4 && std::abs(w[1] - 0.1933) < 1e-4,
               strcat_msg("route_weights((1,0),0.7) = (", w[0], ",", w[1], ")"));

    Rng rng(4);
    ParamRegistry<double> reg;
    Routing<double> routing(16, 4, 0.7, 0.0, rng, reg, "routing");
    auto x_st = Tensor<double>::randn({2, 3, 4, 16}, rng);
    auto x_ts = Tensor<double>::randn({2, 3, 4, 16}, rng);
    std::vector<uint8_t> mask(2 * 3 * 4, 1);
    Rng drop(1);
    auto out = routing.forward(x_st, x_ts, mask, drop, false);
    double worst = 0;
    for (int64_t r = 0; r < 2 * 3 * 4; ++r)
        worst = std::max(worst,
                         std::abs(out.alpha.data()[2 * r] + out.alpha.data()[2 * r + 1] - 1.0));
    ctx.expect(worst < 1e-6, strcat_msg("alpha rows deviate from 1 by ", worst));

    const int64_t count = routing_param_count(256, 6);
    ctx.expect(count >= 350000 && count <= 550000,
               strcat_msg("routing_param_count(256,6) = ", count, " outside [0.35M, 0.55M]"));
}

// ---------------------------------------------------------------------------
// Criteria 5-7 share the synthetic benchmark machinery.

Config desk_config(const fs::path& data_root) {
    Config cfg;
    cfg.set("data.root", data_root.string());
    return cfg;
}

void force_all_train(const fs::path& root) {
    std::ifstream in(root / "manifest.csv");
    std::string content, line;
    std::getline(in, line);
    content = line + "\n";
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto first = line.find(',');
        auto second = line.find(',', first + 1);
        content += line.substr(0, first + 1) + "train" + line.substr(second) + "\n";
    }
    in.close();
    std::ofstream out(root / "manifest.csv");
    out << content;
}

void criterion_5(CheckContext& ctx) {
    const auto t0 = Clock::now();
    const auto dir = work_dir() / "overfit_ds";
    if (!fs::exists(dir / "manifest.csv")) {
        SynthConfig gen;
        gen.canvas = 64;
        gen.duration = 12;
        gen.n_per_class = 8;  // 64 samples total
        gen.seed = 41;
        gen.noise = 0.05;
        gen_dataset(dir, builtin_specs(), gen);
        force_all_train(dir);
    }
    auto ds = load_dataset(dir);
    Config cfg = desk_config(dir);
    cfg.set("train.epochs", "200");
    cfg.set("train.lr", "0.02");
    cfg.set("train.warmup_epochs", "3");
    cfg.set("train.stop_at_train_top1", "95");
    cfg.set("train.eval_every", "1000");  // no val split
    cfg.set("model.dropout", "0");
    cfg.set("data.augment", "false");
    auto outcome = train_model(cfg, ds, work_dir() / "overfit_run", nullptr);
    const double elapsed = seconds_since(t0);
    std::fprintf(stderr, "  [c5] train top1 %.1f%% after %d epochs, %.0f s\n",
                 outcome.final_train_top1, outcome.epochs_run, elapsed);
    ctx.expect(outcome.final_train_top1 >= 95.0,
               strcat_msg("train top1 ", outcome.final_train_top1, "% after ",
                          outcome.epochs_run, " epochs"));
    ctx.expect(outcome.epochs_run <= 200, "took more than 200 epochs");
    ctx.expect(elapsed < 600.0, strcat_msg("overfit took ", elapsed, " s (limit 600)"));

    // training loss is non-increasing over any 10-epoch window, allowing
    // single-epoch noise
    const auto& losses = outcome.epoch_losses;
    for (size_t e = 10; e < losses.size(); ++e) {
        double window_max = 0;
        for (size_t j = e - 10; j < e; ++j) window_max = std::max(window_max, losses[j]);
        if (!(losses[e] <= window_max + 1e-3)) {
            ctx.expect(false, strcat_msg("loss rose above its trailing 10-epoch max at epoch ",
                                         e));
            break;
        }
    }
}

// Shared ablation sweep for criteria 6 and 7. Cached across invocations in
// one process and on disk.

struct SweepScores {
    // config -> seed -> metrics
    std::map<std::string, std::map<uint64_t, MetricsReport>> scores;
    std::vector<int> position_classes, motion_classes;
};

const SweepScores& benchmark_sweep() {
    static SweepScores cache;
    static bool done = false;
    if (done) return cache;
    const auto dir = work_dir() / "benchmark_ds";
    if (!fs::exists(dir / "manifest.csv")) {
        SynthConfig gen;
        gen.canvas = 64;
        gen.duration = 12;
        gen.n_per_class = 12;
        gen.seed = 17;
        gen.noise = 0.05;
        gen_dataset(dir, builtin_specs(), gen);
    }
    for (const auto& spec : builtin_specs())
        (spec.kind == ActionKind::kPosition ? cache.position_classes : cache.motion_classes)
            .push_back(spec.action_id);

    auto ds = load_dataset(dir);
    Config base = desk_config(dir);
    base.set("train.epochs", "24");
    base.set("train.lr", "0.02");
    base.set("train.warmup_epochs", "2");
    base.set("train.eval_every", "6");
    base.set("model.dropout", "0.05");
    const std::vector<uint64_t> seeds = {1, 2, 3};
    for (const auto& name : ablation_lattice()) {
        for (uint64_t seed : seeds) {
            Config cfg = apply_ablation(base, name);
            cfg.set("train.seed", std::to_string(seed));
            const auto run_dir =
                work_dir() / ("bench_" + name + "_s" + std::to_string(seed));
            auto outcome = train_model(cfg, ds, run_dir, nullptr);
            cache.scores[name][seed] = evaluate_checkpoint(cfg, ds, outcome.best_ckpt, "test");
            std::fprintf(stderr, "  [sweep] %s seed %llu: top1 %.1f\n", name.c_str(),
                         static_cast<unsigned long long>(seed),
                         cache.scores[name][seed].top1);
        }
    }
    done = true;
    return cache;
}

double mean_class_accuracy(const MetricsReport& rep, const std::vector<int>& classes) {
    double acc = 0;
    for (int c : classes) {
        int64_t row_total = 0;
        for (int64_t v : rep.action_confusion[c]) row_total += v;
        acc += row_total > 0 ? 100.0 * rep.action_confusion[c][c] / row_total : 0.0;
    }
    return acc / classes.size();
}

void criterion_6(CheckContext& ctx) {
    const auto& sweep = benchmark_sweep();
    double st_pos = 0, ts_pos = 0, st_mot = 0, ts_mot = 0;
    int full_wins = 0, n_seeds = 0;
    for (const auto& [seed, st_rep] : sweep.scores.at("st_only")) {
        const auto& ts_rep = sweep.scores.at("ts_only").at(seed);
        const auto& full_rep = sweep.scores.at("full").at(seed);
        st_pos += mean_class_accuracy(st_rep, sweep.position_classes);
        ts_pos += mean_class_accuracy(ts_rep, sweep.position_classes);
        st_mot += mean_class_accuracy(st_rep, sweep.motion_classes);
        ts_mot += mean_class_accuracy(ts_rep, sweep.motion_classes);
        if (full_rep.top1 >= std::max(st_rep.top1, ts_rep.top1)) ++full_wins;
        ++n_seeds;
    }
    st_pos /= n_seeds;
    ts_pos /= n_seeds;
    st_mot /= n_seeds;
    ts_mot /= n_seeds;
    std::fprintf(stderr,
                 "  [c6] position: ST %.1f vs TS %.1f | motion: TS %.1f vs ST %.1f | "
                 "full >= max(single) in %d/%d seeds\n",
                 st_pos, ts_pos, ts_mot, st_mot, full_wins, n_seeds);
    ctx.expect(st_pos > ts_pos, strcat_msg("position classes: ST ", st_pos, " vs TS ", ts_pos));
    ctx.expect(ts_mot > st_mot, strcat_msg("motion classes: TS ", ts_mot, " vs ST ", st_mot));
    ctx.expect(full_wins >= 2,
               strcat_msg("full beat max(single paths) in only ", full_wins, "/3 seeds"));
}

void criterion_7(CheckContext& ctx) {
    const auto& sweep = benchmark_sweep();
    auto mean_top1 = [&](const std::string& name) {
        double acc = 0;
        int n = 0;
        for (const auto& [seed, rep] : sweep.scores.at(name)) {
            acc += rep.top1;
            ++n;
        }
        return acc / n;
    };
    const double full = mean_top1("full");
    const double routing_nomac = mean_top1("routing_nomac");
    const double dual = mean_top1("dual");
    const double single = 0.5 * (mean_top1("st_only") + mean_top1("ts_only"));
    const double baseline = mean_top1("baseline");
    std::fprintf(stderr,
                 "  [c7] full %.1f | routing-mac %.1f | dual %.1f | single %.1f | baseline "
                 "%.1f\n",
                 full, routing_nomac, dual, single, baseline);
    const double tie = 1.0;  // ties allowed within 1 point
    ctx.expect(full >= routing_nomac - tie,
               strcat_msg("full ", full, " < routing_nomac ", routing_nomac, " - 1"));
    ctx.expect(full >= dual - tie, strcat_msg("full ", full, " < dual ", dual, " - 1"));
    ctx.expect(dual >= single - tie, strcat_msg("dual ", dual, " < single ", single, " - 1"));
    ctx.expect(single >= baseline - tie,
               strcat_msg("single ", single, " < baseline ", baseline, " - 1"));
}

// ---------------------------------------------------------------------------
// Criterion 8: metrics oracles

void criterion_8(CheckContext& ctx) {
    Rng rng(8);
    std::uniform_int_distribution<int64_t> cls(0, 6);
    for (int rep = 0; rep < 100; ++rep) {
        const int n = 30;
        std::vector<std::vector<float>> logits(n, std::vector<float>(7, 0.0f));
        std::vector<int64_t> labels(n), preds(n);
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        for (int i = 0; i < n; ++i) {
            for (auto& v : logits[i]) v = u(rng);
            labels[i] = cls(rng);
            preds[i] = argmax_class(logits[i]);
        }
        auto cm = confusion_matrix(labels, preds, 7);
        auto f1 = f1_scores(cm);
        const double top1 = topk_accuracy(logits, labels, 1);
        if (f1.micro_f1 != top1) {
            ctx.expect(false, strcat_msg("micro F1 ", f1.micro_f1, " != top1 ", top1));
            return;
        }
    }
    // hand confusion-matrix oracle
    std::vector<int64_t> truth = {0, 0, 1, 1, 2, 2};
    std::vector<int64_t> pred = {0, 0, 0, 1, 2, 2};
    auto f1 = f1_scores(confusion_matrix(truth, pred, 3));
    ctx.expect(std::abs(f1.per_class_f1[0] - 80.0) < 1e-6 &&
                   std::abs(f1.per_class_f1[1] - 200.0 / 3.0) < 1e-6 &&
                   std::abs(f1.per_class_f1[2] - 100.0) < 1e-6,
               "per-class F1 deviates from the hand oracle");
    ctx.expect(std::abs(f1.macro_f1 - (80.0 + 200.0 / 3.0 + 100.0) / 3.0) < 1e-6,
               strcat_msg("macro F1 ", f1.macro_f1, " deviates from hand value"));

    auto logits = std::vector<std::vector<float>>{{1, 0, 0, 0}, {0, 1, 0, 0}};
    auto rep = compute_metrics(logits, {0, 2}, {0, 1}, {0, 0, 1, 1}, 2);
    const double mean4 = (rep.body.macro_f1 + rep.body.micro_f1 + rep.action.macro_f1 +
                          rep.action.micro_f1) /
                         4.0;
    ctx.expect(rep.f1_mean == mean4, "f1_mean is not the mean of the four level scores");
}

// ---------------------------------------------------------------------------
// Criterion 9: hurdle statistics

std::vector<double> newton_oracle(const std::vector<std::vector<double>>& x,
                                  const std::vector<int>& y) {
    const int n = static_cast<int>(x.size()), p = static_cast<int>(x[0].size());
    std::vector<double> beta(p, 0.0);
    for (int it = 0; it < 80; ++it) {
        std::vector<double> g(p, 0.0);
        std::vector<std::vector<double>> hess(p, std::vector<double>(p + 1, 0.0));
        for (int i = 0; i < n; ++i) {
            double eta = 0;
            for (int j = 0; j < p; ++j) eta += x[i][j] * beta[j];
            const double mu = 1.0 / (1.0 + std::exp(-eta));
            for (int j = 0; j < p; ++j) {
                g[j] += (y[i] - mu) * x[i][j];
                for (int k = 0; k < p; ++k) hess[j][k] += mu * (1 - mu) * x[i][j] * x[i][k];
            }
        }
        for (int j = 0; j < p; ++j) hess[j][p] = g[j];
        for (int col = 0; col < p; ++col) {
            int piv = col;
            for (int r = col + 1; r < p; ++r)
                if (std::abs(hess[r][col]) > std::abs(hess[piv][col])) piv = r;
            std::swap(hess[col], hess[piv]);
            const double d = hess[col][col];
            for (int k = col; k <= p; ++k) hess[col][k] /= d;
            for (int r = 0; r < p; ++r) {
                if (r == col) continue;
                const double f = hess[r][col];
                for (int k = col; k <= p; ++k) hess[r][k] -= f * hess[col][k];
            }
        }
        for (int j = 0; j < p; ++j) beta[j] += hess[j][p];
    }
    return beta;
}

void criterion_9(CheckContext& ctx) {
    // closed-form intercept
    std::vector<std::vector<double>> x(10, {1.0});
    std::vector<int> y = {1, 1, 1, 1, 1, 1, 0, 0, 0, 0};
    auto fit = fit_logistic_irls(x, y);
    ctx.expect(std::abs(fit.beta[0] - std::log(1.5)) < 1e-6,
               strcat_msg("intercept-only beta ", fit.beta[0], " want ln(0.6/0.4)"));

    // IRLS vs the Newton oracle on 20 random datasets
    Rng rng(9);
    std::uniform_real_distribution<double> ux(-1.5, 1.5), ub(-1.0, 1.0), uu(0.0, 1.0);
    int tested = 0;
    double worst = 0;
    while (tested < 20) {
        const int n = 50, p = 3;
        std::vector<std::vector<double>> xs(n, std::vector<double>(p));
        std::vector<int> ys(n);
        std::vector<double> beta = {ub(rng), ub(rng), ub(rng)};
        int ones = 0;
        for (int i = 0; i < n; ++i) {
            xs[i] = {1.0, ux(rng), ux(rng)};
            double eta = 0;
            for (int j = 0; j < p; ++j) eta += xs[i][j] * beta[j];
            ys[i] = uu(rng) < sigmoid(eta) ? 1 : 0;
            ones += ys[i];
        }
        if (ones < 5 || ones > n - 5) continue;
        auto f = fit_logistic_irls(xs, ys);
        if (f.separation) continue;
        auto o = newton_oracle(xs, ys);
        for (int j = 0; j < p; ++j) worst = std::max(worst, std::abs(f.beta[j] - o[j]));
        ++tested;
    }
    ctx.expect(worst < 1e-6, strcat_msg("IRLS vs Newton oracle deviation ", worst));

    auto adj = adjust_pvalues_bh({0.01, 0.02, 0.03, 0.04});
    for (double v : adj)
        ctx.expect(v == 0.04, strcat_msg("BH adjusted value ", v, " != 0.04 exactly"));

    // reciprocal under group swap
    std::vector<double> strong = {0.9, 0.8, 0.0, 0.85, 0.7, 0.9};
    std::vector<double> weak = {0.1, 0.0, 0.2, 0.0, 0.15, 0.1};
    HurdleData fwd_data, rev_data;
    fwd_data.actions = rev_data.actions = {"a"};
    int id = 0;
    for (double v : strong) fwd_data.records.push_back({"s" + std::to_string(id++), "A", {v}});
    for (double v : weak) fwd_data.records.push_back({"s" + std::to_string(id++), "B", {v}});
    id = 0;
    for (double v : strong) rev_data.records.push_back({"s" + std::to_string(id++), "Z", {v}});
    for (double v : weak) rev_data.records.push_back({"s" + std::to_string(id++), "B", {v}});
    auto f1 = pairwise_contrasts(fwd_data, 0, HurdlePart::kProbability);
    auto f2 = pairwise_contrasts(rev_data, 0, HurdlePart::kProbability);
    ctx.expect(std::abs(f1[0].effect * f2[0].effect - 1.0) < 1e-6,
               strcat_msg("effects ", f1[0].effect, " and ", f2[0].effect,
                          " are not reciprocal"));
}

// ---------------------------------------------------------------------------
// Criterion 10: determinism and persistence

void criterion_10(CheckContext& ctx) {
    const auto dir = work_dir() / "determinism_ds";
    if (!fs::exists(dir / "manifest.csv")) {
        SynthConfig gen;
        gen.canvas = 32;
        gen.duration = 10;
        gen.n_per_class = 3;
        gen.seed = 12;
        gen_dataset(dir, builtin_specs(10), gen);
    }
    auto ds = load_dataset(dir);
    Config cfg = desk_config(dir);
    cfg.set("train.epochs", "3");
    cfg.set("train.batch_size", "4");
    cfg.set("model.d", "16");
    cfg.set("model.backbone_channels", "4,6,8,8");
    cfg.set("model.ffn_dim", "32");
    cfg.set("model.layers", "1");
    cfg.set("model.heads", "2");
    cfg.set("model.classifier_h1", "24");
    cfg.set("model.classifier_h2", "16");
    auto r1 = train_model(cfg, ds, work_dir() / "det_run1", nullptr);
    auto r2 = train_model(cfg, ds, work_dir() / "det_run2", nullptr);
    ctx.expect(r1.final_loss == r2.final_loss,
               strcat_msg("final losses differ: ", r1.final_loss, " vs ", r2.final_loss));
    ctx.expect(r1.epoch_losses == r2.epoch_losses, "per-epoch losses differ between runs");

    auto m1 = evaluate_checkpoint(cfg, ds, r1.best_ckpt, "test");
    auto m2 = evaluate_checkpoint(cfg, ds, r1.best_ckpt, "test");
    ctx.expect(m1.top1 == m2.top1 && m1.top5 == m2.top5 && m1.f1_mean == m2.f1_mean &&
                   m1.body_top1 == m2.body_top1,
               "checkpoint round-trip metrics are not bit-identical");
    // the two same-seed runs also produce byte-identical checkpoints
    std::ifstream c1(r1.last_ckpt, std::ios::binary), c2(r2.last_ckpt, std::ios::binary);
    std::stringstream s1, s2;
    s1 << c1.rdbuf();
    s2 << c2.rdbuf();
    ctx.expect(s1.str() == s2.str(), "same-seed checkpoints differ byte-wise");
}

// ---------------------------------------------------------------------------
// Criterion 11: schedule endpoints

void criterion_11(CheckContext& ctx) {
    ctx.expect(lr_at(0, 120, 0.01, 10, 0.001) == 0.001,
               strcat_msg("lr_at(0) = ", lr_at(0, 120, 0.01, 10, 0.001)));
    ctx.expect(lr_at(10, 120, 0.01, 10, 0.001) == 0.01,
               strcat_msg("lr_at(warmup_end) = ", lr_at(10, 120, 0.01, 10, 0.001)));
    ctx.expect(lr_at(120, 120, 0.01, 10, 0.001) == 0.0,
               strcat_msg("lr_at(total) = ", lr_at(120, 120, 0.01, 10, 0.001)));
}

struct Criterion {
    int id;
    const char* name;
    std::function<void(CheckContext&)> fn;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "gradient integrity (per-op + full objective, 64-bit replay)", criterion_1},
        {2, "geometry oracles (entity boxes, roi align)", criterion_2},
        {3, "closed-form losses (MAC, cross-entropy)", criterion_3},
        {4, "routing contract (softmax weights, parameter count)", criterion_4},
        {5, "overfit sanity (64-sample memorization)", criterion_5},
        {6, "directional hypothesis (ST/TS specialization)", criterion_6},
        {7, "ablation ordering (component lattice)", criterion_7},
        {8, "metrics oracles (F1 identities)", criterion_8},
        {9, "hurdle statistics (IRLS, BH, contrasts)", criterion_9},
        {10, "determinism and persistence", criterion_10},
        {11, "schedule endpoints", criterion_11},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        CheckContext ctx;
        try {
            c.fn(ctx);
        } catch (const std::exception& e) {
            ctx.failures.push_back(strcat_msg("exception: ", e.what()));
        }
        if (ctx.failures.empty()) {
            std::printf("[PASS] criterion %d: %s\n", c.id, c.name);
        } else {
            ++failures;
            std::printf("[FAIL] criterion %d: %s\n", c.id, c.name);
            for (const auto& f : ctx.failures) std::printf("       - %s\n", f.c_str());
        }
        std::fflush(stdout);
    }
    return failures;
}
