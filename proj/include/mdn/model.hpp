#pragma once

// Full Micro-DualNet assembly: backbone -> spatial entity module -> dual
// ST/TS transformer paths -> entity-level routing -> pooled fusion with the
// global appearance vector -> classifier, plus the CE + lambda * MAC loss.

#include "mdn/backbone.hpp"
#include "mdn/dualpath.hpp"
#include "mdn/objectives.hpp"
#include "mdn/routing.hpp"

namespace mdn {

struct ModelConfig {
    int64_t d = 64;
    std::array<int64_t, 4> backbone_channels = {16, 32, 48, 64};
    double shift_frac = 1.0 / 8.0;
    int64_t roi_p = 4;
    int64_t roi_samples = 2;
    int64_t layers = 2;
    int64_t heads = 4;
    int64_t ffn_dim = 128;
    double dropout = 0.1;
    double tau_r = 0.7;
    double tau_mac = 0.07;
    double lambda_mac = 0.1;
    int64_t classifier_h1 = 512;
    int64_t classifier_h2 = 256;
    int64_t num_classes = 8;
    // component toggles for the ablation lattice
    bool use_sem = true;
    bool use_st = true;
    bool use_ts = true;
    bool use_routing = true;
    bool use_mac = true;
    bool shared_transformers = false;
    bool frame_level_mac = false;

    void validate() const {
        check<ConfigError>(d % 2 == 0, "model.d must be even, got ", d);
        check<ConfigError>(d % heads == 0, "model.d ", d, " not divisible by heads ", heads);
        check<ConfigError>(!use_routing || (use_st && use_ts),
                           "routing requires both ST and TS paths");
        check<ConfigError>(!use_mac || (use_st && use_ts), "MAC requires both ST and TS paths");
        check<ConfigError>(use_sem || (!use_st && !use_ts),
                           "entity paths require the spatial entity module");
        check<ConfigError>(tau_r > 0 && tau_mac > 0, "temperatures must be positive");
    }
};

template <typename S>
struct Batch {
    Tensor<S> frames;  // (B, T, 3, H, W), values in [0,1]
    std::vector<std::vector<std::vector<EntityBox>>> boxes;  // [B][T][K]
    std::vector<int64_t> labels;       // action-level
    std::vector<int64_t> body_labels;  // body-level (diagnostics only)
};

template <typename S>
struct ModelOutput {
    Tensor<S> logits;
    Tensor<S> f_cnn;
    Tensor<S> f_entity;   // defined when the entity stream is on
    Tensor<S> x_st, x_ts; // raw path outputs (pre-routing)
    Tensor<S> fused;
    Tensor<S> alpha;      // (B,T,K,2) when routing is on
    std::vector<uint8_t> mask;
    std::vector<double> conf;
};

template <typename S>
class MicroDualNet {
public:
    MicroDualNet(const ModelConfig& cfg, std::vector<EntityDef> defs, uint64_t seed)
        : cfg_(cfg), defs_(std::move(defs)), dropout_rng_(derive_seed(seed, 1)) {
        cfg_.validate();
        Rng init_rng(derive_seed(seed, 0));
        BackboneConfig bb;
        bb.channels = cfg_.backbone_channels;
        bb.shift_frac = cfg_.shift_frac;
        backbone_ = Backbone<S>(bb, init_rng, registry_, "backbone");
        const int64_t k = static_cast<int64_t>(defs_.size());
        if (cfg_.use_sem) {
            SemConfig sc{cfg_.d, cfg_.roi_p, cfg_.roi_samples};
            sem_ = Sem<S>(sc, backbone_.out_channels(), k, init_rng, registry_, "sem");
            if (cfg_.use_st || cfg_.use_ts) {
                DualPathConfig dp;
                dp.transformer = {cfg_.layers, cfg_.heads, cfg_.d, cfg_.ffn_dim, cfg_.dropout};
                dp.shared_transformers = cfg_.shared_transformers;
                paths_ = DualPath<S>(dp, defs_, init_rng, registry_, "paths");
            }
            if (cfg_.use_routing)
                routing_ = Routing<S>(cfg_.d, k, cfg_.tau_r, cfg_.dropout, init_rng, registry_,
                                      "routing");
        }
        const int64_t in_dim = backbone_.out_channels() + (cfg_.use_sem ? cfg_.d : 0);
        classifier_ = Classifier<S>(in_dim, cfg_.classifier_h1, cfg_.classifier_h2,
                                    cfg_.num_classes, init_rng, registry_, "classifier");
    }

    ModelOutput<S> forward(const Batch<S>& batch, bool training) {
        ModelOutput<S> out;
        auto bb = backbone_.forward(batch.frames);
        out.f_cnn = bb.f_cnn;
        if (!cfg_.use_sem) {
            out.logits = classifier_.forward(bb.f_cnn, dropout_rng_, training);
            return out;
        }
        auto entity = sem_.assemble(bb.fmaps, batch.boxes,
                                    static_cast<int64_t>(backbone_.total_stride()));
        out.mask = entity.mask;
        out.conf = entity.conf;

        Tensor<S> fused;
        if (cfg_.use_st) out.x_st = paths_.st_path(entity.x, entity.mask, dropout_rng_, training);
        if (cfg_.use_ts) out.x_ts = paths_.ts_path(entity.x, entity.mask, dropout_rng_, training);
        if (cfg_.use_st && cfg_.use_ts) {
            if (cfg_.use_routing) {
                auto routed =
                    routing_.forward(out.x_st, out.x_ts, entity.mask, dropout_rng_, training);
                fused = routed.fused;
                out.alpha = routed.alpha;
            } else {
                fused = scalar_mul(add(out.x_st, out.x_ts), S(0.5));
            }
        } else if (cfg_.use_st) {
            fused = out.x_st;
        } else if (cfg_.use_ts) {
            fused = out.x_ts;
        } else {
            fused = entity.x;  // SEM-only configuration
        }
        out.fused = fused;
        out.f_entity = entity_pool(fused, entity.mask);
        auto f_final = fuse_features(bb.f_cnn, out.f_entity);
        out.logits = classifier_.forward(f_final, dropout_rng_, training);
        return out;
    }

    TotalLoss<S> loss(const ModelOutput<S>& out, const std::vector<int64_t>& labels) const {
        Tensor<S> mac = Tensor<S>::scalar(S(0));
        std::vector<double> per_entity;
        if (cfg_.use_mac && out.x_st.defined() && out.x_ts.defined()) {
            auto z_st = project_normalize(out.x_st);
            auto z_ts = project_normalize(out.x_ts);
            auto res = mac_total(z_st, z_ts, out.conf, out.mask, cfg_.tau_mac,
                                 cfg_.frame_level_mac);
            mac = res.loss;
            per_entity = res.per_entity;
        }
        return total_loss(out.logits, labels, mac, cfg_.lambda_mac, std::move(per_entity));
    }

    ParamRegistry<S>& registry() { return registry_; }
    const ParamRegistry<S>& registry() const { return registry_; }
    const ModelConfig& config() const { return cfg_; }
    const std::vector<EntityDef>& entity_defs() const { return defs_; }
    Rng& dropout_rng() { return dropout_rng_; }

private:
    ModelConfig cfg_;
    std::vector<EntityDef> defs_;
    ParamRegistry<S> registry_;
    Backbone<S> backbone_;
    Sem<S> sem_;
    DualPath<S> paths_;
    Routing<S> routing_;
    Classifier<S> classifier_;
    Rng dropout_rng_;
};

}  // namespace mdn
