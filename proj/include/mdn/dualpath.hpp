#pragma once

// Spatial entity transformer, temporal transformer, and the two processing
// orders (ST: spatial first, TS: temporal first) with residual MLP branches.

#include "mdn/nn.hpp"
#include "mdn/pose.hpp"

namespace mdn {

struct TransformerConfig {
    int64_t layers = 2;
    int64_t heads = 4;
    int64_t model_dim = 64;
    int64_t ffn_dim = 128;
    double dropout = 0.1;
};

// Learnable spatial position encoding: a per-entity embedding plus a
// per-hierarchy-level embedding (head/face -> torso -> limbs).
template <typename S>
struct SpatialPe {
    Tensor<S> entity_table;  // (K, D)
    Tensor<S> level_table;   // (3, D)
    std::vector<int64_t> entity_ids, level_ids;

    SpatialPe() = default;
    SpatialPe(const std::vector<EntityDef>& defs, int64_t dim, Rng& rng, ParamRegistry<S>& reg,
              const std::string& prefix) {
        const int64_t k = static_cast<int64_t>(defs.size());
        entity_table =
            reg.add(prefix + ".entity", Tensor<S>::randn({k, dim}, rng, S(0.02)), false);
        level_table = reg.add(prefix + ".level", Tensor<S>::randn({3, dim}, rng, S(0.02)), false);
        for (const auto& d : defs) {
            entity_ids.push_back(d.id);
            level_ids.push_back(d.hierarchy_level);
        }
    }

    // Offset only: callers add it (X' = SPE(X) + X).
    Tensor<S> offset() const {
        return add(embedding_lookup(entity_table, entity_ids),
                   embedding_lookup(level_table, level_ids));
    }
};

// Fixed sinusoidal temporal encoding, (sin, cos)(t / 10000^(2m/D)) per channel
// pair.
template <typename S>
inline Tensor<S> sinusoidal_pe(int64_t t_len, int64_t dim) {
    auto pe = Tensor<S>::zeros({t_len, dim});
    for (int64_t t = 0; t < t_len; ++t)
        for (int64_t j = 0; j < dim; ++j) {
            const int64_t m = j / 2;
            const double rate =
                std::pow(10000.0, -2.0 * static_cast<double>(m) / static_cast<double>(dim));
            const double angle = static_cast<double>(t) * rate;
            pe.data()[t * dim + j] = static_cast<S>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

template <typename S>
struct TransformerStack {
    std::vector<EncoderLayer<S>> layers;

    TransformerStack() = default;
    TransformerStack(const TransformerConfig& cfg, Rng& rng, ParamRegistry<S>& reg,
                     const std::string& prefix) {
        for (int64_t i = 0; i < cfg.layers; ++i)
            layers.emplace_back(cfg.model_dim, cfg.heads, cfg.ffn_dim, cfg.dropout, rng, reg,
                                prefix + ".layer" + std::to_string(i));
    }

    Tensor<S> forward(Tensor<S> x, const std::vector<uint8_t>* mask, Rng& rng,
                      bool training) const {
        for (const auto& layer : layers) x = layer.forward(x, mask, rng, training);
        return x;
    }
};

// Fold helpers between (B,T,K,D) and the batched token layouts. The entity
// validity mask (one flag per B*T*K slot, row-major) rides along.

struct DualPathConfig {
    TransformerConfig transformer;
    bool shared_transformers = false;
};

template <typename S>
class DualPath {
public:
    DualPath() = default;
    DualPath(const DualPathConfig& cfg, const std::vector<EntityDef>& defs, Rng& rng,
             ParamRegistry<S>& reg, const std::string& prefix)
        : cfg_(cfg),
          spe_st_(defs, cfg.transformer.model_dim, rng, reg, prefix + ".st.spe"),
          spatial_st_(cfg.transformer, rng, reg, prefix + ".st.spatial"),
          temporal_st_(cfg.transformer, rng, reg, prefix + ".st.temporal"),
          mlp_s_(cfg.transformer.model_dim, rng, reg, prefix + ".st.mlp"),
          mlp_t_(cfg.transformer.model_dim, rng, reg, prefix + ".ts.mlp") {
        if (cfg.shared_transformers) {
            // reuse the ST stacks: tensors are handles, so this aliases them
            spe_ts_ = spe_st_;
            spatial_ts_ = spatial_st_;
            temporal_ts_ = temporal_st_;
        } else {
            spe_ts_ = SpatialPe<S>(defs, cfg.transformer.model_dim, rng, reg, prefix + ".ts.spe");
            spatial_ts_ = TransformerStack<S>(cfg.transformer, rng, reg, prefix + ".ts.spatial");
            temporal_ts_ = TransformerStack<S>(cfg.transformer, rng, reg, prefix + ".ts.temporal");
        }
    }

    // Spatial entity transformer: attention across entities within each
    // frame. X (B,T,K,D); mask one flag per (b,t,k) slot.
    Tensor<S> spatial_t(const Tensor<S>& x, const std::vector<uint8_t>& mask,
                        const SpatialPe<S>& spe, const TransformerStack<S>& stack, Rng& rng,
                        bool training) const {
        const int64_t b = x.dim(0), t = x.dim(1), k = x.dim(2), d = x.dim(3);
        auto folded = reshape(x, {b * t, k, d});
        folded = add(folded, spe.offset());  // X' = SPE(X) + X
        folded = stack.forward(folded, &mask, rng, training);
        return reshape(folded, {b, t, k, d});
    }

    // Temporal transformer: full bidirectional attention across frames within
    // each entity track.
    Tensor<S> temporal_t(const Tensor<S>& x, const std::vector<uint8_t>& mask, bool with_pe,
                         const TransformerStack<S>& stack, Rng& rng, bool training) const {
        const int64_t b = x.dim(0), t = x.dim(1), k = x.dim(2), d = x.dim(3);
        auto folded = reshape(transpose(x, {0, 2, 1, 3}), {b * k, t, d});
        std::vector<uint8_t> track_mask(b * k * t);
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ki = 0; ki < k; ++ki)
                for (int64_t ti = 0; ti < t; ++ti)
                    track_mask[(bi * k + ki) * t + ti] = mask[(bi * t + ti) * k + ki];
        if (with_pe) folded = add(folded, sinusoidal_pe<S>(t, d));
        folded = stack.forward(folded, &track_mask, rng, training);
        return transpose(reshape(folded, {b, k, t, d}), {0, 2, 1, 3});
    }

    // ST path: X_spatial = Spatial-T(X) + MLP_s(X); X_st = Temporal-T(X_spatial).
    Tensor<S> st_path(const Tensor<S>& x, const std::vector<uint8_t>& mask, Rng& rng,
                      bool training) const {
        auto spatial =
            add(spatial_t(x, mask, spe_st_, spatial_st_, rng, training), mlp_s_.forward(x));
        auto out = temporal_t(spatial, mask, true, temporal_st_, rng, training);
        return mask_rows(out, mask);
    }

    // TS path: X_temporal = Temporal-T(X) + MLP_t(X); X_ts = Spatial-T(X_temporal).
    Tensor<S> ts_path(const Tensor<S>& x, const std::vector<uint8_t>& mask, Rng& rng,
                      bool training) const {
        auto temporal =
            add(temporal_t(x, mask, true, temporal_ts_, rng, training), mlp_t_.forward(x));
        auto out = spatial_t(temporal, mask, spe_ts_, spatial_ts_, rng, training);
        return mask_rows(out, mask);
    }

    const SpatialPe<S>& spe_st() const { return spe_st_; }
    const TransformerStack<S>& spatial_stack_st() const { return spatial_st_; }
    const TransformerStack<S>& temporal_stack_st() const { return temporal_st_; }

private:
    DualPathConfig cfg_;
    SpatialPe<S> spe_st_, spe_ts_;
    TransformerStack<S> spatial_st_, temporal_st_;
    TransformerStack<S> spatial_ts_, temporal_ts_;
    Mlp2<S> mlp_s_, mlp_t_;
};

}  // namespace mdn
