#pragma once

// Per-frame convolutional backbone with temporal shift, plus the spatial
// entity module: ROI align over keypoint-guided boxes followed by per-entity
// depthwise-separable refinement and identity embeddings.

#include "mdn/nn.hpp"
#include "mdn/pose.hpp"
#include "mdn/vision_ops.hpp"

namespace mdn {

struct BackboneConfig {
    std::array<int64_t, 4> channels = {16, 32, 48, 64};
    double shift_frac = 1.0 / 8.0;
    // strides (2,2,2,1): total stride 8, so H' = H/8
    std::array<int64_t, 4> strides = {2, 2, 2, 1};
};

template <typename S>
struct BackboneOutput {
    Tensor<S> fmaps;  // (B, T, C', H', W')
    Tensor<S> f_cnn;  // (B, C')
};

template <typename S>
class Backbone {
public:
    Backbone() = default;
    Backbone(const BackboneConfig& cfg, Rng& rng, ParamRegistry<S>& reg,
             const std::string& prefix)
        : cfg_(cfg) {
        int64_t in_ch = 3;
        for (int i = 0; i < 4; ++i) {
            const int64_t out_ch = cfg.channels[i];
            const double he = std::sqrt(2.0 / static_cast<double>(in_ch * 9));
            w_[i] = reg.add(prefix + ".conv" + std::to_string(i) + ".w",
                            Tensor<S>::randn({out_ch, in_ch, 3, 3}, rng, static_cast<S>(he)),
                            true);
            b_[i] = reg.add(prefix + ".conv" + std::to_string(i) + ".b",
                            Tensor<S>::zeros({out_ch}), false);
            in_ch = out_ch;
        }
    }

    int64_t out_channels() const { return cfg_.channels[3]; }
    int64_t total_stride() const {
        return cfg_.strides[0] * cfg_.strides[1] * cfg_.strides[2] * cfg_.strides[3];
    }

    // frames (B, T, 3, H, W) in [0,1].
    BackboneOutput<S> forward(const Tensor<S>& frames) const {
        check<ShapeError>(frames.rank() == 5, "backbone: expected (B,T,3,H,W), got ",
                          shape_str(frames.shape()));
        const int64_t b = frames.dim(0), t = frames.dim(1);
        const int64_t stride = total_stride();
        check<ShapeError>(frames.dim(3) % stride == 0 && frames.dim(4) % stride == 0,
                          "backbone: H/W must be divisible by total stride ", stride, ", got ",
                          shape_str(frames.shape()));
        Tensor<S> x = frames;
        for (int i = 0; i < 4; ++i) {
            if (i > 0) x = temporal_shift(x, cfg_.shift_frac);
            const int64_t c = x.dim(2), h = x.dim(3), w = x.dim(4);
            auto flat = reshape(x, {b * t, c, h, w});
            auto conv = gelu(conv2d(flat, w_[i], b_[i], cfg_.strides[i], 1));
            x = reshape(conv, {b, t, conv.dim(1), conv.dim(2), conv.dim(3)});
        }
        BackboneOutput<S> out;
        out.fmaps = x;
        out.f_cnn = mean_axes(x, {1, 3, 4});
        return out;
    }

private:
    BackboneConfig cfg_;
    std::array<Tensor<S>, 4> w_;
    std::array<Tensor<S>, 4> b_;
};

// Per-entity refinement: depthwise 3x3 + pointwise 1x1 to D channels + GELU,
// global average pool, plus the learnable identity embedding p_i. Weights are
// per entity, not shared.
template <typename S>
struct EntityRefine {
    Tensor<S> dw_w, dw_b;  // depthwise (C', 1, 3, 3)
    Tensor<S> pw_w, pw_b;  // pointwise (D, C', 1, 1)
    Tensor<S> p;           // (D,)
    int64_t channels = 0;

    EntityRefine() = default;
    EntityRefine(int64_t c_in, int64_t d, Rng& rng, ParamRegistry<S>& reg,
                 const std::string& prefix)
        : channels(c_in) {
        const double he_dw = std::sqrt(2.0 / 9.0);
        const double he_pw = std::sqrt(2.0 / static_cast<double>(c_in));
        dw_w = reg.add(prefix + ".dw.w", Tensor<S>::randn({c_in, 1, 3, 3}, rng, static_cast<S>(he_dw)),
                       true);
        dw_b = reg.add(prefix + ".dw.b", Tensor<S>::zeros({c_in}), false);
        pw_w = reg.add(prefix + ".pw.w",
                       Tensor<S>::randn({d, c_in, 1, 1}, rng, static_cast<S>(he_pw)), true);
        pw_b = reg.add(prefix + ".pw.b", Tensor<S>::zeros({d}), false);
        p = reg.add(prefix + ".p", Tensor<S>::randn({d}, rng, S(0.02)), false);
    }

    // patch (N, C', P, P) -> (N, D)
    Tensor<S> forward(const Tensor<S>& patch) const {
        auto dw = conv2d(patch, dw_w, dw_b, 1, 1, channels);
        auto pw = gelu(conv2d(dw, pw_w, pw_b, 1, 0));
        return add(mean_axes(pw, {2, 3}), p);
    }
};

template <typename S>
struct EntityTensor {
    Tensor<S> x;                 // (B, T, K, D)
    std::vector<uint8_t> mask;   // B*T*K validity flags
    std::vector<double> conf;    // B*T*K keypoint confidences
};

struct SemConfig {
    int64_t d = 64;
    int64_t roi_p = 4;
    int64_t roi_samples = 2;
};

template <typename S>
class Sem {
public:
    Sem() = default;
    Sem(const SemConfig& cfg, int64_t c_in, int64_t num_entities, Rng& rng, ParamRegistry<S>& reg,
        const std::string& prefix)
        : cfg_(cfg) {
        for (int64_t i = 0; i < num_entities; ++i)
            refiners_.emplace_back(c_in, cfg.d, rng, reg,
                                   prefix + ".entity" + std::to_string(i));
    }

    // fmaps (B,T,C',H',W'); boxes[b][t][k] in image pixel coordinates.
    EntityTensor<S> assemble(const Tensor<S>& fmaps,
                             const std::vector<std::vector<std::vector<EntityBox>>>& boxes,
                             int64_t image_stride) const {
        const int64_t b = fmaps.dim(0), t = fmaps.dim(1), c = fmaps.dim(2);
        const int64_t k = static_cast<int64_t>(refiners_.size());
        check<ShapeError>(static_cast<int64_t>(boxes.size()) == b, "sem: box batch ",
                          boxes.size(), " vs ", b);
        auto flat = reshape(fmaps, {b * t, c, fmaps.dim(3), fmaps.dim(4)});

        EntityTensor<S> out;
        out.mask.assign(b * t * k, 0);
        out.conf.assign(b * t * k, 0.0);
        std::vector<Tensor<S>> per_entity;
        for (int64_t i = 0; i < k; ++i) {
            std::vector<AlignBox> aboxes(b * t);
            for (int64_t bi = 0; bi < b; ++bi) {
                check<ShapeError>(static_cast<int64_t>(boxes[bi].size()) == t, "sem: box frames ",
                                  boxes[bi].size(), " vs ", t);
                for (int64_t ti = 0; ti < t; ++ti) {
                    const EntityBox& eb = boxes[bi][ti][i];
                    aboxes[bi * t + ti] = {eb.x_min, eb.y_min, eb.x_max, eb.y_max, eb.usable()};
                    out.mask[(bi * t + ti) * k + i] = eb.usable() ? 1 : 0;
                    out.conf[(bi * t + ti) * k + i] = eb.usable() ? eb.confidence : 0.0;
                }
            }
            auto patches = roi_align(flat, aboxes, cfg_.roi_p, cfg_.roi_samples,
                                     1.0 / static_cast<double>(image_stride));
            auto feats = refiners_[i].forward(patches);          // (B*T, D)
            per_entity.push_back(reshape(feats, {b * t, 1, cfg_.d}));
        }
        auto stacked = concat(per_entity, 1);                    // (B*T, K, D)
        out.x = mask_rows(reshape(stacked, {b, t, k, cfg_.d}), out.mask);
        return out;
    }

    const std::vector<EntityRefine<S>>& refiners() const { return refiners_; }
    int64_t feature_dim() const { return cfg_.d; }

private:
    SemConfig cfg_;
    std::vector<EntityRefine<S>> refiners_;
};

}  // namespace mdn
