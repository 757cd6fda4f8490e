#pragma once

// Entity-level adaptive routing: per-entity gating networks producing a
// temperature-scaled softmax over (ST, TS) and a convex blend of the two path
// outputs.

#include "mdn/nn.hpp"

namespace mdn {

// One router per entity: Linear(2D -> D/2) - LayerNorm - ReLU - Dropout -
// Linear(D/2 -> 2), plus a learnable prior initialized to zero.
template <typename S>
struct EntityRouter {
    Linear<S> l1;
    LayerNormModule<S> ln;
    Linear<S> l2;
    Tensor<S> prior;  // (2,)

    EntityRouter() = default;
    EntityRouter(int64_t dim, Rng& rng, ParamRegistry<S>& reg, const std::string& prefix)
        : l1(2 * dim, dim / 2, rng, reg, prefix + ".l1"),
          ln(dim / 2, reg, prefix + ".ln"),
          l2(dim / 2, 2, rng, reg, prefix + ".l2") {
        prior = reg.add(prefix + ".prior", Tensor<S>::zeros({2}), false);
    }

    // x_cat (..., 2D) -> scores (..., 2)
    Tensor<S> scores(const Tensor<S>& x_cat, double dropout_p, Rng& rng, bool training) const {
        auto h = dropout(relu(ln.forward(l1.forward(x_cat))), dropout_p, rng, training);
        return add(l2.forward(h), prior);
    }
};

// Exact learnable-parameter count of all K routers at width D.
inline int64_t routing_param_count(int64_t d, int64_t k) {
    const int64_t half = d / 2;
    return k * (2 * d * half + half  // l1
                + 2 * half           // layer norm affine
                + half * 2 + 2       // l2
                + 2);                // prior
}

template <typename S>
struct RoutingResult {
    Tensor<S> fused;  // (B,T,K,D)
    Tensor<S> alpha;  // (B,T,K,2)
};

template <typename S>
class Routing {
public:
    Routing() = default;
    Routing(int64_t dim, int64_t num_entities, double tau_r, double dropout, Rng& rng,
            ParamRegistry<S>& reg, const std::string& prefix)
        : tau_r_(tau_r), dropout_p_(dropout) {
        check<ConfigError>(tau_r > 0.0, "routing temperature must be > 0, got ", tau_r);
        for (int64_t i = 0; i < num_entities; ++i)
            routers_.emplace_back(dim, rng, reg, prefix + ".entity" + std::to_string(i));
    }

    // x_st, x_ts (B,T,K,D); masked slots bypass routing (zero output, no
    // gradient through either path).
    RoutingResult<S> forward(const Tensor<S>& x_st, const Tensor<S>& x_ts,
                             const std::vector<uint8_t>& mask, Rng& rng, bool training) const {
        const int64_t k = x_st.dim(2);
        check<ShapeError>(static_cast<int64_t>(routers_.size()) == k, "routing: ",
                          routers_.size(), " routers for K=", k);
        std::vector<Tensor<S>> per_entity_scores;
        for (int64_t i = 0; i < k; ++i) {
            auto cat = concat<S>({slice(x_st, 2, i, 1), slice(x_ts, 2, i, 1)}, 3);  // (B,T,1,2D)
            per_entity_scores.push_back(
                routers_[i].scores(cat, dropout_p_, rng, training));  // (B,T,1,2)
        }
        auto scores = concat(per_entity_scores, 2);  // (B,T,K,2)
        RoutingResult<S> out;
        out.alpha = softmax_last(scalar_mul(scores, S(1) / static_cast<S>(tau_r_)));
        auto a_st = slice(out.alpha, 3, 0, 1);  // (B,T,K,1)
        auto a_ts = slice(out.alpha, 3, 1, 1);
        auto fused = add(rowwise_scale(x_st, a_st), rowwise_scale(x_ts, a_ts));
        out.fused = mask_rows(fused, mask);
        return out;
    }

    const std::vector<EntityRouter<S>>& routers() const { return routers_; }
    double temperature() const { return tau_r_; }

private:
    std::vector<EntityRouter<S>> routers_;
    double tau_r_ = 0.7;
    double dropout_p_ = 0.1;
};

// Scalar-level pieces used directly by the tests and the statistics logger.

// softmax(r / tau_r) for a two-way score.
inline std::array<double, 2> route_weights(const std::array<double, 2>& r, double tau_r) {
    check<ConfigError>(tau_r > 0.0, "route_weights: tau_r must be > 0, got ", tau_r);
    const double a = r[0] / tau_r, b = r[1] / tau_r;
    const double m = std::max(a, b);
    const double ea = std::exp(a - m), eb = std::exp(b - m);
    return {ea / (ea + eb), eb / (ea + eb)};
}

// alpha_st * x_st + alpha_ts * x_ts.
inline std::vector<double> fuse(const std::vector<double>& x_st, const std::vector<double>& x_ts,
                                const std::array<double, 2>& alpha) {
    check<ShapeError>(x_st.size() == x_ts.size(), "fuse: length mismatch");
    std::vector<double> out(x_st.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = alpha[0] * x_st[i] + alpha[1] * x_ts[i];
    return out;
}

}  // namespace mdn
