#pragma once

// Small trainable building blocks shared across the model.

#include <cmath>

#include "mdn/ops.hpp"
#include "mdn/registry.hpp"
#include "mdn/tensor.hpp"

namespace mdn {

template <typename S>
struct Linear {
    Tensor<S> w;  // (in, out)
    Tensor<S> b;

    Linear() = default;
    Linear(int64_t in, int64_t out, Rng& rng, ParamRegistry<S>& reg, const std::string& prefix) {
        const S bound = S(1) / std::sqrt(static_cast<S>(in));
        w = reg.add(prefix + ".w", Tensor<S>::uniform({in, out}, rng, -bound, bound), true);
        b = reg.add(prefix + ".b", Tensor<S>::zeros({out}), false);
    }

    Tensor<S> forward(const Tensor<S>& x) const { return add(matmul(x, w), b); }
};

template <typename S>
struct LayerNormModule {
    Tensor<S> gamma, beta;
    S eps = S(1e-5);

    LayerNormModule() = default;
    LayerNormModule(int64_t dim, ParamRegistry<S>& reg, const std::string& prefix) {
        gamma = reg.add(prefix + ".gamma", Tensor<S>::filled({dim}, S(1)), false);
        beta = reg.add(prefix + ".beta", Tensor<S>::zeros({dim}), false);
    }

    Tensor<S> forward(const Tensor<S>& x) const { return layer_norm(x, gamma, beta, eps); }
};

// Multiplies each (..., D) row by 0/1 validity so masked slots are exactly
// zero. `mask` is one flag per row.
template <typename S>
Tensor<S> mask_rows(const Tensor<S>& x, const std::vector<uint8_t>& mask) {
    const int64_t d = x.shape().back();
    const int64_t rows = x.numel() / d;
    check<ShapeError>(static_cast<int64_t>(mask.size()) == rows, "mask_rows: ", mask.size(),
                      " flags for ", rows, " rows");
    Shape mshape = x.shape();
    mshape.back() = 1;
    auto m = Tensor<S>::zeros(mshape);
    for (int64_t r = 0; r < rows; ++r) m.data()[r] = mask[r] ? S(1) : S(0);
    return rowwise_scale(x, m);
}

template <typename S>
struct Mhsa {
    Linear<S> wq, wk, wv, wo;
    int64_t heads = 1;

    Mhsa() = default;
    Mhsa(int64_t dim, int64_t heads_, Rng& rng, ParamRegistry<S>& reg, const std::string& prefix)
        : wq(dim, dim, rng, reg, prefix + ".wq"),
          wk(dim, dim, rng, reg, prefix + ".wk"),
          wv(dim, dim, rng, reg, prefix + ".wv"),
          wo(dim, dim, rng, reg, prefix + ".wo"),
          heads(heads_) {
        check<ConfigError>(dim % heads_ == 0, "mhsa: dim ", dim, " not divisible by heads ",
                           heads_);
    }

    // tokens (N, L, D); mask has one flag per (n, l) position. Masked
    // positions are excluded as keys and their query rows output exact zeros.
    Tensor<S> forward(const Tensor<S>& x, const std::vector<uint8_t>* mask = nullptr) const {
        const int64_t n = x.dim(0), l = x.dim(1), d = x.dim(2);
        const int64_t dh = d / heads;
        auto split = [&](const Tensor<S>& t) {
            return reshape(transpose(reshape(t, {n, l, heads, dh}), {0, 2, 1, 3}),
                           {n * heads, l, dh});
        };
        auto q = split(wq.forward(x));
        auto k = split(wk.forward(x));
        auto v = split(wv.forward(x));
        auto logits = scalar_mul(matmul(q, transpose(k, {0, 2, 1})),
                                 S(1) / std::sqrt(static_cast<S>(dh)));
        Tensor<S> attn;
        if (mask) {
            std::vector<uint8_t> key_mask(n * heads * l * l);
            for (int64_t ni = 0; ni < n; ++ni)
                for (int64_t h = 0; h < heads; ++h)
                    for (int64_t qi = 0; qi < l; ++qi)
                        for (int64_t ki = 0; ki < l; ++ki)
                            key_mask[(((ni * heads + h) * l) + qi) * l + ki] =
                                (*mask)[ni * l + ki];
            attn = softmax_last(logits, &key_mask);
        } else {
            attn = softmax_last(logits);
        }
        auto ctx = matmul(attn, v);
        ctx = reshape(transpose(reshape(ctx, {n, heads, l, dh}), {0, 2, 1, 3}), {n, l, d});
        auto out = wo.forward(ctx);
        if (mask) out = mask_rows(out, *mask);
        return out;
    }
};

// Post-norm encoder layer: X'' = LN(X + MHSA(X)); out = LN(X'' + FFN(X'')).
// FFN is Linear -> GELU -> Dropout -> Linear.
template <typename S>
struct EncoderLayer {
    Mhsa<S> attn;
    LayerNormModule<S> ln1, ln2;
    Linear<S> ffn1, ffn2;
    double dropout_p = 0.1;

    EncoderLayer() = default;
    EncoderLayer(int64_t dim, int64_t heads, int64_t ffn_dim, double dropout, Rng& rng,
                 ParamRegistry<S>& reg, const std::string& prefix)
        : attn(dim, heads, rng, reg, prefix + ".attn"),
          ln1(dim, reg, prefix + ".ln1"),
          ln2(dim, reg, prefix + ".ln2"),
          ffn1(dim, ffn_dim, rng, reg, prefix + ".ffn1"),
          ffn2(ffn_dim, dim, rng, reg, prefix + ".ffn2"),
          dropout_p(dropout) {}

    Tensor<S> forward(const Tensor<S>& x, const std::vector<uint8_t>* mask, Rng& rng,
                      bool training) const {
        auto x1 = ln1.forward(add(x, attn.forward(x, mask)));
        auto h = ffn2.forward(dropout(gelu(ffn1.forward(x1)), dropout_p, rng, training));
        auto out = ln2.forward(add(x1, h));
        if (mask) out = mask_rows(out, *mask);
        return out;
    }
};

// Two-layer D -> D map with GELU; the residual branch beside each transformer.
template <typename S>
struct Mlp2 {
    Linear<S> l1, l2;

    Mlp2() = default;
    Mlp2(int64_t dim, Rng& rng, ParamRegistry<S>& reg, const std::string& prefix)
        : l1(dim, dim, rng, reg, prefix + ".l1"), l2(dim, dim, rng, reg, prefix + ".l2") {}

    Tensor<S> forward(const Tensor<S>& x) const { return l2.forward(gelu(l1.forward(x))); }
};

}  // namespace mdn
