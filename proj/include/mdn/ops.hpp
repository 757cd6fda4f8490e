#pragma once

// Differentiable ops beyond basic arithmetic: activations, normalizations,
// softmax family, dropout and lookup/selection ops.

#include <cmath>
#include <cstring>
#include <type_traits>

#include "mdn/tensor.hpp"

namespace mdn {

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    auto out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > S(0) ? a.data()[i] : S(0);
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, oi, n]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            for (int64_t i = 0; i < n; ++i)
                if (ai->value[i] > S(0)) ai->grad[i] += oi->grad[i];
        });
    }
    return out;
}

namespace detail {

// Polynomial expf (Cephes-style), accurate to a few ulp and auto-vectorizable;
// the scalar libm calls dominate large activation maps otherwise.
inline float fast_expf(float x) {
    x = std::min(std::max(x, -87.0f), 87.0f);
    const float z = x * 1.44269504088896341f;
    const float n = std::floor(z + 0.5f);
    float r = x - n * 0.693359375f;
    r -= n * -2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    int32_t bits = (static_cast<int32_t>(n) + 127) << 23;
    float scale;
    std::memcpy(&scale, &bits, 4);
    return p * scale;
}

inline float fast_sigmoid(float x) { return 1.0f / (1.0f + fast_expf(-x)); }

}  // namespace detail

// GELU. The float instantiation uses the sigmoid form x * sigmoid(1.702 x)
// (vectorizable); the double instantiation, which the gradient checks replay,
// evaluates the exact erf form. Each backward differentiates its own forward.
template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    constexpr float kSig = 1.702f;
    auto out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.numel();
    if constexpr (std::is_same_v<S, float>) {
        const float* __restrict px = a.data().data();
        float* __restrict py = out.data().data();
        for (int64_t i = 0; i < n; ++i) py[i] = px[i] * detail::fast_sigmoid(kSig * px[i]);
    } else {
        for (int64_t i = 0; i < n; ++i) {
            const double x = static_cast<double>(a.data()[i]);
            out.data()[i] = static_cast<S>(x * 0.5 * (1.0 + std::erf(x * kInvSqrt2)));
        }
    }
    detail::check_finite("gelu", out);
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, oi, n]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            if constexpr (std::is_same_v<S, float>) {
                const float* __restrict px = ai->value.data();
                const float* __restrict pg = oi->grad.data();
                float* __restrict gx = ai->grad.data();
                for (int64_t i = 0; i < n; ++i) {
                    const float s = detail::fast_sigmoid(kSig * px[i]);
                    gx[i] += pg[i] * (s + kSig * px[i] * s * (1.0f - s));
                }
            } else {
                for (int64_t i = 0; i < n; ++i) {
                    const double x = static_cast<double>(ai->value[i]);
                    const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                    ai->grad[i] += oi->grad[i] * static_cast<S>(phi + x * pdf);
                }
            }
        });
    }
    return out;
}

// Softmax over the last axis. An optional 0/1 mask of the same shape excludes
// entries; fully masked rows produce all-zero output.
template <typename S>
Tensor<S> softmax_last(const Tensor<S>& a, const std::vector<uint8_t>* mask = nullptr) {
    const int64_t d = a.shape().empty() ? 1 : a.shape().back();
    const int64_t rows = a.numel() / std::max<int64_t>(d, 1);
    if (mask)
        check<ShapeError>(static_cast<int64_t>(mask->size()) == a.numel(),
                          "softmax_last: mask length ", mask->size(), " vs numel ", a.numel());
    auto out = Tensor<S>::zeros(a.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const S* x = a.data().data() + r * d;
        S* y = out.data().data() + r * d;
        const uint8_t* m = mask ? mask->data() + r * d : nullptr;
        S mx = S(0);
        bool any = false;
        for (int64_t j = 0; j < d; ++j) {
            if (m && !m[j]) continue;
            mx = any ? std::max(mx, x[j]) : x[j];
            any = true;
        }
        if (!any) continue;  // fully masked row stays zero
        S denom = S(0);
        for (int64_t j = 0; j < d; ++j) {
            if (m && !m[j]) continue;
            y[j] = std::exp(x[j] - mx);
            denom += y[j];
        }
        for (int64_t j = 0; j < d; ++j)
            if (!m || m[j]) y[j] /= denom;
    }
    detail::check_finite("softmax", out);
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, oi, rows, d]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            for (int64_t r = 0; r < rows; ++r) {
                const S* y = oi->value.data() + r * d;
                const S* gy = oi->grad.data() + r * d;
                S dot = S(0);
                for (int64_t j = 0; j < d; ++j) dot += y[j] * gy[j];
                S* gx = ai->grad.data() + r * d;
                for (int64_t j = 0; j < d; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
        });
    }
    return out;
}

// log(sum(exp(x))) over the last axis, max-shifted for stability. Output drops
// the last axis. An optional 0/1 mask excludes entries; fully masked rows
// yield 0 and propagate no gradient.
template <typename S>
Tensor<S> logsumexp_last(const Tensor<S>& a, const std::vector<uint8_t>* mask = nullptr) {
    check<ShapeError>(a.rank() >= 1, "logsumexp_last: rank 0 input");
    const int64_t d = a.shape().back();
    const int64_t rows = a.numel() / d;
    if (mask)
        check<ShapeError>(static_cast<int64_t>(mask->size()) == a.numel(),
                          "logsumexp_last: mask length ", mask->size(), " vs numel ", a.numel());
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    auto out = Tensor<S>::zeros(out_shape);
    std::vector<uint8_t> row_live(rows, 1);
    for (int64_t r = 0; r < rows; ++r) {
        const S* x = a.data().data() + r * d;
        const uint8_t* m = mask ? mask->data() + r * d : nullptr;
        S mx = S(0);
        bool any = false;
        for (int64_t j = 0; j < d; ++j) {
            if (m && !m[j]) continue;
            mx = any ? std::max(mx, x[j]) : x[j];
            any = true;
        }
        if (!any) {
            row_live[r] = 0;
            continue;
        }
        S acc = S(0);
        for (int64_t j = 0; j < d; ++j) {
            if (m && !m[j]) continue;
            acc += std::exp(x[j] - mx);
        }
        out.data()[r] = mx + std::log(acc);
    }
    detail::check_finite("logsumexp", out);
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        const bool has_mask = mask != nullptr;
        std::vector<uint8_t> mask_copy = mask ? *mask : std::vector<uint8_t>{};
        Tape<S>::active()->record([ai, oi, rows, d, has_mask, mask_copy, row_live]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            for (int64_t r = 0; r < rows; ++r) {
                if (!row_live[r]) continue;
                const S lse = oi->value[r];
                const S g = oi->grad[r];
                const S* x = ai->value.data() + r * d;
                S* gx = ai->grad.data() + r * d;
                for (int64_t j = 0; j < d; ++j) {
                    if (has_mask && !mask_copy[r * d + j]) continue;
                    gx[j] += g * std::exp(x[j] - lse);
                }
            }
        });
    }
    return out;
}

// Layer normalization over the last axis with affine parameters.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
    const int64_t d = x.shape().back();
    check<ShapeError>(gamma.numel() == d && beta.numel() == d, "layer_norm: affine params ",
                      shape_str(gamma.shape()), "/", shape_str(beta.shape()),
                      " do not match last extent ", d);
    const int64_t rows = x.numel() / d;
    auto out = Tensor<S>::zeros(x.shape());
    std::vector<S> mean(rows), rstd(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const S* px = x.data().data() + r * d;
        S m = S(0);
        for (int64_t j = 0; j < d; ++j) m += px[j];
        m /= static_cast<S>(d);
        S var = S(0);
        for (int64_t j = 0; j < d; ++j) var += (px[j] - m) * (px[j] - m);
        var /= static_cast<S>(d);
        const S rs = S(1) / std::sqrt(var + eps);
        mean[r] = m;
        rstd[r] = rs;
        S* py = out.data().data() + r * d;
        for (int64_t j = 0; j < d; ++j)
            py[j] = (px[j] - m) * rs * gamma.data()[j] + beta.data()[j];
    }
    detail::check_finite("layer_norm", out);
    if (detail::will_record<S>({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
        Tape<S>::active()->record([xi, gi, bi, oi, mean, rstd, rows, d]() {
            if (oi->grad.empty()) return;
            const bool need_x = xi->requires_grad;
            const bool need_g = gi->requires_grad;
            const bool need_b = bi->requires_grad;
            if (need_x) ensure_grad(*xi);
            if (need_g) ensure_grad(*gi);
            if (need_b) ensure_grad(*bi);
            for (int64_t r = 0; r < rows; ++r) {
                const S* px = xi->value.data() + r * d;
                const S* gy = oi->grad.data() + r * d;
                const S m = mean[r], rs = rstd[r];
                if (need_g || need_b) {
                    for (int64_t j = 0; j < d; ++j) {
                        const S xhat = (px[j] - m) * rs;
                        if (need_g) gi->grad[j] += gy[j] * xhat;
                        if (need_b) bi->grad[j] += gy[j];
                    }
                }
                if (need_x) {
                    // dx = rs/d * (d*g*gamma - sum(g*gamma) - xhat * sum(g*gamma*xhat))
                    S sum_gg = S(0), sum_ggx = S(0);
                    for (int64_t j = 0; j < d; ++j) {
                        const S gg = gy[j] * gi->value[j];
                        sum_gg += gg;
                        sum_ggx += gg * (px[j] - m) * rs;
                    }
                    S* gx = xi->grad.data() + r * d;
                    for (int64_t j = 0; j < d; ++j) {
                        const S gg = gy[j] * gi->value[j];
                        const S xhat = (px[j] - m) * rs;
                        gx[j] += rs * (gg - (sum_gg + xhat * sum_ggx) / static_cast<S>(d));
                    }
                }
            }
        });
    }
    return out;
}

// Each trailing-axis slice divided by max(||.||_2, eps); zero vectors stay zero.
template <typename S>
Tensor<S> l2_normalize_last(const Tensor<S>& x, S eps = S(1e-8)) {
    const int64_t d = x.shape().back();
    const int64_t rows = x.numel() / d;
    auto out = Tensor<S>::zeros(x.shape());
    std::vector<S> norms(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const S* px = x.data().data() + r * d;
        S sq = S(0);
        for (int64_t j = 0; j < d; ++j) sq += px[j] * px[j];
        const S nrm = std::max(std::sqrt(sq), eps);
        norms[r] = nrm;
        S* py = out.data().data() + r * d;
        for (int64_t j = 0; j < d; ++j) py[j] = px[j] / nrm;
    }
    detail::check_finite("l2_normalize", out);
    if (detail::will_record<S>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::active()->record([xi, oi, norms, rows, d, eps]() {
            if (oi->grad.empty() || !xi->requires_grad) return;
            ensure_grad(*xi);
            for (int64_t r = 0; r < rows; ++r) {
                const S* y = oi->value.data() + r * d;
                const S* gy = oi->grad.data() + r * d;
                S* gx = xi->grad.data() + r * d;
                const S nrm = norms[r];
                if (nrm <= eps) {
                    // below the guard the map is linear: y = x / eps
                    for (int64_t j = 0; j < d; ++j) gx[j] += gy[j] / eps;
                    continue;
                }
                S dot = S(0);
                for (int64_t j = 0; j < d; ++j) dot += y[j] * gy[j];
                for (int64_t j = 0; j < d; ++j) gx[j] += (gy[j] - y[j] * dot) / nrm;
            }
        });
    }
    return out;
}

// Inverted dropout with a per-call mask drawn from the caller's RNG.
// Identity when not training or p == 0.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng& rng, bool training) {
    check<Error>(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1), got ", p);
    if (!training || p == 0.0) return x;
    const int64_t n = x.numel();
    const S scale = static_cast<S>(1.0 / (1.0 - p));
    std::vector<uint8_t> keep(n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int64_t i = 0; i < n; ++i) keep[i] = u(rng) >= p ? 1 : 0;
    auto out = Tensor<S>::zeros(x.shape());
    for (int64_t i = 0; i < n; ++i) out.data()[i] = keep[i] ? x.data()[i] * scale : S(0);
    if (detail::will_record<S>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::active()->record([xi, oi, keep, scale, n]() {
            if (oi->grad.empty() || !xi->requires_grad) return;
            ensure_grad(*xi);
            for (int64_t i = 0; i < n; ++i)
                if (keep[i]) xi->grad[i] += oi->grad[i] * scale;
        });
    }
    return out;
}

// Rows of `table` (R, D) gathered by index: output (len(ids), D).
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int64_t>& ids) {
    check<ShapeError>(table.rank() == 2, "embedding_lookup: table must be rank 2, got ",
                      shape_str(table.shape()));
    const int64_t rows = table.dim(0), d = table.dim(1);
    auto out = Tensor<S>::zeros({static_cast<int64_t>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        check<ShapeError>(ids[i] >= 0 && ids[i] < rows, "embedding_lookup: id ", ids[i],
                          " out of range [0,", rows, ")");
        std::copy_n(table.data().data() + ids[i] * d, d, out.data().data() + i * d);
    }
    if (detail::will_record<S>({&table})) {
        out.set_requires_grad(true);
        auto ti = table.impl(), oi = out.impl();
        Tape<S>::active()->record([ti, oi, ids, d]() {
            if (oi->grad.empty() || !ti->requires_grad) return;
            ensure_grad(*ti);
            for (size_t i = 0; i < ids.size(); ++i) {
                const S* src = oi->grad.data() + i * d;
                S* dst = ti->grad.data() + ids[i] * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// out[r] = x[r, ids[r]] for x (..., C); the last axis is consumed.
template <typename S>
Tensor<S> select_index_last(const Tensor<S>& x, const std::vector<int64_t>& ids) {
    check<ShapeError>(x.rank() >= 1, "select_index_last: rank 0 input");
    const int64_t d = x.shape().back();
    const int64_t rows = x.numel() / d;
    check<ShapeError>(static_cast<int64_t>(ids.size()) == rows, "select_index_last: ",
                      ids.size(), " indices for ", rows, " rows");
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    auto out = Tensor<S>::zeros(out_shape);
    for (int64_t r = 0; r < rows; ++r) {
        check<ShapeError>(ids[r] >= 0 && ids[r] < d, "select_index_last: index ", ids[r],
                          " out of range [0,", d, ")");
        out.data()[r] = x.data()[r * d + ids[r]];
    }
    if (detail::will_record<S>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::active()->record([xi, oi, ids, rows, d]() {
            if (oi->grad.empty() || !xi->requires_grad) return;
            ensure_grad(*xi);
            for (int64_t r = 0; r < rows; ++r) xi->grad[r * d + ids[r]] += oi->grad[r];
        });
    }
    return out;
}

// Diagonal of the trailing (L, L) block: (..., L, L) -> (..., L).
template <typename S>
Tensor<S> diag_last2(const Tensor<S>& x) {
    check<ShapeError>(x.rank() >= 2, "diag_last2: rank must be >= 2");
    const int64_t l = x.shape().back();
    check<ShapeError>(x.dim(x.rank() - 2) == l, "diag_last2: trailing block not square in ",
                      shape_str(x.shape()));
    const int64_t blocks = x.numel() / (l * l);
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    auto out = Tensor<S>::zeros(out_shape);
    for (int64_t b = 0; b < blocks; ++b)
        for (int64_t j = 0; j < l; ++j) out.data()[b * l + j] = x.data()[b * l * l + j * l + j];
    if (detail::will_record<S>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::active()->record([xi, oi, blocks, l]() {
            if (oi->grad.empty() || !xi->requires_grad) return;
            ensure_grad(*xi);
            for (int64_t b = 0; b < blocks; ++b)
                for (int64_t j = 0; j < l; ++j)
                    xi->grad[b * l * l + j * l + j] += oi->grad[b * l + j];
        });
    }
    return out;
}

}  // namespace mdn
