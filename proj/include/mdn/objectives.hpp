#pragma once

// Training objectives: the mutual action consistency (MAC) contrastive loss
// on raw path outputs, entity pooling, feature fusion with the classifier
// head, and the total objective CE + lambda * MAC.

#include "mdn/nn.hpp"

namespace mdn {

// Unit-normalizes each trailing D-slice; zero vectors stay zero.
template <typename S>
Tensor<S> project_normalize(const Tensor<S>& x) {
    return l2_normalize_last(x);
}

// One consistency term: the ST feature of slot (i, t) is contrasted against
// the TS features of every temporal position of the same entity. z_st_it (D,),
// z_ts_row (T, D), all unit-normalized. Non-negative by construction since the
// positive appears in the denominator.
template <typename S>
Tensor<S> mac_term(const Tensor<S>& z_st_it, const Tensor<S>& z_ts_row, int64_t t, double tau) {
    check<Error>(tau > 0.0, "mac_term: tau must be > 0, got ", tau);
    const int64_t d = z_st_it.numel();
    const int64_t t_len = z_ts_row.dim(0);
    check<ShapeError>(z_ts_row.rank() == 2 && z_ts_row.dim(1) == d, "mac_term: row shape ",
                      shape_str(z_ts_row.shape()), " vs query dim ", d);
    check<Error>(t >= 0 && t < t_len, "mac_term: t=", t, " outside [0,", t_len, ")");
    auto sims = reshape(matmul(z_ts_row, reshape(z_st_it, {d, 1})), {t_len});  // (T,)
    auto scaled = scalar_mul(sims, S(1) / static_cast<S>(tau));
    auto lse = logsumexp_last(scaled);
    auto pos = reshape(slice(scaled, 0, t, 1), Shape{});
    return sub(lse, pos);
}

template <typename S>
struct MacResult {
    Tensor<S> loss;                        // scalar
    std::vector<double> per_entity;       // confidence-weighted mean term per entity
};

// Confidence-weighted aggregate over entities and frames, averaged over the
// batch; samples with zero total confidence contribute 0. Operates on raw
// path outputs (before routing). conf/mask are one value per (b,t,k) slot.
// When frame_level is set, negatives are the other entities within the same
// frame instead of the other temporal positions.
template <typename S>
MacResult<S> mac_total(const Tensor<S>& z_st, const Tensor<S>& z_ts,
                       const std::vector<double>& conf, const std::vector<uint8_t>& mask,
                       double tau, bool frame_level = false) {
    const int64_t b = z_st.dim(0), t = z_st.dim(1), k = z_st.dim(2), d = z_st.dim(3);
    check<ShapeError>(static_cast<int64_t>(conf.size()) == b * t * k, "mac_total: conf size ",
                      conf.size(), " vs ", b * t * k, " slots");

    Tensor<S> terms;                 // (rows, L): per-query loss terms
    std::vector<uint8_t> key_mask;   // valid keys per query row
    int64_t rows, l;
    if (!frame_level) {
        // track layout: (B*K, T, D); negatives over time
        auto st = reshape(transpose(z_st, {0, 2, 1, 3}), {b * k, t, d});
        auto ts = reshape(transpose(z_ts, {0, 2, 1, 3}), {b * k, t, d});
        rows = b * k;
        l = t;
        auto sim = scalar_mul(matmul(st, transpose(ts, {0, 2, 1})), S(1) / static_cast<S>(tau));
        key_mask.assign(rows * l * l, 0);
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ki = 0; ki < k; ++ki)
                for (int64_t qi = 0; qi < t; ++qi)
                    for (int64_t kj = 0; kj < t; ++kj)
                        key_mask[((bi * k + ki) * t + qi) * t + kj] =
                            mask[(bi * t + kj) * k + ki];
        auto lse = logsumexp_last(sim, &key_mask);  // (rows, L)
        terms = sub(lse, diag_last2(sim));
    } else {
        // frame layout: (B*T, K, D); negatives over entities
        auto st = reshape(z_st, {b * t, k, d});
        auto ts = reshape(z_ts, {b * t, k, d});
        rows = b * t;
        l = k;
        auto sim = scalar_mul(matmul(st, transpose(ts, {0, 2, 1})), S(1) / static_cast<S>(tau));
        key_mask.assign(rows * l * l, 0);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t qi = 0; qi < k; ++qi)
                for (int64_t kj = 0; kj < k; ++kj)
                    key_mask[(r * k + qi) * k + kj] = mask[r * k + kj];
        auto lse = logsumexp_last(sim, &key_mask);
        terms = sub(lse, diag_last2(sim));
    }

    // weight layout matching `terms`; invalid queries carry zero confidence
    auto weights = Tensor<S>::zeros({rows, l});
    std::vector<double> batch_norm(b, 0.0);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ti = 0; ti < t; ++ti)
            for (int64_t ki = 0; ki < k; ++ki) {
                const double c = conf[(bi * t + ti) * k + ki];
                batch_norm[bi] += c;
                const int64_t idx = frame_level ? (bi * t + ti) * k + ki : (bi * k + ki) * t + ti;
                weights.data()[idx] = static_cast<S>(c);
            }

    auto weighted = mul(terms, weights);                     // (rows, L)
    auto folded = reshape(weighted, {b, (rows / b) * l});    // (B, K*T)
    auto per_sample = sum_axes(folded, {1});                 // (B,)
    auto inv = Tensor<S>::zeros({b, 1});
    for (int64_t bi = 0; bi < b; ++bi)
        inv.data()[bi] = batch_norm[bi] > 0.0 ? static_cast<S>(1.0 / batch_norm[bi]) : S(0);
    auto normalized = rowwise_scale(reshape(per_sample, {b, 1}), inv);

    MacResult<S> out;
    out.loss = reshape(mean_all(normalized), Shape{});

    // per-entity diagnostics (data only, outside the graph)
    out.per_entity.assign(k, 0.0);
    std::vector<double> entity_conf(k, 0.0);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ti = 0; ti < t; ++ti)
            for (int64_t ki = 0; ki < k; ++ki) {
                const double c = conf[(bi * t + ti) * k + ki];
                const int64_t idx = frame_level ? (bi * t + ti) * k + ki : (bi * k + ki) * t + ti;
                out.per_entity[ki] += c * static_cast<double>(terms.data()[idx]);
                entity_conf[ki] += c;
            }
    for (int64_t ki = 0; ki < k; ++ki)
        if (entity_conf[ki] > 0.0) out.per_entity[ki] /= entity_conf[ki];
    return out;
}

// Mean of the fused entity features over valid (t, k) slots per sample;
// all-masked samples pool to the zero vector.
template <typename S>
Tensor<S> entity_pool(const Tensor<S>& x_fused, const std::vector<uint8_t>& mask) {
    const int64_t b = x_fused.dim(0), t = x_fused.dim(1), k = x_fused.dim(2);
    auto masked = mask_rows(x_fused, mask);
    auto summed = sum_axes(masked, {1, 2});  // (B, D)
    auto inv = Tensor<S>::zeros({b, 1});
    for (int64_t bi = 0; bi < b; ++bi) {
        int64_t count = 0;
        for (int64_t s = 0; s < t * k; ++s) count += mask[bi * t * k + s] ? 1 : 0;
        inv.data()[bi] = count > 0 ? static_cast<S>(1.0 / static_cast<double>(count)) : S(0);
    }
    return rowwise_scale(summed, inv);
}

// Classifier head over [f_cnn; f_entity]: Linear -> GELU -> Dropout(0.5) ->
// Linear -> GELU -> Linear, producing unnormalized logits.
template <typename S>
struct Classifier {
    Linear<S> l1, l2, l3;
    double dropout_p = 0.5;

    Classifier() = default;
    Classifier(int64_t in_dim, int64_t h1, int64_t h2, int64_t num_classes, Rng& rng,
               ParamRegistry<S>& reg, const std::string& prefix)
        : l1(in_dim, h1, rng, reg, prefix + ".l1"),
          l2(h1, h2, rng, reg, prefix + ".l2"),
          l3(h2, num_classes, rng, reg, prefix + ".l3") {}

    Tensor<S> forward(const Tensor<S>& f, Rng& rng, bool training) const {
        auto h = dropout(gelu(l1.forward(f)), dropout_p, rng, training);
        return l3.forward(gelu(l2.forward(h)));
    }
};

template <typename S>
Tensor<S> fuse_features(const Tensor<S>& f_cnn, const Tensor<S>& f_entity) {
    return concat<S>({f_cnn, f_entity}, 1);
}

// Softmax cross-entropy from raw logits, mean over the batch.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int64_t>& labels) {
    const int64_t b = logits.dim(0), c = logits.dim(1);
    check<ShapeError>(static_cast<int64_t>(labels.size()) == b, "cross_entropy: ", labels.size(),
                      " labels for batch ", b);
    for (int64_t y : labels)
        check<Error>(y >= 0 && y < c, "cross_entropy: label ", y, " outside [0,", c, ")");
    auto lse = logsumexp_last(logits);                 // (B,)
    auto picked = select_index_last(logits, labels);   // (B,)
    return reshape(mean_all(sub(lse, picked)), Shape{});
}

struct LossReport {
    double ce = 0;
    double mac = 0;
    double total = 0;
    double lambda = 0.1;
    std::vector<double> per_entity_mac;
};

template <typename S>
struct TotalLoss {
    Tensor<S> loss;  // scalar, differentiable
    LossReport report;
};

template <typename S>
TotalLoss<S> total_loss(const Tensor<S>& logits, const std::vector<int64_t>& labels,
                        const Tensor<S>& mac, double lambda,
                        std::vector<double> per_entity_mac = {}) {
    auto ce = cross_entropy(logits, labels);
    TotalLoss<S> out;
    out.loss = add(ce, scalar_mul(mac, static_cast<S>(lambda)));
    out.report.ce = static_cast<double>(ce.item());
    out.report.mac = static_cast<double>(mac.item());
    out.report.lambda = lambda;
    out.report.total = static_cast<double>(out.loss.item());
    out.report.per_entity_mac = std::move(per_entity_mac);
    return out;
}

}  // namespace mdn
