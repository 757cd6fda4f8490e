#pragma once

// Classification metrics: top-k accuracy, per-class F1, macro/micro F1 per
// label level, and the combined F1_mean.

#include <algorithm>
#include <numeric>
#include <vector>

#include "mdn/common.hpp"

namespace mdn {

// Index of the largest logit; ties resolve to the lower class index.
inline int64_t argmax_class(const std::vector<float>& logits) {
    int64_t best = 0;
    for (size_t j = 1; j < logits.size(); ++j)
        if (logits[j] > logits[best]) best = static_cast<int64_t>(j);
    return best;
}

// Fraction (percent) of samples whose label is among the k largest logits.
// Ties break toward lower class indices, so results are deterministic.
inline double topk_accuracy(const std::vector<std::vector<float>>& logits,
                            const std::vector<int64_t>& labels, int64_t k) {
    check<ShapeError>(logits.size() == labels.size(), "topk: ", logits.size(), " rows vs ",
                      labels.size(), " labels");
    if (logits.empty()) return 0.0;
    const int64_t c = static_cast<int64_t>(logits[0].size());
    check<Error>(k >= 1 && k <= c, "topk: k=", k, " outside [1,", c, "]");
    int64_t hits = 0;
    std::vector<int64_t> order(c);
    for (size_t n = 0; n < logits.size(); ++n) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            return logits[n][a] > logits[n][b];  // stable: equal logits keep index order
        });
        for (int64_t j = 0; j < k; ++j)
            if (order[j] == labels[n]) {
                ++hits;
                break;
            }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(logits.size());
}

// confusion[i][j] = count(true == i, predicted == j).
inline std::vector<std::vector<int64_t>> confusion_matrix(const std::vector<int64_t>& truth,
                                                          const std::vector<int64_t>& pred,
                                                          int64_t num_classes) {
    check<ShapeError>(truth.size() == pred.size(), "confusion: size mismatch");
    std::vector<std::vector<int64_t>> cm(num_classes, std::vector<int64_t>(num_classes, 0));
    for (size_t n = 0; n < truth.size(); ++n) {
        check<Error>(truth[n] >= 0 && truth[n] < num_classes, "confusion: label ", truth[n],
                     " outside [0,", num_classes, ")");
        check<Error>(pred[n] >= 0 && pred[n] < num_classes, "confusion: prediction ", pred[n],
                     " outside [0,", num_classes, ")");
        ++cm[truth[n]][pred[n]];
    }
    return cm;
}

struct LevelF1 {
    double macro_f1 = 0;  // percent
    double micro_f1 = 0;  // percent
    std::vector<double> per_class_f1;
};

inline LevelF1 f1_scores(const std::vector<std::vector<int64_t>>& cm) {
    const int64_t c = static_cast<int64_t>(cm.size());
    LevelF1 out;
    out.per_class_f1.assign(c, 0.0);
    int64_t total = 0, correct = 0;
    double macro_acc = 0;
    for (int64_t i = 0; i < c; ++i) {
        int64_t tp = cm[i][i], fp = 0, fn = 0;
        for (int64_t j = 0; j < c; ++j) {
            total += cm[i][j];
            if (j != i) {
                fn += cm[i][j];
                fp += cm[j][i];
            }
        }
        correct += tp;
        const double denom = static_cast<double>(2 * tp + fp + fn);
        out.per_class_f1[i] = denom > 0 ? 100.0 * 2.0 * static_cast<double>(tp) / denom : 0.0;
        macro_acc += out.per_class_f1[i];
    }
    out.macro_f1 = c > 0 ? macro_acc / static_cast<double>(c) : 0.0;
    // single-label multiclass: micro precision == micro recall == accuracy
    out.micro_f1 = total > 0 ? 100.0 * static_cast<double>(correct) / static_cast<double>(total)
                             : 0.0;
    return out;
}

struct MetricsReport {
    double top1 = 0;
    double top5 = 0;
    LevelF1 body;
    LevelF1 action;
    double f1_mean = 0;  // mean of the four macro/micro F1 values across levels
    std::vector<std::vector<int64_t>> action_confusion;
    double body_top1 = 0;
};

// Two-level scoring: action-level predictions map to body-level through the
// action -> body parent table.
inline MetricsReport compute_metrics(const std::vector<std::vector<float>>& logits,
                                     const std::vector<int64_t>& action_labels,
                                     const std::vector<int64_t>& body_labels,
                                     const std::vector<int64_t>& action_to_body,
                                     int64_t num_body_classes) {
    const int64_t c = logits.empty() ? 0 : static_cast<int64_t>(logits[0].size());
    check<ShapeError>(static_cast<int64_t>(action_to_body.size()) == c,
                      "metrics: action_to_body has ", action_to_body.size(), " entries for ", c,
                      " classes");
    MetricsReport rep;
    rep.top1 = topk_accuracy(logits, action_labels, 1);
    rep.top5 = topk_accuracy(logits, action_labels, std::min<int64_t>(5, c));
    std::vector<int64_t> pred(logits.size()), body_pred(logits.size());
    for (size_t n = 0; n < logits.size(); ++n) {
        pred[n] = argmax_class(logits[n]);
        body_pred[n] = action_to_body[pred[n]];
    }
    rep.action_confusion = confusion_matrix(action_labels, pred, c);
    rep.action = f1_scores(rep.action_confusion);
    auto body_cm = confusion_matrix(body_labels, body_pred, num_body_classes);
    rep.body = f1_scores(body_cm);
    int64_t body_hits = 0;
    for (size_t n = 0; n < body_pred.size(); ++n) body_hits += body_pred[n] == body_labels[n];
    rep.body_top1 =
        logits.empty() ? 0.0 : 100.0 * static_cast<double>(body_hits) / logits.size();
    rep.f1_mean =
        (rep.body.macro_f1 + rep.body.micro_f1 + rep.action.macro_f1 + rep.action.micro_f1) / 4.0;
    return rep;
}

}  // namespace mdn
