#pragma once

// Classification metrics: macro/micro F1 over declared classes, binary F1,
// AUROC via the Mann-Whitney rank formulation, AUPR as average precision,
// and one-vs-rest macro AUROC. Ranking metrics throw MetricUndefinedError on
// single-class inputs so bootstrap resampling can redraw.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "moma/core.hpp"
#include "moma/matrix.hpp"

namespace moma {

namespace detail_metrics {

struct F1Counts {
    std::vector<long> tp, fp, fn;
};

inline F1Counts confusion_counts(const std::vector<int>& labels, const std::vector<int>& preds,
                                 int num_classes) {
    if (labels.empty()) throw ValidationError("f1: empty input");
    if (labels.size() != preds.size())
        throw ValidationError("f1: labels and predictions differ in length");
    if (num_classes < 1) throw ValidationError("f1: num_classes must be >= 1");
    F1Counts c;
    c.tp.assign(static_cast<std::size_t>(num_classes), 0);
    c.fp.assign(static_cast<std::size_t>(num_classes), 0);
    c.fn.assign(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        int y = labels[i], p = preds[i];
        if (y < 0 || y >= num_classes || p < 0 || p >= num_classes)
            throw ValidationError("f1: class index out of range at position " + std::to_string(i));
        if (y == p) {
            ++c.tp[static_cast<std::size_t>(y)];
        } else {
            ++c.fp[static_cast<std::size_t>(p)];
            ++c.fn[static_cast<std::size_t>(y)];
        }
    }
    return c;
}

} // namespace detail_metrics

// Unweighted mean of per-class F1 = 2TP/(2TP+FP+FN) over all declared
// classes. A class with no support anywhere scores 0, reported via
// `warnings` when provided.
inline double macro_f1(const std::vector<int>& labels, const std::vector<int>& preds,
                       int num_classes, std::vector<std::string>* warnings = nullptr) {
    auto c = detail_metrics::confusion_counts(labels, preds, num_classes);
    double sum = 0.0;
    for (int k = 0; k < num_classes; ++k) {
        auto i = static_cast<std::size_t>(k);
        long denom = 2 * c.tp[i] + c.fp[i] + c.fn[i];
        if (denom == 0) {
            if (warnings)
                warnings->push_back("class " + std::to_string(k) +
                                    " absent from labels and predictions; its F1 counts as 0");
            continue;
        }
        sum += 2.0 * static_cast<double>(c.tp[i]) / static_cast<double>(denom);
    }
    return sum / num_classes;
}

// F1 from pooled counts; equals accuracy for single-label multiclass.
inline double micro_f1(const std::vector<int>& labels, const std::vector<int>& preds,
                       int num_classes) {
    auto c = detail_metrics::confusion_counts(labels, preds, num_classes);
    long tp = std::accumulate(c.tp.begin(), c.tp.end(), 0L);
    long fp = std::accumulate(c.fp.begin(), c.fp.end(), 0L);
    long fn = std::accumulate(c.fn.begin(), c.fn.end(), 0L);
    long denom = 2 * tp + fp + fn;
    if (denom == 0) throw ValidationError("micro f1: no counts");
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

// F1 of the positive class for binary predictions.
inline double f1_binary(const std::vector<int>& labels, const std::vector<int>& preds) {
    auto c = detail_metrics::confusion_counts(labels, preds, 2);
    long denom = 2 * c.tp[1] + c.fp[1] + c.fn[1];
    if (denom == 0)
        throw MetricUndefinedError("binary f1 undefined: no positives in labels or predictions");
    return 2.0 * static_cast<double>(c.tp[1]) / static_cast<double>(denom);
}

// Mann-Whitney AUROC: fraction of (positive, negative) pairs ranked
// correctly, ties at 1/2, computed via average ranks.
inline double auroc(const std::vector<int>& labels, const Vec& scores) {
    if (labels.size() != scores.size())
        throw ValidationError("auroc: labels and scores differ in length");
    if (labels.empty()) throw ValidationError("auroc: empty input");
    std::size_t n = labels.size();
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ValidationError("auroc: labels must be 0/1");
        if (!std::isfinite(scores[i])) throw ValidationError("auroc: non-finite score");
        n_pos += static_cast<std::size_t>(labels[i]);
    }
    std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw MetricUndefinedError("auroc undefined: needs at least one positive and one negative");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Average precision with threshold grouping: items sharing a score form one
// cut, so precision at a positive's rank counts every item scored >= it.
// Distinct scores reduce this to the classic sum over positives; all-equal
// scores give the prevalence.
inline double aupr(const std::vector<int>& labels, const Vec& scores) {
    if (labels.size() != scores.size())
        throw ValidationError("aupr: labels and scores differ in length");
    if (labels.empty()) throw ValidationError("aupr: empty input");
    long total_pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ValidationError("aupr: labels must be 0/1");
        if (!std::isfinite(scores[i])) throw ValidationError("aupr: non-finite score");
        total_pos += labels[i];
    }
    if (total_pos == 0 || static_cast<std::size_t>(total_pos) == labels.size())
        throw MetricUndefinedError("aupr undefined: needs at least one positive and one negative");
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    long seen = 0, seen_pos = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        long group_pos = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            group_pos += labels[order[j]];
            ++j;
        }
        seen += static_cast<long>(j - i);
        seen_pos += group_pos;
        double precision = static_cast<double>(seen_pos) / static_cast<double>(seen);
        ap += precision * static_cast<double>(group_pos);
        i = j;
    }
    return ap / static_cast<double>(total_pos);
}

// One-vs-rest AUROC per declared class, unweighted mean. `probs[i][k]` is the
// score of class k for instance i.
inline double macro_auroc(const std::vector<int>& labels, const std::vector<Vec>& probs,
                          int num_classes) {
    if (labels.empty()) throw ValidationError("macro auroc: empty input");
    if (labels.size() != probs.size())
        throw ValidationError("macro auroc: labels and score rows differ in length");
    for (const auto& row : probs)
        if (row.size() != static_cast<std::size_t>(num_classes))
            throw ValidationError("macro auroc: score row width != num_classes");
    double sum = 0.0;
    std::vector<int> ovr(labels.size());
    Vec col(labels.size());
    for (int k = 0; k < num_classes; ++k) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            ovr[i] = labels[i] == k ? 1 : 0;
            col[i] = probs[i][static_cast<std::size_t>(k)];
        }
        sum += auroc(ovr, col); // single-class resamples propagate MetricUndefinedError
    }
    return sum / num_classes;
}

} // namespace moma
