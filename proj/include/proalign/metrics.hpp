// Classification metrics: confusion matrix, balanced accuracy (mean per-class
// recall over supported classes), support-weighted F1, and mean/population-std
// aggregation of repeated seeded runs.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "proalign/core.hpp"

namespace proalign {

struct ConfusionMatrix {
    std::size_t n_classes = 0;
    std::vector<std::uint64_t> counts;  // row = truth, col = prediction

    std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * n_classes + pred]; }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * n_classes + pred]; }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (std::uint64_t c : counts) t += c;
        return t;
    }

    std::uint64_t support(std::size_t truth) const {
        std::uint64_t s = 0;
        for (std::size_t p = 0; p < n_classes; ++p) s += at(truth, p);
        return s;
    }

    std::uint64_t predicted(std::size_t pred) const {
        std::uint64_t s = 0;
        for (std::size_t t = 0; t < n_classes; ++t) s += at(t, pred);
        return s;
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& preds,
                                        std::size_t n_classes) {
    if (truth.size() != preds.size() || truth.empty()) {
        raise(Errc::length_mismatch, "confusion_matrix: " + std::to_string(truth.size()) + " truth vs " +
                                         std::to_string(preds.size()) + " preds (both must be nonempty)");
    }
    ConfusionMatrix cm;
    cm.n_classes = n_classes;
    cm.counts.assign(n_classes * n_classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= n_classes || preds[i] < 0 ||
            static_cast<std::size_t>(preds[i]) >= n_classes) {
            raise(Errc::bad_label, "confusion_matrix: label out of range at position " + std::to_string(i));
        }
        ++cm.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(preds[i]));
    }
    return cm;
}

// Mean of per-class recall; classes with zero support are excluded.
inline double balanced_accuracy(const ConfusionMatrix& cm) {
    double sum = 0.0;
    std::size_t supported = 0;
    for (std::size_t t = 0; t < cm.n_classes; ++t) {
        const std::uint64_t support = cm.support(t);
        if (support == 0) continue;
        sum += static_cast<double>(cm.at(t, t)) / static_cast<double>(support);
        ++supported;
    }
    if (supported == 0) raise(Errc::no_supported_classes, "balanced_accuracy: every class has zero support");
    return sum / static_cast<double>(supported);
}

// Support-weighted mean of per-class F1; F1 = 0 when precision + recall = 0.
inline double weighted_f1(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) raise(Errc::no_supported_classes, "weighted_f1: empty confusion matrix");
    double sum = 0.0;
    for (std::size_t t = 0; t < cm.n_classes; ++t) {
        const std::uint64_t support = cm.support(t);
        if (support == 0) continue;  // weight 0
        const std::uint64_t predicted = cm.predicted(t);
        const double tp = static_cast<double>(cm.at(t, t));
        const double precision = predicted > 0 ? tp / static_cast<double>(predicted) : 0.0;
        const double recall = tp / static_cast<double>(support);
        const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        sum += f1 * static_cast<double>(support) / static_cast<double>(total);
    }
    return sum;
}

struct RunAggregate {
    double mean = 0.0;
    double std_dev = 0.0;  // population (divide by k)
};

inline RunAggregate aggregate_runs(const std::vector<double>& values) {
    if (values.empty()) raise(Errc::empty_runs, "aggregate_runs: no runs");
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    return RunAggregate{mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

// Fraction -> percent with two decimals, the reporting convention used in
// metric documents and sweep tables.
inline std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
    return buf;
}

}  // namespace proalign
