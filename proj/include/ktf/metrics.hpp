#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ktf/errors.hpp"

namespace ktf {

// ---------------------------------------------------------------------------
// ranking metrics over (label, score) pairs
// ---------------------------------------------------------------------------

// Mann–Whitney AUC via average ranks: P(score+ > score-) + 0.5 P(tie).
inline double auc(const std::vector<uint8_t>& labels, const std::vector<double>& scores) {
    const size_t n = labels.size();
    if (scores.size() != n) throw ShapeError("auc: labels and scores differ in length");
    int64_t pos = 0;
    for (uint8_t y : labels) pos += (y != 0);
    const int64_t neg = static_cast<int64_t>(n) - pos;
    if (pos == 0 || neg == 0)
        throw DataError("auc undefined: need at least one positive and one negative label");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // rank sum of positives, ties share the average rank of their run
    double rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum += avg_rank;
        i = j;
    }
    const double p = static_cast<double>(pos);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

inline double accuracy(const std::vector<uint8_t>& labels, const std::vector<double>& scores,
                       double threshold = 0.5) {
    const size_t n = labels.size();
    if (scores.size() != n) throw ShapeError("accuracy: labels and scores differ in length");
    if (n == 0) throw DataError("accuracy undefined on empty input");
    int64_t hit = 0;
    for (size_t i = 0; i < n; ++i) {
        const int pred = scores[i] >= threshold ? 1 : 0;
        hit += (pred == (labels[i] != 0));
    }
    return static_cast<double>(hit) / static_cast<double>(n);
}

struct MetricsReport {
    double auc = 0.0;
    double accuracy = 0.0;
    double loss = 0.0;
    int64_t count = 0;  // evaluated positions
};

}  // namespace ktf
