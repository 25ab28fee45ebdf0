#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ktf/data.hpp"
#include "ktf/errors.hpp"
#include "ktf/rng.hpp"
#include "ktf/tensor.hpp"

namespace ktf {

// ---------------------------------------------------------------------------
// fixed-length training windows. Padding is always a contiguous suffix and
// carries index 0 in every categorical array.
// ---------------------------------------------------------------------------

struct TrainingWindow {
    int64_t L = 0;
    std::vector<int64_t> row_id;
    std::vector<int32_t> content;
    std::vector<int8_t> kind;
    std::vector<int64_t> timestamp;
    std::vector<int64_t> time_lag;
    std::vector<int8_t> answered_correctly;
    std::vector<int8_t> user_answer;
    std::vector<int64_t> elapsed_ms;
    std::vector<int8_t> had_explanation;
    std::vector<uint8_t> pad;  // 1 = padding

    int64_t filled() const {
        int64_t n = 0;
        while (n < L && !pad[static_cast<size_t>(n)]) ++n;
        return n;
    }
};

inline TrainingWindow make_padded_window(const UserSequence& s, int64_t begin, int64_t end,
                                         int64_t L) {
    TrainingWindow w;
    w.L = L;
    const auto n = static_cast<size_t>(end - begin);
    const auto len = static_cast<size_t>(L);
    w.row_id.assign(len, -1);
    w.content.assign(len, 0);
    w.kind.assign(len, kPadIndex);
    w.timestamp.assign(len, 0);
    w.time_lag.assign(len, 0);
    w.answered_correctly.assign(len, kPadIndex);
    w.user_answer.assign(len, kPadIndex);
    w.elapsed_ms.assign(len, kElapsedNA);
    w.had_explanation.assign(len, kPadIndex);
    w.pad.assign(len, 1);
    for (size_t i = 0; i < n; ++i) {
        const auto src = static_cast<size_t>(begin) + i;
        w.row_id[i] = s.row_id[src];
        w.content[i] = s.content[src];
        w.kind[i] = s.kind[src];
        w.timestamp[i] = s.timestamp[src];
        w.time_lag[i] = s.time_lag[src];
        w.answered_correctly[i] = s.answered_correctly[src];
        w.user_answer[i] = s.user_answer[src];
        w.elapsed_ms[i] = s.elapsed_ms[src];
        w.had_explanation[i] = s.had_explanation[src];
        w.pad[i] = 0;
    }
    return w;
}

// Long sequences are cut at a random phase in [0, L): chunks are
// [0,phase), [phase, phase+L), ... so that every event lands in exactly one
// window. Bundle boundaries may be split; accepted.
inline std::vector<TrainingWindow> window_sequence(const UserSequence& s, int64_t L,
                                                   int64_t phase) {
    if (L < 1) throw ConfigError("window length must be >= 1");
    if (phase < 0 || phase >= L) throw ConfigError("window phase outside [0, L)");
    std::vector<TrainingWindow> out;
    const int64_t n = s.size();
    if (n == 0) return out;
    if (n <= L) {
        out.push_back(make_padded_window(s, 0, n, L));
        return out;
    }
    int64_t begin = 0;
    if (phase > 0) {
        out.push_back(make_padded_window(s, 0, std::min(phase, n), L));
        begin = phase;
    }
    while (begin < n) {
        const int64_t end = std::min(begin + L, n);
        out.push_back(make_padded_window(s, begin, end, L));
        begin = end;
    }
    return out;
}

inline std::vector<TrainingWindow> window_sequence(const UserSequence& s, int64_t L, Rng& rng) {
    const int64_t phase = s.size() > L ? rng.uniform_int(0, L - 1) : 0;
    return window_sequence(s, L, phase);
}

// ---------------------------------------------------------------------------
// timestamp-derived masks and the log time-gap matrix
// ---------------------------------------------------------------------------

// self-attention: allow(i,j) ⇔ both real and t_j ≤ t_i. Events sharing a
// timestamp (same bundle) see each other in both directions.
inline Tensor<uint8_t> build_self_attention_mask(const std::vector<int64_t>& t,
                                                 const std::vector<uint8_t>& pad) {
    const auto L = static_cast<int64_t>(t.size());
    Tensor<uint8_t> m = Tensor<uint8_t>::zeros({L, L});
    for (int64_t i = 0; i < L; ++i) {
        if (pad[static_cast<size_t>(i)]) continue;
        for (int64_t j = 0; j < L; ++j) {
            if (pad[static_cast<size_t>(j)]) continue;
            m[i * L + j] = t[static_cast<size_t>(j)] <= t[static_cast<size_t>(i)] ? 1 : 0;
        }
    }
    return m;
}

// cross-attention: the decoder query at i may only see encoder keys strictly
// in its past — never its own bundle.
inline Tensor<uint8_t> build_cross_attention_mask(const std::vector<int64_t>& t,
                                                  const std::vector<uint8_t>& pad) {
    const auto L = static_cast<int64_t>(t.size());
    Tensor<uint8_t> m = Tensor<uint8_t>::zeros({L, L});
    for (int64_t i = 0; i < L; ++i) {
        if (pad[static_cast<size_t>(i)]) continue;
        for (int64_t j = 0; j < L; ++j) {
            if (pad[static_cast<size_t>(j)]) continue;
            m[i * L + j] = t[static_cast<size_t>(j)] < t[static_cast<size_t>(i)] ? 1 : 0;
        }
    }
    return m;
}

// entry (i,j) = ln(max(t_i - t_j, 1)); computed once per batch and shared by
// all heads/layers
template <typename S>
Tensor<S> build_log_time_gap(const std::vector<int64_t>& t) {
    const auto L = static_cast<int64_t>(t.size());
    Tensor<S> g = Tensor<S>::zeros({L, L});
    for (int64_t i = 0; i < L; ++i) {
        for (int64_t j = 0; j < L; ++j) {
            const int64_t dt = t[static_cast<size_t>(i)] - t[static_cast<size_t>(j)];
            g[i * L + j] = static_cast<S>(std::log(static_cast<double>(std::max<int64_t>(dt, 1))));
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// batches
// ---------------------------------------------------------------------------

template <typename S>
struct Batch {
    int64_t B = 0, L = 0;
    // [B, L] feature planes
    std::vector<int64_t> row_id;
    std::vector<int32_t> content;
    std::vector<int8_t> kind;
    std::vector<int64_t> timestamp;
    std::vector<int64_t> time_lag;
    std::vector<int8_t> answered_correctly;
    std::vector<int8_t> user_answer;
    std::vector<int64_t> elapsed_ms;
    std::vector<int8_t> had_explanation;
    Tensor<uint8_t> pad;        // [B, L]
    Tensor<uint8_t> loss_mask;  // [B, L]: question and not pad
    Tensor<uint8_t> label;      // [B, L]: 1 = answered correctly (where loss mask)
    Tensor<uint8_t> self_mask;   // [B, L, L]
    Tensor<uint8_t> cross_mask;  // [B, L, L]
    Tensor<S> log_time_gap;      // [B, L, L]
};

template <typename S>
Batch<S> assemble_batch(const std::vector<TrainingWindow>& windows) {
    if (windows.empty()) throw DataError("assemble_batch: empty window list");
    const int64_t B = static_cast<int64_t>(windows.size());
    const int64_t L = windows[0].L;
    for (const auto& w : windows)
        if (w.L != L) throw DataError("assemble_batch: inconsistent window lengths");

    Batch<S> b;
    b.B = B;
    b.L = L;
    const auto total = static_cast<size_t>(B * L);
    b.row_id.resize(total);
    b.content.resize(total);
    b.kind.resize(total);
    b.timestamp.resize(total);
    b.time_lag.resize(total);
    b.answered_correctly.resize(total);
    b.user_answer.resize(total);
    b.elapsed_ms.resize(total);
    b.had_explanation.resize(total);
    b.pad = Tensor<uint8_t>::zeros({B, L});
    b.loss_mask = Tensor<uint8_t>::zeros({B, L});
    b.label = Tensor<uint8_t>::zeros({B, L});
    b.self_mask = Tensor<uint8_t>::zeros({B, L, L});
    b.cross_mask = Tensor<uint8_t>::zeros({B, L, L});
    b.log_time_gap = Tensor<S>::zeros({B, L, L});

    for (int64_t w = 0; w < B; ++w) {
        const TrainingWindow& win = windows[static_cast<size_t>(w)];
        const size_t off = static_cast<size_t>(w * L);
        std::copy(win.row_id.begin(), win.row_id.end(), b.row_id.begin() + off);
        std::copy(win.content.begin(), win.content.end(), b.content.begin() + off);
        std::copy(win.kind.begin(), win.kind.end(), b.kind.begin() + off);
        std::copy(win.timestamp.begin(), win.timestamp.end(), b.timestamp.begin() + off);
        std::copy(win.time_lag.begin(), win.time_lag.end(), b.time_lag.begin() + off);
        std::copy(win.answered_correctly.begin(), win.answered_correctly.end(),
                  b.answered_correctly.begin() + off);
        std::copy(win.user_answer.begin(), win.user_answer.end(), b.user_answer.begin() + off);
        std::copy(win.elapsed_ms.begin(), win.elapsed_ms.end(), b.elapsed_ms.begin() + off);
        std::copy(win.had_explanation.begin(), win.had_explanation.end(),
                  b.had_explanation.begin() + off);
        for (int64_t i = 0; i < L; ++i) {
            const auto si = static_cast<size_t>(i);
            b.pad[w * L + i] = win.pad[si];
            const bool is_question = !win.pad[si] && win.kind[si] == kKindQuestion;
            b.loss_mask[w * L + i] = is_question ? 1 : 0;
            b.label[w * L + i] =
                is_question && win.answered_correctly[si] == 2 ? 1 : 0;  // encoded raw 1
        }
        auto self = build_self_attention_mask(win.timestamp, win.pad);
        auto cross = build_cross_attention_mask(win.timestamp, win.pad);
        auto gap = build_log_time_gap<S>(win.timestamp);
        std::copy(self.v.begin(), self.v.end(), b.self_mask.v.begin() + static_cast<size_t>(w * L * L));
        std::copy(cross.v.begin(), cross.v.end(),
                  b.cross_mask.v.begin() + static_cast<size_t>(w * L * L));
        std::copy(gap.v.begin(), gap.v.end(),
                  b.log_time_gap.v.begin() + static_cast<size_t>(w * L * L));
    }
    return b;
}

}  // namespace ktf
