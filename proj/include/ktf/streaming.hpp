#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <deque>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ktf/metrics.hpp"
#include "ktf/model.hpp"
#include "ktf/train.hpp"
#include "ktf/windows.hpp"

namespace ktf {

// ---------------------------------------------------------------------------
// grouped time-series replay: events arrive in chunks ("groups") in global
// time order, answers for a chunk are revealed together with the next chunk,
// and predictions for a chunk must be made before seeing its answers.
// ---------------------------------------------------------------------------

struct StreamEvent {
    int64_t row_id = 0;
    int64_t user_id = 0;
    int32_t content = 0;
    int8_t kind = 0;
    int64_t timestamp = 0;
    int64_t container = 0;
    int64_t time_lag = 0;
    int8_t answered_correctly = kAnsweredCorrectlyNA;
    int8_t user_answer = kUserAnswerNA;
    int64_t elapsed_ms = kElapsedNA;
    int8_t had_explanation = kHadExplanationNA;
};

inline StreamEvent event_at(const UserSequence& s, int64_t i) {
    const auto k = static_cast<size_t>(i);
    StreamEvent e;
    e.row_id = s.row_id[k];
    e.user_id = s.user_id;
    e.content = s.content[k];
    e.kind = s.kind[k];
    e.timestamp = s.timestamp[k];
    e.container = s.container[k];
    e.time_lag = s.time_lag[k];
    e.answered_correctly = s.answered_correctly[k];
    e.user_answer = s.user_answer[k];
    e.elapsed_ms = s.elapsed_ms[k];
    e.had_explanation = s.had_explanation[k];
    return e;
}

struct RevealRow {
    int64_t row_id = 0;
    int64_t user_id = 0;
    int8_t answered_correctly = kAnsweredCorrectlyNA;
    int8_t user_answer = kUserAnswerNA;
    int64_t elapsed_ms = kElapsedNA;
    int8_t had_explanation = kHadExplanationNA;
};

struct StreamGroup {
    int64_t id = 0;
    std::vector<StreamEvent> rows;   // answer fields stripped to N/A
    std::vector<RevealRow> reveal;   // true answers of the previous group
};

// Greedy chunking in global time order. A user's bundle never splits across
// groups, and a group holds at most one bundle per user (rows must sit at the
// frontier of each user's timeline when predicted).
inline std::vector<StreamGroup> make_groups(const std::vector<StreamEvent>& events,
                                            int64_t max_group_size) {
    if (max_group_size < 1) throw ConfigError("make_groups: group size cap must be >= 1");
    std::vector<StreamGroup> groups;
    if (events.empty()) return groups;
    for (size_t i = 1; i < events.size(); ++i)
        if (events[i].timestamp < events[i - 1].timestamp)
            throw DataError("make_groups: events not globally time-sorted at index " +
                            std::to_string(i));

    std::vector<StreamEvent> cur;
    std::unordered_set<int64_t> users_in_cur;
    auto flush = [&]() {
        if (cur.empty()) return;
        StreamGroup g;
        g.id = static_cast<int64_t>(groups.size());
        g.rows = std::move(cur);
        cur.clear();
        users_in_cur.clear();
        groups.push_back(std::move(g));
    };

    size_t i = 0;
    while (i < events.size()) {
        size_t j = i + 1;  // bundle = same user, timestamp, container
        while (j < events.size() && events[j].user_id == events[i].user_id &&
               events[j].timestamp == events[i].timestamp &&
               events[j].container == events[i].container)
            ++j;
        const auto bundle = static_cast<int64_t>(j - i);
        if (bundle > max_group_size)
            throw DataError("make_groups: bundle of " + std::to_string(bundle) +
                            " rows exceeds the group size cap");
        if (static_cast<int64_t>(cur.size()) + bundle > max_group_size ||
            users_in_cur.count(events[i].user_id))
            flush();
        for (size_t k = i; k < j; ++k) cur.push_back(events[k]);
        users_in_cur.insert(events[i].user_id);
        i = j;
    }
    flush();

    // strip answers into the NEXT group's reveal record; the last group's
    // answers are never revealed
    for (size_t g = 0; g < groups.size(); ++g) {
        for (auto& e : groups[g].rows) {
            if (e.kind == kKindQuestion && g + 1 < groups.size()) {
                RevealRow r;
                r.row_id = e.row_id;
                r.user_id = e.user_id;
                r.answered_correctly = e.answered_correctly;
                r.user_answer = e.user_answer;
                r.elapsed_ms = e.elapsed_ms;
                r.had_explanation = e.had_explanation;
                groups[g + 1].reveal.push_back(r);
            }
            e.answered_correctly = kAnsweredCorrectlyNA;
            e.user_answer = kUserAnswerNA;
            e.elapsed_ms = kElapsedNA;
            e.had_explanation = kHadExplanationNA;
        }
    }
    return groups;
}

// ---------------------------------------------------------------------------
// per-user state: the latest <= capacity events, oldest evicted first. Lag is
// recomputed on append with the same rule the offline pipeline uses, which
// only needs the newest retained event.
// ---------------------------------------------------------------------------

struct UserHistoryBuffer {
    int64_t capacity = 512;
    std::deque<StreamEvent> events;  // oldest at the front

    void append(StreamEvent e) {
        if (events.empty()) {
            e.time_lag = 0;
        } else {
            const StreamEvent& last = events.back();
            const bool same_bundle =
                e.timestamp == last.timestamp && e.container == last.container;
            if (same_bundle) {
                e.time_lag = last.time_lag;
            } else {
                if (e.timestamp < last.timestamp)
                    throw DataError("history buffer: event arrives out of time order for user " +
                                    std::to_string(e.user_id));
                e.time_lag = e.timestamp - last.timestamp;
            }
        }
        events.push_back(std::move(e));
        while (static_cast<int64_t>(events.size()) > capacity) events.pop_front();
    }

    int64_t size() const { return static_cast<int64_t>(events.size()); }
};

struct SimulatorState {
    int64_t window_len = 512;
    int64_t capacity = 512;
    std::unordered_map<int64_t, UserHistoryBuffer> buffers;

    UserHistoryBuffer& buffer(int64_t user_id) {
        auto it = buffers.find(user_id);
        if (it == buffers.end())
            it = buffers.emplace(user_id, UserHistoryBuffer{capacity, {}}).first;
        return it->second;
    }

    void preload(const UserSequence& s, int64_t upto) {
        auto& b = buffer(s.user_id);
        for (int64_t i = 0; i < upto; ++i) b.append(event_at(s, i));
    }
};

// fill answers for events predicted one group ago
inline void apply_reveal(SimulatorState& state, const std::vector<RevealRow>& reveal) {
    for (const auto& r : reveal) {
        auto it = state.buffers.find(r.user_id);
        if (it == state.buffers.end())
            throw DataError("reveal references unknown user " + std::to_string(r.user_id));
        auto& events = it->second.events;
        StreamEvent* hit = nullptr;
        for (auto rit = events.rbegin(); rit != events.rend(); ++rit)
            if (rit->row_id == r.row_id) {
                hit = &*rit;
                break;
            }
        if (hit == nullptr)
            throw DataError("reveal references unknown event row " + std::to_string(r.row_id));
        if (hit->answered_correctly != kAnsweredCorrectlyNA)
            throw DataError("event row " + std::to_string(r.row_id) + " revealed twice");
        hit->answered_correctly = r.answered_correctly;
        hit->user_answer = r.user_answer;
        hit->elapsed_ms = r.elapsed_ms;
        hit->had_explanation = r.had_explanation;
    }
}

namespace detail {

inline TrainingWindow window_from_buffer(const UserHistoryBuffer& b, int64_t L) {
    TrainingWindow w;
    w.L = L;
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
    const int64_t n = std::min<int64_t>(b.size(), L);
    const int64_t first = b.size() - n;
    for (int64_t i = 0; i < n; ++i) {
        const StreamEvent& e = b.events[static_cast<size_t>(first + i)];
        const auto k = static_cast<size_t>(i);
        w.row_id[k] = e.row_id;
        w.content[k] = e.content;
        w.kind[k] = e.kind;
        w.timestamp[k] = e.timestamp;
        w.time_lag[k] = e.time_lag;
        w.answered_correctly[k] = e.answered_correctly;
        w.user_answer[k] = e.user_answer;
        w.elapsed_ms[k] = e.elapsed_ms;
        w.had_explanation[k] = e.had_explanation;
        w.pad[k] = 0;
    }
    return w;
}

}  // namespace detail

// Append the group's rows to their buffers and predict every question row.
// Output order follows the group's row order.
template <typename S>
std::vector<std::pair<int64_t, double>> predict_group(SimulatorState& state, Model<S>& m,
                                                      const ContentFeatures& f,
                                                      const StreamGroup& group) {
    std::vector<int64_t> user_order;  // first appearance
    std::unordered_map<int64_t, int64_t> new_rows;
    for (const auto& e : group.rows) {
        if (!new_rows.count(e.user_id)) {
            user_order.push_back(e.user_id);
            new_rows[e.user_id] = 0;
        }
        new_rows[e.user_id] += 1;
        state.buffer(e.user_id).append(e);
    }

    std::vector<std::pair<int64_t, double>> out;
    std::vector<int64_t> predict_users;
    for (int64_t u : user_order) {
        const auto& b = state.buffer(u);
        const int64_t n = std::min<int64_t>(b.size(), state.window_len);
        bool any_question = false;
        for (int64_t i = std::max<int64_t>(n - new_rows[u], 0); i < n; ++i)
            any_question |= b.events[static_cast<size_t>(b.size() - n + i)].kind == kKindQuestion;
        if (any_question) predict_users.push_back(u);
    }
    if (predict_users.empty()) return out;

    std::vector<TrainingWindow> ws;
    ws.reserve(predict_users.size());
    for (int64_t u : predict_users)
        ws.push_back(detail::window_from_buffer(state.buffer(u), state.window_len));
    auto batch = assemble_batch<S>(ws);
    ForwardCache<S> cache;
    auto probs = model_forward(m, f, batch, cache);

    std::unordered_map<int64_t, double> by_row;
    for (size_t k = 0; k < predict_users.size(); ++k) {
        const auto& b = state.buffer(predict_users[k]);
        const int64_t n = std::min<int64_t>(b.size(), state.window_len);
        for (int64_t i = std::max<int64_t>(n - new_rows[predict_users[k]], 0); i < n; ++i) {
            const StreamEvent& e = b.events[static_cast<size_t>(b.size() - n + i)];
            if (e.kind != kKindQuestion) continue;
            by_row[e.row_id] =
                static_cast<double>(probs[static_cast<int64_t>(k) * batch.L + i]);
        }
    }
    for (const auto& e : group.rows)
        if (e.kind == kKindQuestion) out.emplace_back(e.row_id, by_row.at(e.row_id));
    return out;
}

struct SimulationResult {
    MetricsReport metrics;
    std::vector<std::pair<int64_t, double>> predictions;  // (row_id, probability)
    std::vector<int64_t> group_offsets;                   // prediction index where group g starts
    double rows_per_second = 0.0;
};

// Replay a validation split: preload each user's history, stream the held-out
// tails grouped by global time, reveal answers one group late, and score the
// predictions against the withheld labels.
template <typename S>
SimulationResult run_simulation(Model<S>& m, const ContentFeatures& f, const Split& split,
                                int64_t max_group_size = 50, int64_t window_len = 512) {
    SimulatorState state;
    state.window_len = window_len;
    state.capacity = std::max(window_len, int64_t{512});

    std::vector<StreamEvent> held_out;
    std::unordered_map<int64_t, uint8_t> label_of;  // row_id -> 0/1
    for (size_t u = 0; u < split.validation.size(); ++u) {
        const auto& s = split.validation[u];
        state.preload(s, split.score_from[u]);
        for (int64_t i = split.score_from[u]; i < s.size(); ++i) {
            auto e = event_at(s, i);
            if (e.kind == kKindQuestion) {
                auto y = decode_answered_correctly(e.answered_correctly);
                if (!y.has_value())
                    throw DataError("held-out question row " + std::to_string(e.row_id) +
                                    " has no recorded answer");
                label_of[e.row_id] = static_cast<uint8_t>(*y);
            }
            held_out.push_back(std::move(e));
        }
    }
    std::stable_sort(held_out.begin(), held_out.end(),
                     [](const StreamEvent& a, const StreamEvent& b) {
                         if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
                         if (a.user_id != b.user_id) return a.user_id < b.user_id;
                         if (a.container != b.container) return a.container < b.container;
                         return a.row_id < b.row_id;
                     });

    auto groups = make_groups(held_out, max_group_size);

    SimulationResult out;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& g : groups) {
        apply_reveal(state, g.reveal);
        out.group_offsets.push_back(static_cast<int64_t>(out.predictions.size()));
        auto preds = predict_group(state, m, f, g);
        out.predictions.insert(out.predictions.end(), preds.begin(), preds.end());
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    out.rows_per_second =
        secs > 0.0 ? static_cast<double>(out.predictions.size()) / secs : 0.0;

    if (!out.predictions.empty()) {
        std::vector<uint8_t> labels;
        std::vector<double> scores;
        Tensor<S> p = Tensor<S>::zeros({static_cast<int64_t>(out.predictions.size())});
        Tensor<uint8_t> y = Tensor<uint8_t>::zeros({static_cast<int64_t>(out.predictions.size())});
        Tensor<uint8_t> mask = Tensor<uint8_t>::full({static_cast<int64_t>(out.predictions.size())},
                                                     uint8_t{1});
        for (size_t i = 0; i < out.predictions.size(); ++i) {
            labels.push_back(label_of.at(out.predictions[i].first));
            scores.push_back(out.predictions[i].second);
            p[static_cast<int64_t>(i)] = static_cast<S>(out.predictions[i].second);
            y[static_cast<int64_t>(i)] = labels.back();
        }
        out.metrics.count = static_cast<int64_t>(out.predictions.size());
        out.metrics.loss = static_cast<double>(bce_loss(p, y, mask).loss);
        out.metrics.auc = auc(labels, scores);
        out.metrics.accuracy = accuracy(labels, scores);
    }
    return out;
}

}  // namespace ktf
