#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ktf/checkpoint.hpp"
#include "ktf/metrics.hpp"
#include "ktf/model.hpp"
#include "ktf/optim.hpp"
#include "ktf/windows.hpp"

namespace ktf {

struct TrainConfig {
    int64_t batch_size = 64;
    int64_t seq_len = 1024;
    LrSchedule lr;
    uint64_t seed = 1;
    int64_t epochs = 1;
    int64_t max_steps = 0;        // 0 = run the configured epochs out
    int64_t eval_every = 0;       // steps between validation passes; 0 = end of run only
    int64_t eval_seq_len = 512;   // train long, infer short
    int64_t eval_batch_size = 16;
    int64_t patience = 3;         // evals without AUC gain before stopping; 0 disables
    double clip_norm = 1.0;       // gradient global-norm cap; 0 disables

    void validate() const {
        lr.validate();
        if (batch_size < 1 || seq_len < 1 || epochs < 1 || eval_seq_len < 1 ||
            eval_batch_size < 1)
            throw ConfigError("train config: batch/sequence/epoch sizes must be positive");
        if (max_steps < 0 || eval_every < 0 || patience < 0 || clip_norm < 0.0)
            throw ConfigError("train config: max_steps, eval_every, patience and clip_norm "
                              "must be non-negative");
    }
};

// ---------------------------------------------------------------------------
// validation split: some users leave training entirely ("new users"), the
// rest donate a tail of their latest events ("future interactions"). A
// validation entry keeps the user's FULL sequence; score_from marks the first
// held-out event, so evaluation can condition on the history the way the
// streaming replay does.
// ---------------------------------------------------------------------------

struct Split {
    std::vector<UserSequence> train;       // heads only; never overlaps held-out rows
    std::vector<UserSequence> validation;  // full sequences of users with held-out rows
    std::vector<int64_t> score_from;       // parallel to validation

    int64_t held_out_rows() const {
        int64_t n = 0;
        for (size_t i = 0; i < validation.size(); ++i)
            n += validation[i].size() - score_from[i];
        return n;
    }
};

namespace detail {

inline UserSequence slice_user(const UserSequence& s, int64_t begin, int64_t end) {
    UserSequence out;
    out.user_id = s.user_id;
    const auto b = static_cast<size_t>(begin);
    const auto e = static_cast<size_t>(end);
    out.row_id.assign(s.row_id.begin() + b, s.row_id.begin() + e);
    out.content.assign(s.content.begin() + b, s.content.begin() + e);
    out.kind.assign(s.kind.begin() + b, s.kind.begin() + e);
    out.timestamp.assign(s.timestamp.begin() + b, s.timestamp.begin() + e);
    out.container.assign(s.container.begin() + b, s.container.begin() + e);
    out.time_lag.assign(s.time_lag.begin() + b, s.time_lag.begin() + e);
    out.answered_correctly.assign(s.answered_correctly.begin() + b,
                                  s.answered_correctly.begin() + e);
    out.user_answer.assign(s.user_answer.begin() + b, s.user_answer.begin() + e);
    out.elapsed_ms.assign(s.elapsed_ms.begin() + b, s.elapsed_ms.begin() + e);
    out.had_explanation.assign(s.had_explanation.begin() + b, s.had_explanation.begin() + e);
    return out;
}

// move a boundary down to its bundle start so no bundle straddles the cut
inline int64_t snap_to_bundle_start(const UserSequence& s, int64_t b) {
    while (b > 0 && b < s.size() &&
           s.timestamp[static_cast<size_t>(b)] == s.timestamp[static_cast<size_t>(b - 1)] &&
           s.container[static_cast<size_t>(b)] == s.container[static_cast<size_t>(b - 1)])
        --b;
    return b;
}

}  // namespace detail

inline Split split_train_validation(const std::vector<UserSequence>& sequences,
                                    double holdout_fraction, double new_user_fraction,
                                    uint64_t seed) {
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0) ||
        !(new_user_fraction >= 0.0 && new_user_fraction < 1.0))
        throw ConfigError("split fractions must lie in [0, 1)");

    Split out;
    int64_t total = 0;
    for (const auto& s : sequences) total += s.size();
    const int64_t target = std::llround(holdout_fraction * static_cast<double>(total));
    if (target == 0) {
        out.train = sequences;
        return out;
    }

    const auto n_users = static_cast<int64_t>(sequences.size());
    std::vector<int64_t> order(static_cast<size_t>(n_users));
    for (int64_t i = 0; i < n_users; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng = Rng::derive(seed, {11});
    for (int64_t i = n_users - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)],
                  order[static_cast<size_t>(rng.uniform_int(0, i))]);

    // new users first: held out of training entirely, scored on their tail
    const int64_t new_budget = std::llround(new_user_fraction * static_cast<double>(target));
    std::vector<uint8_t> is_new(static_cast<size_t>(n_users), 0);
    int64_t new_rows = 0;
    for (int64_t k = 0; k < n_users && new_rows < new_budget; ++k) {
        const auto& s = sequences[static_cast<size_t>(order[static_cast<size_t>(k)])];
        if (s.size() == 0) continue;
        is_new[static_cast<size_t>(order[static_cast<size_t>(k)])] = 1;
        int64_t b = s.size() - std::min(s.size(), new_budget - new_rows);
        b = detail::snap_to_bundle_start(s, b);
        out.validation.push_back(s);
        out.score_from.push_back(b);
        new_rows += s.size() - b;
    }

    // continuing users donate proportional tails covering the rest of target
    int64_t remaining_total = 0;
    for (int64_t i = 0; i < n_users; ++i)
        if (!is_new[static_cast<size_t>(i)]) remaining_total += sequences[static_cast<size_t>(i)].size();
    const int64_t tail_rows = std::max<int64_t>(target - new_rows, 0);
    const double tail_frac =
        remaining_total > 0 ? static_cast<double>(tail_rows) / static_cast<double>(remaining_total)
                            : 0.0;
    for (int64_t i = 0; i < n_users; ++i) {
        if (is_new[static_cast<size_t>(i)]) continue;
        const auto& s = sequences[static_cast<size_t>(i)];
        const int64_t n = s.size();
        if (n == 0) continue;
        int64_t k = std::llround(tail_frac * static_cast<double>(n));
        if (k <= 0) {
            out.train.push_back(s);
            continue;
        }
        int64_t b = detail::snap_to_bundle_start(s, n - std::min(k, n));
        if (b == 0) {  // the whole sequence became a tail; treat as a new user
            out.validation.push_back(s);
            out.score_from.push_back(0);
            continue;
        }
        out.train.push_back(detail::slice_user(s, 0, b));
        out.validation.push_back(s);
        out.score_from.push_back(b);
    }
    return out;
}

// ---------------------------------------------------------------------------
// deterministic epoch construction: window phases and the shuffle are a pure
// function of (seed, epoch), so a resumed run rebuilds the same batch order.
// ---------------------------------------------------------------------------

inline std::vector<TrainingWindow> epoch_windows(const std::vector<UserSequence>& train,
                                                 int64_t L, uint64_t seed, int64_t epoch) {
    Rng rng = Rng::derive(seed, {0x77, static_cast<uint64_t>(epoch)});
    std::vector<TrainingWindow> ws;
    for (const auto& s : train) {
        auto u = window_sequence(s, L, rng);
        for (auto& w : u) ws.push_back(std::move(w));
    }
    for (int64_t i = static_cast<int64_t>(ws.size()) - 1; i > 0; --i)
        std::swap(ws[static_cast<size_t>(i)], ws[static_cast<size_t>(rng.uniform_int(0, i))]);
    return ws;
}

template <typename S>
struct StepResult {
    double loss = 0.0;
    double grad_norm = 0.0;
    int64_t count = 0;  // positions contributing to the loss
};

// one optimizer step: zero grads, forward+backward, clip, check, Adam, clamp
template <typename S>
StepResult<S> train_step(Model<S>& m, const ContentFeatures& f, const Batch<S>& batch,
                         AdamState<S>& adam, double lr, double clip_norm) {
    auto params = m.parameters();
    zero_grads(params);
    ForwardCache<S> cache;
    const auto r = model_loss_and_backward(m, f, batch, cache);
    StepResult<S> out;
    out.loss = static_cast<double>(r.loss);
    out.count = r.count;
    out.grad_norm = clip_global_norm(params, clip_norm);
    // the BCE clamp keeps the loss finite even when activations go NaN, so the
    // gradient norm is the sentinel that actually trips on numeric blowups
    if (!std::isfinite(out.loss) || !std::isfinite(out.grad_norm))
        throw NumericError("non-finite loss or gradient (loss=" + std::to_string(out.loss) +
                           ", lr=" + std::to_string(lr) +
                           ", grad_norm=" + std::to_string(out.grad_norm) + ")");
    adam_step(params, adam, lr);
    m.clamp_decay();
    return out;
}

// ---------------------------------------------------------------------------
// evaluation: end-aligned windows over each validation user's full sequence,
// scoring only held-out question rows. End alignment gives the held-out tail
// maximal left context; whenever the user fits in one window, every scored
// position sees the entire history.
// ---------------------------------------------------------------------------

template <typename S>
MetricsReport evaluate_split(Model<S>& m, const ContentFeatures& f,
                             const std::vector<UserSequence>& validation,
                             const std::vector<int64_t>& score_from, int64_t L,
                             int64_t batch_size) {
    std::unordered_set<int64_t> scored;
    for (size_t u = 0; u < validation.size(); ++u)
        for (int64_t i = score_from[u]; i < validation[u].size(); ++i)
            scored.insert(validation[u].row_id[static_cast<size_t>(i)]);

    std::vector<TrainingWindow> ws;
    for (size_t u = 0; u < validation.size(); ++u) {
        const auto& s = validation[u];
        for (int64_t end = s.size(); end > score_from[u]; end -= L)
            ws.push_back(make_padded_window(s, std::max<int64_t>(end - L, 0), end, L));
    }

    std::vector<uint8_t> labels;
    std::vector<double> probs;
    double loss_sum = 0.0;
    int64_t count = 0;
    for (size_t at = 0; at < ws.size(); at += static_cast<size_t>(batch_size)) {
        const auto hi = std::min(ws.size(), at + static_cast<size_t>(batch_size));
        std::vector<TrainingWindow> chunk(ws.begin() + static_cast<std::ptrdiff_t>(at),
                                          ws.begin() + static_cast<std::ptrdiff_t>(hi));
        auto batch = assemble_batch<S>(chunk);
        for (int64_t i = 0; i < batch.loss_mask.size(); ++i)
            if (batch.loss_mask[i] && !scored.count(batch.row_id[static_cast<size_t>(i)]))
                batch.loss_mask[i] = 0;

        ForwardCache<S> cache;
        auto p = model_forward(m, f, batch, cache);
        const auto r = bce_loss(p, batch.label, batch.loss_mask);
        loss_sum += static_cast<double>(r.loss) * static_cast<double>(r.count);
        count += r.count;
        for (int64_t i = 0; i < batch.loss_mask.size(); ++i) {
            if (!batch.loss_mask[i]) continue;
            labels.push_back(batch.label[i]);
            probs.push_back(static_cast<double>(p[i]));
        }
    }

    MetricsReport rep;
    rep.count = count;
    if (count == 0) return rep;
    rep.loss = loss_sum / static_cast<double>(count);
    rep.auc = auc(labels, probs);
    rep.accuracy = accuracy(labels, probs);
    return rep;
}

// ---------------------------------------------------------------------------
// the training loop
// ---------------------------------------------------------------------------

struct MetricsRow {
    int64_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_auc = 0.0;
    double val_acc = 0.0;
};

inline constexpr const char* kMetricsHeader = "step\tlr\ttrain_loss\tval_loss\tval_auc\tval_acc";

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%lld\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g",
                  static_cast<long long>(r.step), r.lr, r.train_loss, r.val_loss, r.val_auc,
                  r.val_acc);
    os << buf << '\n';
}

struct TrainOutcome {
    TrainerState state;
    std::vector<MetricsRow> history;
    MetricsReport final_metrics;
    bool early_stopped = false;
};

// Runs from the position recorded in `ts` (zero-initialized = fresh start;
// pass the state loaded from a checkpoint to resume bit-exactly). `adam` must
// already be initialized over m.parameters() or restored from the checkpoint.
template <typename S>
TrainOutcome train_model(Model<S>& m, const ContentFeatures& f, const Split& split,
                         const TrainConfig& tc, AdamState<S>& adam, TrainerState ts,
                         std::ostream* metrics_log = nullptr) {
    tc.validate();
    const bool has_val = !split.validation.empty();

    TrainOutcome out;
    double loss_sum = 0.0;
    int64_t loss_batches = 0;
    bool stop = false;
    int64_t last_eval_step = -1;

    auto run_eval = [&](double lr) {
        auto rep = evaluate_split(m, f, split.validation, split.score_from, tc.eval_seq_len,
                                  tc.eval_batch_size);
        MetricsRow row;
        row.step = ts.step;
        row.lr = lr;
        row.train_loss = loss_batches > 0 ? loss_sum / static_cast<double>(loss_batches) : 0.0;
        row.val_loss = rep.loss;
        row.val_auc = rep.auc;
        row.val_acc = rep.accuracy;
        loss_sum = 0.0;
        loss_batches = 0;
        out.history.push_back(row);
        if (metrics_log) write_metrics_row(*metrics_log, row);
        out.final_metrics = rep;
        last_eval_step = ts.step;
        if (rep.auc > ts.best_val_auc) {
            ts.best_val_auc = rep.auc;
            ts.evals_since_best = 0;
        } else if (tc.patience > 0 && ++ts.evals_since_best >= tc.patience) {
            out.early_stopped = true;
            stop = true;
        }
    };

    double lr = 0.0;
    while (ts.epoch < tc.epochs && !stop) {
        auto ws = epoch_windows(split.train, tc.seq_len, tc.seed, ts.epoch);
        const auto nw = static_cast<int64_t>(ws.size());
        const int64_t nb = (nw + tc.batch_size - 1) / tc.batch_size;
        while (ts.batch_index < nb && !stop) {
            const int64_t lo = ts.batch_index * tc.batch_size;
            const int64_t hi = std::min(lo + tc.batch_size, nw);
            std::vector<TrainingWindow> chunk(ws.begin() + lo, ws.begin() + hi);
            auto batch = assemble_batch<S>(chunk);

            lr = lr_at_step(ts.step + 1, tc.lr);
            try {
                const auto sr = train_step(m, f, batch, adam, lr, tc.clip_norm);
                loss_sum += sr.loss;
                loss_batches += 1;
            } catch (const NumericError& e) {
                throw NumericError("training aborted at step " + std::to_string(ts.step + 1) +
                                   ": " + e.what());
            }
            ts.step += 1;
            ts.batch_index += 1;
            if (has_val && tc.eval_every > 0 && ts.step % tc.eval_every == 0) run_eval(lr);
            if (tc.max_steps > 0 && ts.step >= tc.max_steps) stop = true;
        }
        if (ts.batch_index >= nb) {
            ts.epoch += 1;
            ts.batch_index = 0;
        }
    }
    if (has_val && last_eval_step != ts.step) run_eval(lr);
    out.state = ts;
    return out;
}

}  // namespace ktf
