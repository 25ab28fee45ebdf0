#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <unordered_map>
#include <vector>

#include "ktf/streaming.hpp"
#include "support/synthetic.hpp"

using ktf::Model;
using ktf::ModelConfig;
using ktf::Rng;
using ktf::StreamEvent;
using ktf::UserSequence;

namespace {

ModelConfig sim_config(int64_t num_contents, int64_t num_tags) {
    ModelConfig c;
    c.d_model = 16;
    c.heads = 2;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.d_ff = 32;
    c.d_embed = 8;
    c.seq_len = 512;
    c.d_id = 8;
    c.d_part = 4;
    c.d_kind = 4;
    c.d_tag = 8;
    c.d_pop = 4;
    c.d_diff = 4;
    c.v_time = 50;
    c.v_stats = 20;
    c.lag_x_max = 10000000.0;
    c.pop_x_max = 1000.0;
    c.num_contents = num_contents;
    c.num_tags = num_tags;
    return c;
}

StreamEvent q(int64_t row, int64_t user, int64_t t, int64_t container, int32_t content = 1,
              int8_t ac = 2) {
    StreamEvent e;
    e.row_id = row;
    e.user_id = user;
    e.content = content;
    e.kind = ktf::kKindQuestion;
    e.timestamp = t;
    e.container = container;
    e.answered_correctly = ac;
    e.user_answer = 1;
    e.elapsed_ms = 500;
    e.had_explanation = 1;
    return e;
}

struct SimFixture {
    ktf::PreparedData catalog;
    ktf::ContentFeatures features;
    ModelConfig cfg;
    Rng model_rng;
    Model<double> model;
    std::vector<UserSequence> sequences;
    ktf::Split split;

    explicit SimFixture(uint64_t seed, int64_t users = 8, int64_t events = 40)
        : catalog(make_cat(seed)),
          features(ktf::build_content_features(catalog)),
          cfg(sim_config(catalog.num_questions + catalog.num_lectures, catalog.num_tags)),
          model_rng(Rng::derive(seed, {3})),
          model(cfg, model_rng) {
        Rng rng = Rng::derive(seed, {2});
        for (int64_t u = 0; u < users; ++u)
            sequences.push_back(ktf::test::make_user_events(catalog, 100 + u, events, rng));
        split = ktf::split_train_validation(sequences, 0.25, 0.3, 7);
    }

    static ktf::PreparedData make_cat(uint64_t seed) {
        Rng rng = Rng::derive(seed, {1});
        return ktf::test::make_catalog(25, 3, 8, rng);
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// grouping
// ---------------------------------------------------------------------------

TEST_CASE("greedy grouping chunks by the size cap", "[streaming]") {
    std::vector<StreamEvent> ev;
    for (int64_t i = 0; i < 10; ++i) ev.push_back(q(i, 100 + i, 1000 * i, i));
    auto groups = ktf::make_groups(ev, 4);
    REQUIRE(groups.size() == 3);
    CHECK(groups[0].rows.size() == 4);
    CHECK(groups[1].rows.size() == 4);
    CHECK(groups[2].rows.size() == 2);
    CHECK(groups[0].id == 0);
    CHECK(groups[2].id == 2);

    // answers live in the NEXT group's reveal, stripped from the rows
    CHECK(groups[0].reveal.empty());
    REQUIRE(groups[1].reveal.size() == 4);
    CHECK(groups[1].reveal[0].row_id == 0);
    CHECK(groups[1].reveal[0].answered_correctly == 2);
    for (const auto& g : groups)
        for (const auto& e : g.rows) {
            CHECK(e.answered_correctly == ktf::kAnsweredCorrectlyNA);
            CHECK(e.user_answer == ktf::kUserAnswerNA);
            CHECK(e.elapsed_ms == ktf::kElapsedNA);
        }
}

TEST_CASE("a bundle never straddles a group boundary", "[streaming]") {
    std::vector<StreamEvent> ev;
    ev.push_back(q(0, 101, 100, 0));
    ev.push_back(q(1, 102, 200, 0));
    ev.push_back(q(2, 103, 300, 0));
    // three-question bundle for user 104 would overflow a cap of 4
    ev.push_back(q(3, 104, 400, 7));
    ev.push_back(q(4, 104, 400, 7));
    ev.push_back(q(5, 104, 400, 7));
    auto groups = ktf::make_groups(ev, 4);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].rows.size() == 3);
    CHECK(groups[1].rows.size() == 3);
    for (const auto& e : groups[1].rows) CHECK(e.user_id == 104);
}

TEST_CASE("a bundle larger than the cap is rejected", "[streaming]") {
    std::vector<StreamEvent> ev;
    for (int64_t i = 0; i < 5; ++i) ev.push_back(q(i, 101, 400, 7));
    CHECK_THROWS_AS(ktf::make_groups(ev, 4), ktf::DataError);
}

TEST_CASE("one user never gets two bundles in a group", "[streaming]") {
    std::vector<StreamEvent> ev;
    ev.push_back(q(0, 101, 100, 0));
    ev.push_back(q(1, 101, 200, 1));
    ev.push_back(q(2, 102, 300, 0));
    auto groups = ktf::make_groups(ev, 10);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].rows.size() == 1);
    CHECK(groups[1].rows.size() == 2);  // 101's second bundle + 102's first
}

TEST_CASE("grouping rejects unsorted input and accepts empty input", "[streaming]") {
    CHECK(ktf::make_groups({}, 4).empty());
    std::vector<StreamEvent> ev;
    ev.push_back(q(0, 101, 500, 0));
    ev.push_back(q(1, 102, 100, 0));
    CHECK_THROWS_AS(ktf::make_groups(ev, 4), ktf::DataError);
}

// ---------------------------------------------------------------------------
// history buffers and reveals
// ---------------------------------------------------------------------------

TEST_CASE("the ring buffer evicts oldest-first at capacity", "[streaming]") {
    ktf::UserHistoryBuffer b;
    b.capacity = 5;
    for (int64_t i = 0; i < 9; ++i) b.append(q(i, 101, 100 * (i + 1), i));
    REQUIRE(b.size() == 5);
    CHECK(b.events.front().row_id == 4);
    CHECK(b.events.back().row_id == 8);
    for (size_t i = 1; i < b.events.size(); ++i)
        CHECK(b.events[i].timestamp >= b.events[i - 1].timestamp);
}

TEST_CASE("buffer lag recomputation matches the offline pipeline", "[streaming]") {
    SimFixture fx(21, 2, 60);
    const auto& s = fx.sequences[0];
    ktf::UserHistoryBuffer b;
    b.capacity = 1000;
    for (int64_t i = 0; i < s.size(); ++i) {
        auto e = ktf::event_at(s, i);
        const int64_t want = e.time_lag;
        e.time_lag = -777;  // the buffer must reconstruct it
        b.append(e);
        CHECK(b.events.back().time_lag == want);
    }
}

TEST_CASE("buffer rejects out-of-order appends", "[streaming]") {
    ktf::UserHistoryBuffer b;
    b.append(q(0, 101, 500, 0));
    CHECK_THROWS_AS(b.append(q(1, 101, 400, 1)), ktf::DataError);
}

TEST_CASE("reveals fill answers exactly once", "[streaming]") {
    ktf::SimulatorState state;
    auto e = q(7, 101, 100, 0);
    e.answered_correctly = ktf::kAnsweredCorrectlyNA;
    e.user_answer = ktf::kUserAnswerNA;
    e.elapsed_ms = ktf::kElapsedNA;
    e.had_explanation = ktf::kHadExplanationNA;
    state.buffer(101).append(e);

    ktf::RevealRow r;
    r.row_id = 7;
    r.user_id = 101;
    r.answered_correctly = 2;
    r.user_answer = 3;
    r.elapsed_ms = 1234;
    r.had_explanation = 2;
    ktf::apply_reveal(state, {r});
    CHECK(state.buffer(101).events.back().answered_correctly == 2);
    CHECK(state.buffer(101).events.back().user_answer == 3);
    CHECK(state.buffer(101).events.back().elapsed_ms == 1234);

    CHECK_THROWS_AS(ktf::apply_reveal(state, {r}), ktf::DataError);  // twice

    ktf::RevealRow unknown = r;
    unknown.row_id = 999;
    CHECK_THROWS_AS(ktf::apply_reveal(state, {unknown}), ktf::DataError);
    ktf::RevealRow nouser = r;
    nouser.user_id = 555;
    CHECK_THROWS_AS(ktf::apply_reveal(state, {nouser}), ktf::DataError);
}

// ---------------------------------------------------------------------------
// prediction
// ---------------------------------------------------------------------------

TEST_CASE("cold-start questions still get a probability", "[streaming]") {
    SimFixture fx(23, 2, 10);
    ktf::SimulatorState state;
    state.window_len = 16;
    ktf::StreamGroup g;
    g.id = 0;
    auto e = q(501, 777, 0, 0, 2);
    e.answered_correctly = ktf::kAnsweredCorrectlyNA;
    e.user_answer = ktf::kUserAnswerNA;
    e.elapsed_ms = ktf::kElapsedNA;
    e.had_explanation = ktf::kHadExplanationNA;
    g.rows.push_back(e);
    auto preds = ktf::predict_group(state, fx.model, fx.features, g);
    REQUIRE(preds.size() == 1);
    CHECK(preds[0].first == 501);
    CHECK(preds[0].second > 0.0);
    CHECK(preds[0].second < 1.0);
}

TEST_CASE("lecture-only groups predict nothing", "[streaming]") {
    SimFixture fx(25, 2, 10);
    ktf::SimulatorState state;
    state.window_len = 16;
    ktf::StreamGroup g;
    auto e = q(600, 888, 0, 0, static_cast<int32_t>(fx.catalog.num_questions + 1));
    e.kind = fx.catalog.contents[static_cast<size_t>(e.content)].kind;
    e.answered_correctly = ktf::kAnsweredCorrectlyNA;
    e.user_answer = ktf::kUserAnswerNA;
    e.elapsed_ms = ktf::kElapsedNA;
    e.had_explanation = ktf::kHadExplanationNA;
    g.rows.push_back(e);
    auto preds = ktf::predict_group(state, fx.model, fx.features, g);
    CHECK(preds.empty());
    CHECK(state.buffer(888).size() == 1);  // the lecture still enters the history
}

TEST_CASE("the simulation emits one row per held-out question", "[streaming]") {
    SimFixture fx(27);
    auto sim = ktf::run_simulation(fx.model, fx.features, fx.split, 10, 512);
    int64_t expect = 0;
    for (size_t v = 0; v < fx.split.validation.size(); ++v) {
        const auto& s = fx.split.validation[v];
        for (int64_t i = fx.split.score_from[v]; i < s.size(); ++i)
            if (s.kind[static_cast<size_t>(i)] == ktf::kKindQuestion) ++expect;
    }
    CHECK(static_cast<int64_t>(sim.predictions.size()) == expect);
    CHECK(sim.metrics.count == expect);
    for (const auto& [row, p] : sim.predictions) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
    CHECK(sim.group_offsets.size() > 1);
}

TEST_CASE("streaming probabilities match offline forward passes", "[streaming]") {
    SimFixture fx(29);
    auto sim = ktf::run_simulation(fx.model, fx.features, fx.split, 10, 512);
    std::unordered_map<int64_t, double> stream_prob(sim.predictions.begin(),
                                                    sim.predictions.end());

    // offline: one end-aligned window per user (everything fits in 512)
    double max_gap = 0.0;
    for (size_t v = 0; v < fx.split.validation.size(); ++v) {
        const auto& s = fx.split.validation[v];
        REQUIRE(s.size() <= 512);
        std::vector<ktf::TrainingWindow> ws{ktf::make_padded_window(s, 0, s.size(), 512)};
        auto batch = ktf::assemble_batch<double>(ws);
        ktf::ForwardCache<double> cache;
        auto probs = ktf::model_forward(fx.model, fx.features, batch, cache);
        for (int64_t i = fx.split.score_from[v]; i < s.size(); ++i) {
            if (s.kind[static_cast<size_t>(i)] != ktf::kKindQuestion) continue;
            const auto row = s.row_id[static_cast<size_t>(i)];
            REQUIRE(stream_prob.count(row) == 1);
            max_gap = std::max(max_gap, std::abs(stream_prob[row] - probs[i]));
        }
    }
    CHECK(max_gap < 1e-5);

    // and the aggregate AUC agrees with the offline evaluation path
    auto offline = ktf::evaluate_split(fx.model, fx.features, fx.split.validation,
                                       fx.split.score_from, 512, 4);
    CHECK(std::abs(offline.auc - sim.metrics.auc) <= 0.005);
    CHECK(offline.count == sim.metrics.count);
}

TEST_CASE("predictions never peek at unrevealed answers", "[streaming]") {
    SimFixture fx(31);
    auto base = ktf::run_simulation(fx.model, fx.features, fx.split, 10, 512);
    REQUIRE(base.group_offsets.size() >= 4);

    Rng rng(5);
    bool any_later_diff = false;
    for (int probe = 0; probe < 5; ++probe) {
        const auto g0 = static_cast<size_t>(
            rng.uniform_int(1, static_cast<int64_t>(base.group_offsets.size()) / 2));

        // rebuild the groups to learn which rows sit in groups >= g0
        std::vector<StreamEvent> held;
        for (size_t v = 0; v < fx.split.validation.size(); ++v)
            for (int64_t i = fx.split.score_from[v]; i < fx.split.validation[v].size(); ++i)
                held.push_back(ktf::event_at(fx.split.validation[v], i));
        std::stable_sort(held.begin(), held.end(), [](const StreamEvent& a, const StreamEvent& b) {
            if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
            if (a.user_id != b.user_id) return a.user_id < b.user_id;
            if (a.container != b.container) return a.container < b.container;
            return a.row_id < b.row_id;
        });
        auto groups = ktf::make_groups(held, 10);
        std::vector<int64_t> late_rows;
        for (size_t g = g0; g < groups.size(); ++g)
            for (const auto& e : groups[g].rows) late_rows.push_back(e.row_id);

        // flip every answer field of the late rows in the validation data
        auto perturbed = fx.split;
        for (size_t v = 0; v < perturbed.validation.size(); ++v) {
            auto& s = perturbed.validation[v];
            for (size_t i = 0; i < s.row_id.size(); ++i) {
                if (std::find(late_rows.begin(), late_rows.end(), s.row_id[i]) == late_rows.end())
                    continue;
                if (s.kind[i] != ktf::kKindQuestion) continue;
                s.answered_correctly[i] = s.answered_correctly[i] == 2 ? 1 : 2;
                s.user_answer[i] = static_cast<int8_t>(1 + (s.user_answer[i] % 5));
                s.elapsed_ms[i] = s.elapsed_ms[i] == ktf::kElapsedNA ? 999 : ktf::kElapsedNA;
                s.had_explanation[i] = static_cast<int8_t>(1 + (s.had_explanation[i] % 3));
            }
        }

        auto other = ktf::run_simulation(fx.model, fx.features, perturbed, 10, 512);
        REQUIRE(other.group_offsets == base.group_offsets);
        // everything predicted in groups <= g0 is bit-identical
        const auto upto = static_cast<size_t>(g0 + 1 < base.group_offsets.size()
                                                  ? base.group_offsets[g0 + 1]
                                                  : static_cast<int64_t>(base.predictions.size()));
        for (size_t i = 0; i < upto; ++i) {
            CHECK(base.predictions[i].first == other.predictions[i].first);
            CHECK(std::memcmp(&base.predictions[i].second, &other.predictions[i].second,
                              sizeof(double)) == 0);
        }
        for (size_t i = upto; i < base.predictions.size(); ++i)
            any_later_diff =
                any_later_diff || base.predictions[i].second != other.predictions[i].second;
    }
    // the probes must actually bite somewhere downstream
    CHECK(any_later_diff);
}

TEST_CASE("simulation is deterministic across runs", "[streaming]") {
    SimFixture fx(33);
    auto a = ktf::run_simulation(fx.model, fx.features, fx.split, 10, 512);
    auto b = ktf::run_simulation(fx.model, fx.features, fx.split, 10, 512);
    REQUIRE(a.predictions.size() == b.predictions.size());
    for (size_t i = 0; i < a.predictions.size(); ++i) {
        CHECK(a.predictions[i].first == b.predictions[i].first);
        CHECK(std::memcmp(&a.predictions[i].second, &b.predictions[i].second, sizeof(double)) ==
              0);
    }
}

TEST_CASE("window truncation keeps the stream running", "[streaming]") {
    SimFixture fx(35, 4, 50);
    auto sim = ktf::run_simulation(fx.model, fx.features, fx.split, 10, 16);
    int64_t expect = 0;
    for (size_t v = 0; v < fx.split.validation.size(); ++v)
        for (int64_t i = fx.split.score_from[v]; i < fx.split.validation[v].size(); ++i)
            if (fx.split.validation[v].kind[static_cast<size_t>(i)] == ktf::kKindQuestion)
                ++expect;
    CHECK(static_cast<int64_t>(sim.predictions.size()) == expect);
    for (const auto& [row, p] : sim.predictions) CHECK(std::isfinite(p));
}
