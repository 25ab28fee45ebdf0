#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ktf/csv.hpp"
#include "ktf/errors.hpp"

namespace ktf {

// ---------------------------------------------------------------------------
// raw records
// ---------------------------------------------------------------------------

struct RawInteraction {
    int64_t row_id = 0;
    int64_t timestamp = 0;  // ms since the user's first event
    int64_t user_id = 0;
    int64_t content_id = 0;
    bool is_lecture = false;
    int64_t task_container_id = 0;
    std::optional<int> user_answer;          // 0..3
    std::optional<int> answered_correctly;   // 0/1
    std::optional<int64_t> prior_elapsed_ms; // describes the previous bundle
    std::optional<bool> prior_had_explanation;
};

enum class LectureKind { Concept, Intention, SolvingQuestion, Starter };

struct QuestionMeta {
    int64_t question_id = 0;
    int64_t bundle_id = 0;
    int correct_answer = 0;
    int part = 0;  // 1..7
    std::vector<int> tags;
};

struct LectureMeta {
    int64_t lecture_id = 0;
    int tag = 0;
    int part = 0;
    LectureKind kind = LectureKind::Concept;
};

// ---------------------------------------------------------------------------
// categorical layouts. Index 0 is padding in every map; each field has its
// own N/A index instead of reusing pad.
// ---------------------------------------------------------------------------

inline constexpr int8_t kPadIndex = 0;

// answered_correctly: 0→1, 1→2, N/A→3
inline constexpr int kAnsweredCorrectlyCount = 4;
inline constexpr int8_t kAnsweredCorrectlyNA = 3;
inline int8_t encode_answered_correctly(std::optional<int> v) {
    if (!v) return kAnsweredCorrectlyNA;
    if (*v != 0 && *v != 1) throw DataError("answered_correctly outside {0,1}");
    return static_cast<int8_t>(*v + 1);
}
inline std::optional<int> decode_answered_correctly(int8_t idx) {
    if (idx == 1 || idx == 2) return idx - 1;
    return std::nullopt;
}

// user_answer: 0..3→1..4, N/A→5
inline constexpr int kUserAnswerCount = 6;
inline constexpr int8_t kUserAnswerNA = 5;
inline int8_t encode_user_answer(std::optional<int> v) {
    if (!v) return kUserAnswerNA;
    if (*v < 0 || *v > 3) throw DataError("user_answer outside 0..3");
    return static_cast<int8_t>(*v + 1);
}
inline std::optional<int> decode_user_answer(int8_t idx) {
    if (idx >= 1 && idx <= 4) return idx - 1;
    return std::nullopt;
}

// had_explanation: false→1, true→2, N/A→3
inline constexpr int kHadExplanationCount = 4;
inline constexpr int8_t kHadExplanationNA = 3;
inline int8_t encode_had_explanation(std::optional<bool> v) {
    if (!v) return kHadExplanationNA;
    return static_cast<int8_t>(*v ? 2 : 1);
}
inline std::optional<bool> decode_had_explanation(int8_t idx) {
    if (idx == 1) return false;
    if (idx == 2) return true;
    return std::nullopt;
}

// content kind: question→1, lecture types alphabetically→2..5, N/A→6
inline constexpr int kKindCount = 7;
inline constexpr int8_t kKindQuestion = 1;
inline constexpr int8_t kKindNA = 6;
inline int8_t encode_kind(LectureKind k) { return static_cast<int8_t>(2 + static_cast<int>(k)); }

// part: raw 1..7 kept as-is, N/A→8
inline constexpr int kPartCount = 9;
inline constexpr int8_t kPartNA = 8;
inline int8_t encode_part(int part) {
    if (part < 1 || part > 7) throw DataError("part outside 1..7: " + std::to_string(part));
    return static_cast<int8_t>(part);
}

// elapsed-time N/A sentinel in encoded sequences (real values are >= 0 ms)
inline constexpr int64_t kElapsedNA = -1;

// ---------------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------------

inline std::vector<RawInteraction> parse_interactions(const std::string& path) {
    static const std::vector<std::string> kHeader = {
        "row_id",      "timestamp",   "user_id",
        "content_id",  "content_type_id", "task_container_id",
        "user_answer", "answered_correctly", "prior_question_elapsed_time",
        "prior_question_had_explanation"};
    CsvTable t = read_csv(path, kHeader);

    std::vector<RawInteraction> out;
    out.reserve(t.rows.size());
    for (const auto& cells : t.rows) {
        RawInteraction r;
        const std::string rid = cells[0];
        auto where = [&](const char* col) { return path + " row_id=" + rid + " column " + col; };
        r.row_id = parse_i64(cells[0], path + " column row_id");
        r.timestamp = parse_i64(cells[1], where("timestamp"));
        if (r.timestamp < 0) throw DataError(where("timestamp") + ": negative");
        r.user_id = parse_i64(cells[2], where("user_id"));
        r.content_id = parse_i64(cells[3], where("content_id"));
        const int64_t ctype = parse_i64(cells[4], where("content_type_id"));
        if (ctype != 0 && ctype != 1) throw DataError(where("content_type_id") + ": must be 0 or 1");
        r.is_lecture = ctype == 1;
        r.task_container_id = parse_i64(cells[5], where("task_container_id"));
        if (!is_na_cell(cells[6]))
            r.user_answer = static_cast<int>(parse_i64(cells[6], where("user_answer")));
        if (!is_na_cell(cells[7]))
            r.answered_correctly =
                static_cast<int>(parse_i64(cells[7], where("answered_correctly")));
        if (!is_na_cell(cells[8]))
            r.prior_elapsed_ms = parse_i64(cells[8], where("prior_question_elapsed_time"));
        if (!is_na_cell(cells[9]))
            r.prior_had_explanation =
                parse_bool(cells[9], where("prior_question_had_explanation"));
        if (r.is_lecture) {
            // lecture rows carry no answers regardless of sentinels in the file
            r.user_answer.reset();
            r.answered_correctly.reset();
        } else {
            if (r.user_answer && (*r.user_answer < 0 || *r.user_answer > 3))
                throw DataError(where("user_answer") + ": outside 0..3");
            if (r.answered_correctly && (*r.answered_correctly != 0 && *r.answered_correctly != 1))
                throw DataError(where("answered_correctly") + ": outside {0,1}");
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline LectureKind parse_lecture_kind(const std::string& s, const std::string& where) {
    if (s == "concept") return LectureKind::Concept;
    if (s == "intention") return LectureKind::Intention;
    if (s == "solving question") return LectureKind::SolvingQuestion;
    if (s == "starter") return LectureKind::Starter;
    throw DataError(where + ": unknown type_of '" + s + "'");
}

inline std::pair<std::vector<QuestionMeta>, std::vector<LectureMeta>> parse_metadata(
    const std::string& questions_path, const std::string& lectures_path) {
    static const std::vector<std::string> kQHeader = {"question_id", "bundle_id", "correct_answer",
                                                      "part", "tags"};
    static const std::vector<std::string> kLHeader = {"lecture_id", "tag", "part", "type_of"};

    CsvTable qt = read_csv(questions_path, kQHeader);
    std::vector<QuestionMeta> questions;
    questions.reserve(qt.rows.size());
    std::unordered_map<int64_t, bool> seen_q;
    for (const auto& cells : qt.rows) {
        QuestionMeta q;
        const std::string where = questions_path + " question_id=" + cells[0];
        q.question_id = parse_i64(cells[0], questions_path + " column question_id");
        if (!seen_q.emplace(q.question_id, true).second)
            throw DataError(where + ": duplicate question_id");
        q.bundle_id = parse_i64(cells[1], where + " column bundle_id");
        q.correct_answer = static_cast<int>(parse_i64(cells[2], where + " column correct_answer"));
        q.part = static_cast<int>(parse_i64(cells[3], where + " column part"));
        if (q.part < 1 || q.part > 7) throw DataError(where + ": part outside 1..7");
        // tags: space-separated, possibly empty
        const std::string& tags = cells[4];
        size_t start = 0;
        while (start < tags.size()) {
            size_t sp = tags.find(' ', start);
            if (sp == std::string::npos) sp = tags.size();
            if (sp > start)
                q.tags.push_back(
                    static_cast<int>(parse_i64(tags.substr(start, sp - start), where + " tags")));
            start = sp + 1;
        }
        questions.push_back(std::move(q));
    }

    CsvTable lt = read_csv(lectures_path, kLHeader);
    std::vector<LectureMeta> lectures;
    lectures.reserve(lt.rows.size());
    std::unordered_map<int64_t, bool> seen_l;
    for (const auto& cells : lt.rows) {
        LectureMeta l;
        const std::string where = lectures_path + " lecture_id=" + cells[0];
        l.lecture_id = parse_i64(cells[0], lectures_path + " column lecture_id");
        if (!seen_l.emplace(l.lecture_id, true).second)
            throw DataError(where + ": duplicate lecture_id");
        l.tag = static_cast<int>(parse_i64(cells[1], where + " column tag"));
        l.part = static_cast<int>(parse_i64(cells[2], where + " column part"));
        if (l.part < 1 || l.part > 7) throw DataError(where + ": part outside 1..7");
        l.kind = parse_lecture_kind(cells[3], where);
        lectures.push_back(std::move(l));
    }
    return {std::move(questions), std::move(lectures)};
}

// ---------------------------------------------------------------------------
// encodings: dense content indices (questions first, then lectures, each
// sorted by raw id, starting at 1) and the tag vocabulary.
// ---------------------------------------------------------------------------

struct EncodingMaps {
    // raw ids in index order: questions occupy 1..Q, lectures Q+1..Q+L
    std::vector<int64_t> question_ids;  // sorted
    std::vector<int64_t> lecture_ids;   // sorted
    std::unordered_map<int64_t, int32_t> question_index;
    std::unordered_map<int64_t, int32_t> lecture_index;
    std::vector<int> tag_values;  // sorted raw tags; index i ↔ encoded i+1
    std::unordered_map<int, int32_t> tag_index;

    int64_t num_questions() const { return static_cast<int64_t>(question_ids.size()); }
    int64_t num_lectures() const { return static_cast<int64_t>(lecture_ids.size()); }
    int64_t num_contents() const { return num_questions() + num_lectures(); }
    int64_t num_tags() const { return static_cast<int64_t>(tag_values.size()); }
    int32_t tag_na() const { return static_cast<int32_t>(num_tags() + 1); }

    int32_t content_of_question(int64_t question_id) const {
        auto it = question_index.find(question_id);
        if (it == question_index.end())
            throw DataError("unknown question content_id " + std::to_string(question_id));
        return it->second;
    }
    int32_t content_of_lecture(int64_t lecture_id) const {
        auto it = lecture_index.find(lecture_id);
        if (it == lecture_index.end())
            throw DataError("unknown lecture content_id " + std::to_string(lecture_id));
        return it->second;
    }
    bool index_is_question(int32_t content) const {
        return content >= 1 && content <= num_questions();
    }
    int64_t raw_id_of(int32_t content) const {
        if (index_is_question(content)) return question_ids[static_cast<size_t>(content - 1)];
        const int64_t li = content - 1 - num_questions();
        if (li < 0 || li >= num_lectures())
            throw DataError("content index out of range: " + std::to_string(content));
        return lecture_ids[static_cast<size_t>(li)];
    }
    int32_t encode_tag(int raw_tag) const {
        auto it = tag_index.find(raw_tag);
        if (it == tag_index.end()) throw DataError("unknown tag " + std::to_string(raw_tag));
        return it->second;
    }
};

inline EncodingMaps build_encodings(const std::vector<QuestionMeta>& questions,
                                    const std::vector<LectureMeta>& lectures) {
    EncodingMaps enc;
    enc.question_ids.reserve(questions.size());
    for (const auto& q : questions) enc.question_ids.push_back(q.question_id);
    std::sort(enc.question_ids.begin(), enc.question_ids.end());
    for (size_t i = 0; i < enc.question_ids.size(); ++i)
        enc.question_index[enc.question_ids[i]] = static_cast<int32_t>(i + 1);

    enc.lecture_ids.reserve(lectures.size());
    for (const auto& l : lectures) enc.lecture_ids.push_back(l.lecture_id);
    std::sort(enc.lecture_ids.begin(), enc.lecture_ids.end());
    const int32_t base = static_cast<int32_t>(enc.question_ids.size());
    for (size_t i = 0; i < enc.lecture_ids.size(); ++i)
        enc.lecture_index[enc.lecture_ids[i]] = base + static_cast<int32_t>(i + 1);

    // tag vocabulary spans question tag lists and lecture tags
    std::vector<int> tags;
    for (const auto& q : questions) tags.insert(tags.end(), q.tags.begin(), q.tags.end());
    for (const auto& l : lectures) tags.push_back(l.tag);
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    enc.tag_values = std::move(tags);
    for (size_t i = 0; i < enc.tag_values.size(); ++i)
        enc.tag_index[enc.tag_values[i]] = static_cast<int32_t>(i + 1);
    return enc;
}

// ---------------------------------------------------------------------------
// per-question stats over the train table
// ---------------------------------------------------------------------------

struct ContentStats {
    // indexed by question content index (1..Q); slot 0 unused
    std::vector<int64_t> popularity;
    std::vector<double> difficulty;
};

inline ContentStats empty_stats(int64_t num_questions) {
    ContentStats s;
    s.popularity.assign(static_cast<size_t>(num_questions + 1), 0);
    s.difficulty.assign(static_cast<size_t>(num_questions + 1), 0.5);
    return s;
}

inline ContentStats compute_content_stats(const std::vector<RawInteraction>& interactions,
                                          const EncodingMaps& enc) {
    ContentStats s = empty_stats(enc.num_questions());
    std::vector<int64_t> incorrect(static_cast<size_t>(enc.num_questions() + 1), 0);
    for (const auto& r : interactions) {
        if (r.is_lecture) continue;
        const int32_t c = enc.content_of_question(r.content_id);
        s.popularity[static_cast<size_t>(c)] += 1;
        if (r.answered_correctly && *r.answered_correctly == 0)
            incorrect[static_cast<size_t>(c)] += 1;
    }
    for (size_t i = 1; i < s.popularity.size(); ++i) {
        const int64_t attempts = s.popularity[i];
        s.difficulty[i] =
            static_cast<double>(incorrect[i] + 1) / static_cast<double>(attempts + 2);
    }
    return s;
}

// ---------------------------------------------------------------------------
// per-user sequences
// ---------------------------------------------------------------------------

struct UserSequence {
    int64_t user_id = 0;
    std::vector<int64_t> row_id;
    std::vector<int32_t> content;
    std::vector<int8_t> kind;
    std::vector<int64_t> timestamp;
    std::vector<int64_t> container;
    std::vector<int64_t> time_lag;
    std::vector<int8_t> answered_correctly;
    std::vector<int8_t> user_answer;
    std::vector<int64_t> elapsed_ms;  // kElapsedNA where unknown
    std::vector<int8_t> had_explanation;

    int64_t size() const { return static_cast<int64_t>(content.size()); }

    bool operator==(const UserSequence& o) const {
        return user_id == o.user_id && row_id == o.row_id && content == o.content &&
               kind == o.kind && timestamp == o.timestamp && container == o.container &&
               time_lag == o.time_lag && answered_correctly == o.answered_correctly &&
               user_answer == o.user_answer && elapsed_ms == o.elapsed_ms &&
               had_explanation == o.had_explanation;
    }
};

// Bundle = maximal run of consecutive events sharing (task_container_id,
// timestamp). Every event of a bundle shares the bundle's lag.
inline std::vector<int64_t> compute_time_lags(const std::vector<int64_t>& timestamps,
                                              const std::vector<int64_t>& containers) {
    const size_t n = timestamps.size();
    std::vector<int64_t> lag(n, 0);
    int64_t prev_bundle_ts = -1;
    int64_t bundle_lag = 0;
    for (size_t i = 0; i < n; ++i) {
        const bool new_bundle =
            i == 0 || timestamps[i] != timestamps[i - 1] || containers[i] != containers[i - 1];
        if (new_bundle) {
            bundle_lag = prev_bundle_ts < 0 ? 0 : timestamps[i] - prev_bundle_ts;
            if (bundle_lag < 0)
                throw DataError("negative time lag: events out of order at position " +
                                std::to_string(i));
            prev_bundle_ts = timestamps[i];
        }
        lag[i] = bundle_lag;
    }
    return lag;
}

// Shift prior_question_* fields back one question bundle, so each question
// carries the time spent on it and whether its explanation was viewed.
// Lecture events and each user's last question bundle stay N/A.
struct BundleSpan {
    size_t begin = 0, end = 0;  // [begin, end)
    bool is_question = false;
};

inline std::vector<BundleSpan> find_bundles(const std::vector<int64_t>& timestamps,
                                            const std::vector<int64_t>& containers,
                                            const std::vector<int8_t>& kind) {
    std::vector<BundleSpan> spans;
    const size_t n = timestamps.size();
    size_t i = 0;
    while (i < n) {
        size_t j = i + 1;
        while (j < n && timestamps[j] == timestamps[i] && containers[j] == containers[i]) ++j;
        spans.push_back({i, j, kind[i] == kKindQuestion});
        i = j;
    }
    return spans;
}

inline std::vector<UserSequence> group_by_user(const std::vector<RawInteraction>& interactions,
                                               const EncodingMaps& enc,
                                               const std::vector<LectureMeta>& lectures) {
    std::unordered_map<int64_t, int8_t> lecture_kind;
    for (const auto& l : lectures) lecture_kind[l.lecture_id] = encode_kind(l.kind);

    // bucket by user, then emit users in id order for determinism
    std::map<int64_t, std::vector<const RawInteraction*>> by_user;
    for (const auto& r : interactions) by_user[r.user_id].push_back(&r);

    std::vector<UserSequence> out;
    out.reserve(by_user.size());
    for (auto& [user_id, rows] : by_user) {
        std::sort(rows.begin(), rows.end(), [](const RawInteraction* a, const RawInteraction* b) {
            if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
            return a->row_id < b->row_id;
        });
        UserSequence s;
        s.user_id = user_id;
        const size_t n = rows.size();
        s.row_id.reserve(n);
        s.content.reserve(n);
        s.kind.reserve(n);
        s.timestamp.reserve(n);
        s.container.reserve(n);
        s.answered_correctly.reserve(n);
        s.user_answer.reserve(n);
        for (const RawInteraction* r : rows) {
            s.row_id.push_back(r->row_id);
            s.timestamp.push_back(r->timestamp);
            s.container.push_back(r->task_container_id);
            if (r->is_lecture) {
                s.content.push_back(enc.content_of_lecture(r->content_id));
                auto it = lecture_kind.find(r->content_id);
                if (it == lecture_kind.end())
                    throw DataError("lecture " + std::to_string(r->content_id) +
                                    " missing from metadata");
                s.kind.push_back(it->second);
            } else {
                s.content.push_back(enc.content_of_question(r->content_id));
                s.kind.push_back(kKindQuestion);
            }
            s.answered_correctly.push_back(encode_answered_correctly(r->answered_correctly));
            s.user_answer.push_back(encode_user_answer(r->user_answer));
        }
        s.time_lag = compute_time_lags(s.timestamp, s.container);

        // realignment: question bundle k inherits the prior_* fields reported
        // by question bundle k+1 (lecture bundles in between are skipped)
        s.elapsed_ms.assign(n, kElapsedNA);
        s.had_explanation.assign(n, kHadExplanationNA);
        const auto spans = find_bundles(s.timestamp, s.container, s.kind);
        std::vector<size_t> qspans;
        for (size_t k = 0; k < spans.size(); ++k)
            if (spans[k].is_question) qspans.push_back(k);
        for (size_t qi = 0; qi + 1 < qspans.size(); ++qi) {
            const BundleSpan& cur = spans[qspans[qi]];
            const BundleSpan& next = spans[qspans[qi + 1]];
            const RawInteraction* head = rows[next.begin];
            for (size_t p = cur.begin; p < cur.end; ++p) {
                if (head->prior_elapsed_ms) s.elapsed_ms[p] = *head->prior_elapsed_ms;
                s.had_explanation[p] = encode_had_explanation(head->prior_had_explanation);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

// Stats over an already-encoded subset (used to rebuild popularity/difficulty
// from the training split alone, avoiding leakage from held-out rows).
inline ContentStats stats_from_sequences(const std::vector<UserSequence>& seqs,
                                         int64_t num_questions) {
    ContentStats s = empty_stats(num_questions);
    std::vector<int64_t> incorrect(static_cast<size_t>(num_questions + 1), 0);
    for (const auto& u : seqs) {
        for (int64_t i = 0; i < u.size(); ++i) {
            const int32_t c = u.content[static_cast<size_t>(i)];
            if (c < 1 || c > num_questions) continue;  // lecture
            s.popularity[static_cast<size_t>(c)] += 1;
            if (u.answered_correctly[static_cast<size_t>(i)] == 1)  // encoded raw 0
                incorrect[static_cast<size_t>(c)] += 1;
        }
    }
    for (size_t i = 1; i < s.popularity.size(); ++i)
        s.difficulty[i] =
            static_cast<double>(incorrect[i] + 1) / static_cast<double>(s.popularity[i] + 2);
    return s;
}

}  // namespace ktf
