#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "ktf/data.hpp"
#include "support/tmpdir.hpp"

using ktf::test::TmpDir;
using ktf::test::write_file;

namespace {

const char* kTrainHeader =
    "row_id,timestamp,user_id,content_id,content_type_id,task_container_id,"
    "user_answer,answered_correctly,prior_question_elapsed_time,"
    "prior_question_had_explanation\n";

std::string questions_csv() {
    return "question_id,bundle_id,correct_answer,part,tags\n"
           "10,10,0,1,51 131 162\n"
           "20,20,2,5,\n"
           "30,30,1,3,51\n";
}

std::string lectures_csv() {
    return "lecture_id,tag,part,type_of\n"
           "5,131,2,concept\n"
           "7,9,4,solving question\n";
}

}  // namespace

TEST_CASE("interaction rows parse field by field", "[ingest]") {
    TmpDir dir("ingest");
    write_file(dir.file("train.csv"), std::string(kTrainHeader) + "0,0,115,5692,0,1,3,1,,\n");
    // need a matching questions file only when encoding; parsing stands alone
    auto rows = ktf::parse_interactions(dir.file("train.csv"));
    REQUIRE(rows.size() == 1);
    const auto& r = rows[0];
    REQUIRE(r.row_id == 0);
    REQUIRE(r.user_id == 115);
    REQUIRE(r.content_id == 5692);
    REQUIRE_FALSE(r.is_lecture);
    REQUIRE(r.task_container_id == 1);
    REQUIRE(r.user_answer == 3);
    REQUIRE(r.answered_correctly == 1);
    REQUIRE_FALSE(r.prior_elapsed_ms.has_value());
    REQUIRE_FALSE(r.prior_had_explanation.has_value());
}

TEST_CASE("header-only file parses to an empty list", "[ingest]") {
    TmpDir dir("ingest");
    write_file(dir.file("train.csv"), kTrainHeader);
    REQUIRE(ktf::parse_interactions(dir.file("train.csv")).empty());
}

TEST_CASE("lecture rows map answer sentinels to N/A", "[ingest]") {
    TmpDir dir("ingest");
    write_file(dir.file("train.csv"),
               std::string(kTrainHeader) + "3,100,7,5,1,2,-1,-1,,True\n");
    auto rows = ktf::parse_interactions(dir.file("train.csv"));
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].is_lecture);
    REQUIRE_FALSE(rows[0].user_answer.has_value());
    REQUIRE_FALSE(rows[0].answered_correctly.has_value());
    REQUIRE(rows[0].prior_had_explanation == true);
}

TEST_CASE("schema violations name the offending column", "[ingest]") {
    TmpDir dir("ingest");
    write_file(dir.file("bad_header.csv"),
               "row_id,timestamp,user_id,content_id,content_type_id,task_container_id,"
               "user_answer,answered_correctly,prior_question_elapsed_time\n");
    REQUIRE_THROWS_AS(ktf::parse_interactions(dir.file("bad_header.csv")), ktf::DataError);

    write_file(dir.file("bad_cell.csv"), std::string(kTrainHeader) + "0,zzz,115,5692,0,1,3,1,,\n");
    REQUIRE_THROWS_WITH(ktf::parse_interactions(dir.file("bad_cell.csv")),
                        Catch::Matchers::ContainsSubstring("row_id=0") &&
                            Catch::Matchers::ContainsSubstring("timestamp"));

    write_file(dir.file("missing.csv"), std::string(kTrainHeader) + "0,0,115,5692,0,1,3,1,\n");
    REQUIRE_THROWS_AS(ktf::parse_interactions(dir.file("missing.csv")), ktf::DataError);
}

TEST_CASE("metadata parses tags and lecture kinds", "[ingest]") {
    TmpDir dir("ingest");
    write_file(dir.file("questions.csv"), questions_csv());
    write_file(dir.file("lectures.csv"), lectures_csv());
    auto [questions, lectures] = ktf::parse_metadata(dir.file("questions.csv"),
                                                     dir.file("lectures.csv"));
    REQUIRE(questions.size() == 3);
    REQUIRE(questions[0].tags == std::vector<int>{51, 131, 162});
    REQUIRE(questions[1].tags.empty());
    REQUIRE(questions[1].part == 5);
    REQUIRE(lectures.size() == 2);
    REQUIRE(lectures[0].kind == ktf::LectureKind::Concept);
    REQUIRE(lectures[1].kind == ktf::LectureKind::SolvingQuestion);
}

TEST_CASE("metadata rejects duplicates and bad tags", "[ingest]") {
    TmpDir dir("ingest");
    write_file(dir.file("dup.csv"),
               "question_id,bundle_id,correct_answer,part,tags\n10,10,0,1,\n10,10,0,1,\n");
    write_file(dir.file("lectures.csv"), lectures_csv());
    REQUIRE_THROWS_AS(ktf::parse_metadata(dir.file("dup.csv"), dir.file("lectures.csv")),
                      ktf::DataError);

    write_file(dir.file("badtag.csv"),
               "question_id,bundle_id,correct_answer,part,tags\n10,10,0,1,51 x3\n");
    REQUIRE_THROWS_WITH(
        ktf::parse_metadata(dir.file("badtag.csv"), dir.file("lectures.csv")),
        Catch::Matchers::ContainsSubstring("question_id=10"));

    REQUIRE_THROWS_WITH(
        ktf::parse_metadata(dir.file("nope.csv"), dir.file("lectures.csv")),
        Catch::Matchers::ContainsSubstring("nope.csv"));
}

TEST_CASE("content indices are assigned questions-then-lectures by id", "[ingest]") {
    std::vector<ktf::QuestionMeta> qs(2);
    qs[0].question_id = 20;  // out of order on purpose
    qs[0].part = 1;
    qs[1].question_id = 10;
    qs[1].part = 1;
    std::vector<ktf::LectureMeta> ls(1);
    ls[0].lecture_id = 5;
    ls[0].tag = 9;
    ls[0].part = 1;
    auto enc = ktf::build_encodings(qs, ls);
    REQUIRE(enc.content_of_question(10) == 1);
    REQUIRE(enc.content_of_question(20) == 2);
    REQUIRE(enc.content_of_lecture(5) == 3);
    REQUIRE(enc.num_contents() == 3);
    REQUIRE(enc.raw_id_of(1) == 10);
    REQUIRE(enc.raw_id_of(2) == 20);
    REQUIRE(enc.raw_id_of(3) == 5);
    REQUIRE(enc.index_is_question(2));
    REQUIRE_FALSE(enc.index_is_question(3));
    REQUIRE_THROWS_AS(enc.content_of_question(99), ktf::DataError);
}

TEST_CASE("categorical layouts round-trip and reserve pad=0", "[ingest]") {
    using namespace ktf;
    // answered_correctly {0,1,N/A} → {1,2,3}
    REQUIRE(encode_answered_correctly(0) == 1);
    REQUIRE(encode_answered_correctly(1) == 2);
    REQUIRE(encode_answered_correctly(std::nullopt) == 3);
    for (int v : {0, 1}) REQUIRE(decode_answered_correctly(encode_answered_correctly(v)) == v);
    REQUIRE_FALSE(decode_answered_correctly(kAnsweredCorrectlyNA).has_value());

    for (int v : {0, 1, 2, 3}) REQUIRE(decode_user_answer(encode_user_answer(v)) == v);
    REQUIRE(encode_user_answer(std::nullopt) == kUserAnswerNA);

    for (bool v : {false, true}) REQUIRE(decode_had_explanation(encode_had_explanation(v)) == v);
    REQUIRE(encode_had_explanation(std::nullopt) == kHadExplanationNA);

    // no encoder may produce the pad index
    REQUIRE(encode_answered_correctly(0) != kPadIndex);
    REQUIRE(encode_user_answer(0) != kPadIndex);
    REQUIRE(encode_had_explanation(false) != kPadIndex);
    REQUIRE(encode_part(1) != kPadIndex);
    REQUIRE(ktf::kKindQuestion != kPadIndex);

    // lecture kinds occupy 2..5 alphabetically
    REQUIRE(encode_kind(LectureKind::Concept) == 2);
    REQUIRE(encode_kind(LectureKind::Intention) == 3);
    REQUIRE(encode_kind(LectureKind::SolvingQuestion) == 4);
    REQUIRE(encode_kind(LectureKind::Starter) == 5);
}

TEST_CASE("tag vocabulary is sorted and dense from 1", "[ingest]") {
    TmpDir dir("ingest");
    write_file(dir.file("questions.csv"), questions_csv());
    write_file(dir.file("lectures.csv"), lectures_csv());
    auto [qs, ls] = ktf::parse_metadata(dir.file("questions.csv"), dir.file("lectures.csv"));
    auto enc = ktf::build_encodings(qs, ls);
    // tags observed: 51,131,162 (questions) + 131,9 (lectures) → {9,51,131,162}
    REQUIRE(enc.num_tags() == 4);
    REQUIRE(enc.encode_tag(9) == 1);
    REQUIRE(enc.encode_tag(51) == 2);
    REQUIRE(enc.encode_tag(131) == 3);
    REQUIRE(enc.encode_tag(162) == 4);
    REQUIRE(enc.tag_na() == 5);
}

TEST_CASE("content stats follow the smoothed error-rate formula", "[ingest]") {
    std::vector<ktf::QuestionMeta> qs(3);
    for (int i = 0; i < 3; ++i) {
        qs[static_cast<size_t>(i)].question_id = 10 * (i + 1);
        qs[static_cast<size_t>(i)].part = 1;
    }
    auto enc = ktf::build_encodings(qs, {});

    std::vector<ktf::RawInteraction> rows;
    auto add = [&](int64_t content, int correct) {
        ktf::RawInteraction r;
        r.row_id = static_cast<int64_t>(rows.size());
        r.user_id = 1;
        r.content_id = content;
        r.answered_correctly = correct;
        r.user_answer = 0;
        rows.push_back(r);
    };
    // q10: 4 attempts, 3 correct → difficulty (1+1)/(4+2) = 1/3
    add(10, 1);
    add(10, 1);
    add(10, 0);
    add(10, 1);
    // q20: 1 attempt, incorrect → (1+1)/(1+2) = 2/3
    add(20, 0);

    auto stats = ktf::compute_content_stats(rows, enc);
    REQUIRE(stats.popularity[1] == 4);
    REQUIRE(stats.difficulty[1] == Catch::Approx(1.0 / 3.0).margin(1e-12));
    REQUIRE(stats.popularity[2] == 1);
    REQUIRE(stats.difficulty[2] == Catch::Approx(2.0 / 3.0).margin(1e-12));
    // q30 never attempted → popularity 0, difficulty 0.5
    REQUIRE(stats.popularity[3] == 0);
    REQUIRE(stats.difficulty[3] == 0.5);

    // popularity sums to the number of question rows; difficulty strictly inside (0,1)
    int64_t total = 0;
    for (size_t i = 1; i < stats.popularity.size(); ++i) {
        total += stats.popularity[i];
        REQUIRE(stats.difficulty[i] > 0.0);
        REQUIRE(stats.difficulty[i] < 1.0);
    }
    REQUIRE(total == 5);
}

TEST_CASE("time lags are shared within a bundle", "[ingest]") {
    // timestamps [0, 5000, 5000, 9000], containers [a,b,b,c]
    auto lags = ktf::compute_time_lags({0, 5000, 5000, 9000}, {1, 2, 2, 3});
    REQUIRE(lags == std::vector<int64_t>{0, 5000, 5000, 4000});

    REQUIRE(ktf::compute_time_lags({0}, {1}) == std::vector<int64_t>{0});

    // two bundles at the same timestamp, different containers → second lag 0
    auto lags2 = ktf::compute_time_lags({100, 100}, {1, 2});
    REQUIRE(lags2 == std::vector<int64_t>{0, 0});

    REQUIRE_THROWS_AS(ktf::compute_time_lags({100, 50}, {1, 2}), ktf::DataError);
}

namespace {

// one user: question bundle (ts 0, c1), lecture (ts 1000), question bundle of
// two (ts 5000, c2), final question (ts 9000, c3)
std::string interleaved_user_csv() {
    std::string s = kTrainHeader;
    s += "0,0,42,10,0,1,2,1,,\n";
    s += "1,1000,42,5,1,100,-1,-1,,\n";
    s += "2,5000,42,20,0,2,0,0,24000,False\n";  // prior fields describe bundle c1
    s += "3,5000,42,30,0,2,1,1,24000,False\n";
    s += "4,9000,42,10,0,3,2,1,7000,True\n";  // prior fields describe bundle c2
    return s;
}

}  // namespace

TEST_CASE("group_by_user sorts, encodes and realigns prior fields", "[ingest]") {
    TmpDir dir("ingest");
    write_file(dir.file("train.csv"), interleaved_user_csv());
    write_file(dir.file("questions.csv"), questions_csv());
    write_file(dir.file("lectures.csv"), lectures_csv());
    auto rows = ktf::parse_interactions(dir.file("train.csv"));
    auto [qs, ls] = ktf::parse_metadata(dir.file("questions.csv"), dir.file("lectures.csv"));
    auto enc = ktf::build_encodings(qs, ls);
    auto seqs = ktf::group_by_user(rows, enc, ls);

    REQUIRE(seqs.size() == 1);
    const auto& u = seqs[0];
    REQUIRE(u.user_id == 42);
    REQUIRE(u.size() == 5);
    REQUIRE(u.content == std::vector<int32_t>{1, 4, 2, 3, 1});  // q10,lec5,q20,q30,q10
    REQUIRE(u.kind == std::vector<int8_t>{1, 2, 1, 1, 1});
    REQUIRE(u.time_lag == std::vector<int64_t>{0, 1000, 4000, 4000, 4000});

    // realignment: bundle c1 inherits 24000/False from bundle c2's prior
    // fields; bundle c2 inherits 7000/True from bundle c3; c3 (last) is N/A;
    // the lecture stays N/A.
    REQUIRE(u.elapsed_ms == std::vector<int64_t>{24000, ktf::kElapsedNA, 7000, 7000,
                                                 ktf::kElapsedNA});
    REQUIRE(u.had_explanation ==
            std::vector<int8_t>{1, ktf::kHadExplanationNA, 2, 2, ktf::kHadExplanationNA});

    // answers encoded; lecture gets N/A indices
    REQUIRE(u.answered_correctly == std::vector<int8_t>{2, 3, 1, 2, 2});
    REQUIRE(u.user_answer == std::vector<int8_t>{3, 5, 1, 2, 3});
}

TEST_CASE("interleaved users come out separately and time-sorted", "[ingest]") {
    TmpDir dir("ingest");
    std::string s = kTrainHeader;
    s += "0,500,2,10,0,1,0,1,,\n";
    s += "1,0,1,10,0,1,1,0,,\n";
    s += "2,0,3,20,0,1,2,1,,\n";
    s += "3,100,1,20,0,2,3,1,,\n";
    write_file(dir.file("train.csv"), s);
    write_file(dir.file("questions.csv"), questions_csv());
    write_file(dir.file("lectures.csv"), lectures_csv());
    auto rows = ktf::parse_interactions(dir.file("train.csv"));
    auto [qs, ls] = ktf::parse_metadata(dir.file("questions.csv"), dir.file("lectures.csv"));
    auto enc = ktf::build_encodings(qs, ls);
    auto seqs = ktf::group_by_user(rows, enc, ls);

    REQUIRE(seqs.size() == 3);
    REQUIRE(seqs[0].user_id == 1);
    REQUIRE(seqs[1].user_id == 2);
    REQUIRE(seqs[2].user_id == 3);
    REQUIRE(seqs[0].timestamp == std::vector<int64_t>{0, 100});

    // determinism: a second pass over the same inputs is identical
    auto seqs2 = ktf::group_by_user(rows, enc, ls);
    REQUIRE(seqs == seqs2);
}

TEST_CASE("lecture-only user carries N/A answer fields throughout", "[ingest]") {
    TmpDir dir("ingest");
    std::string s = kTrainHeader;
    s += "0,0,9,5,1,1,,,,\n";
    s += "1,800,9,7,1,2,,,,\n";
    write_file(dir.file("train.csv"), s);
    write_file(dir.file("questions.csv"), questions_csv());
    write_file(dir.file("lectures.csv"), lectures_csv());
    auto rows = ktf::parse_interactions(dir.file("train.csv"));
    auto [qs, ls] = ktf::parse_metadata(dir.file("questions.csv"), dir.file("lectures.csv"));
    auto enc = ktf::build_encodings(qs, ls);
    auto seqs = ktf::group_by_user(rows, enc, ls);
    REQUIRE(seqs.size() == 1);
    const auto& u = seqs[0];
    for (int64_t i = 0; i < u.size(); ++i) {
        REQUIRE(u.answered_correctly[static_cast<size_t>(i)] == ktf::kAnsweredCorrectlyNA);
        REQUIRE(u.user_answer[static_cast<size_t>(i)] == ktf::kUserAnswerNA);
        REQUIRE(u.elapsed_ms[static_cast<size_t>(i)] == ktf::kElapsedNA);
    }
    REQUIRE(u.kind == std::vector<int8_t>{2, 4});  // concept, solving question
}

TEST_CASE("lag-bundle consistency holds on a generated corpus", "[ingest]") {
    // random-ish but deterministic walk: 5 users, mixed bundles
    std::string s = kTrainHeader;
    int64_t row = 0;
    for (int user = 1; user <= 5; ++user) {
        int64_t ts = 0;
        for (int b = 0; b < 6; ++b) {
            const int width = 1 + (b * user) % 3;
            for (int k = 0; k < width; ++k) {
                const int64_t content = 10 * (1 + (b + k) % 3);
                s += std::to_string(row++) + "," + std::to_string(ts) + "," +
                     std::to_string(user) + "," + std::to_string(content) + ",0," +
                     std::to_string(b) + ",0,1,,\n";
            }
            ts += 1000 * (user + b);
        }
    }
    TmpDir dir("ingest");
    write_file(dir.file("train.csv"), s);
    write_file(dir.file("questions.csv"), questions_csv());
    write_file(dir.file("lectures.csv"), lectures_csv());
    auto rows = ktf::parse_interactions(dir.file("train.csv"));
    auto [qs, ls] = ktf::parse_metadata(dir.file("questions.csv"), dir.file("lectures.csv"));
    auto enc = ktf::build_encodings(qs, ls);
    auto seqs = ktf::group_by_user(rows, enc, ls);
    REQUIRE(seqs.size() == 5);
    for (const auto& u : seqs) {
        for (int64_t i = 1; i < u.size(); ++i) {
            const auto si = static_cast<size_t>(i);
            REQUIRE(u.timestamp[si] >= u.timestamp[si - 1]);
            if (u.timestamp[si] == u.timestamp[si - 1] && u.container[si] == u.container[si - 1])
                REQUIRE(u.time_lag[si] == u.time_lag[si - 1]);
        }
    }
}

TEST_CASE("stats can be rebuilt from encoded sequences", "[ingest]") {
    TmpDir dir("ingest");
    write_file(dir.file("train.csv"), interleaved_user_csv());
    write_file(dir.file("questions.csv"), questions_csv());
    write_file(dir.file("lectures.csv"), lectures_csv());
    auto rows = ktf::parse_interactions(dir.file("train.csv"));
    auto [qs, ls] = ktf::parse_metadata(dir.file("questions.csv"), dir.file("lectures.csv"));
    auto enc = ktf::build_encodings(qs, ls);
    auto direct = ktf::compute_content_stats(rows, enc);
    auto seqs = ktf::group_by_user(rows, enc, ls);
    auto rebuilt = ktf::stats_from_sequences(seqs, enc.num_questions());
    REQUIRE(direct.popularity == rebuilt.popularity);
    REQUIRE(direct.difficulty == rebuilt.difficulty);
}
