#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ktf/data.hpp"
#include "ktf/errors.hpp"

// Prepared-dataset store, version "KTF1". Layout:
//   <dir>/manifest.txt   text, first line the magic, then key=value
//   <dir>/contents.bin   per-content metadata + train-table stats
//   <dir>/users_NNN.bin  user sequences, sharded by sorted user order
// Fixed-width little-endian fields throughout (x86 target).

namespace ktf {

struct ContentRecord {
    int64_t raw_id = 0;
    int8_t kind = 0;  // question or lecture type
    int8_t part = 0;
    std::vector<int32_t> tags;  // encoded tag indices; empty list = none
    int64_t popularity = 0;     // meaningful for questions only
    double difficulty = 0.5;
};

struct PreparedData {
    int64_t num_questions = 0;
    int64_t num_lectures = 0;
    int64_t num_tags = 0;
    std::vector<ContentRecord> contents;  // slot 0 reserved for padding
    std::vector<UserSequence> sequences;  // sorted by user_id

    int64_t num_rows() const {
        int64_t n = 0;
        for (const auto& s : sequences) n += s.size();
        return n;
    }
};

// end-to-end ingest: parse, encode, stats, group
inline PreparedData prepare_dataset(const std::string& train_csv, const std::string& questions_csv,
                                    const std::string& lectures_csv) {
    auto interactions = parse_interactions(train_csv);
    auto [questions, lectures] = parse_metadata(questions_csv, lectures_csv);
    auto enc = build_encodings(questions, lectures);
    auto stats = compute_content_stats(interactions, enc);

    PreparedData d;
    d.num_questions = enc.num_questions();
    d.num_lectures = enc.num_lectures();
    d.num_tags = enc.num_tags();
    d.contents.resize(static_cast<size_t>(enc.num_contents() + 1));

    for (const auto& q : questions) {
        const int32_t c = enc.content_of_question(q.question_id);
        ContentRecord& rec = d.contents[static_cast<size_t>(c)];
        rec.raw_id = q.question_id;
        rec.kind = kKindQuestion;
        rec.part = encode_part(q.part);
        for (int t : q.tags) rec.tags.push_back(enc.encode_tag(t));
        rec.popularity = stats.popularity[static_cast<size_t>(c)];
        rec.difficulty = stats.difficulty[static_cast<size_t>(c)];
    }
    for (const auto& l : lectures) {
        const int32_t c = enc.content_of_lecture(l.lecture_id);
        ContentRecord& rec = d.contents[static_cast<size_t>(c)];
        rec.raw_id = l.lecture_id;
        rec.kind = encode_kind(l.kind);
        rec.part = encode_part(l.part);
        rec.tags.push_back(enc.encode_tag(l.tag));
        rec.popularity = 0;  // unused for lectures; the N/A row applies
        rec.difficulty = 0.5;
    }
    d.sequences = group_by_user(interactions, enc, lectures);
    return d;
}

// ---------------------------------------------------------------------------
// binary helpers
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void put_vec(std::ostream& out, const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    if (!v.empty())
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("truncated read of " + what);
    return v;
}

template <typename T>
std::vector<T> get_vec(std::istream& in, size_t n, const std::string& what) {
    std::vector<T> v(n);
    if (n)
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!in) throw DataError("truncated read of " + what);
    return v;
}

inline void put_magic(std::ostream& out, const char* magic8) {
    out.write(magic8, 8);
}

inline void check_magic(std::istream& in, const char* magic8, const std::string& path) {
    char buf[8] = {};
    in.read(buf, 8);
    if (!in || std::memcmp(buf, magic8, 8) != 0)
        throw DataError(path + ": bad magic (expected " + std::string(magic8, 8) + ")");
}

inline std::string shard_name(int64_t index) {
    std::string n = std::to_string(index);
    while (n.size() < 3) n.insert(n.begin(), '0');
    return "users_" + n + ".bin";
}

}  // namespace detail

inline constexpr int64_t kDefaultUsersPerShard = 256;

inline void save_prepared(const std::string& dir, const PreparedData& d,
                          int64_t users_per_shard = kDefaultUsersPerShard) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    users_per_shard = std::max<int64_t>(users_per_shard, 1);
    const int64_t n_users = static_cast<int64_t>(d.sequences.size());
    const int64_t shards = (n_users + users_per_shard - 1) / users_per_shard;

    {
        std::ofstream out(fs::path(dir) / "manifest.txt", std::ios::binary);
        if (!out) throw DataError("cannot write manifest in " + dir);
        out << "KTF1\n";
        out << "num_questions=" << d.num_questions << "\n";
        out << "num_lectures=" << d.num_lectures << "\n";
        out << "num_tags=" << d.num_tags << "\n";
        out << "num_users=" << n_users << "\n";
        out << "num_rows=" << d.num_rows() << "\n";
        out << "shard_count=" << shards << "\n";
        out << "users_per_shard=" << users_per_shard << "\n";
    }

    {
        std::ofstream out(fs::path(dir) / "contents.bin", std::ios::binary);
        if (!out) throw DataError("cannot write contents.bin in " + dir);
        detail::put_magic(out, "KTF1CONT");
        detail::put<int64_t>(out, static_cast<int64_t>(d.contents.size()));
        detail::put<int64_t>(out, d.num_questions);
        detail::put<int64_t>(out, d.num_tags);
        for (size_t i = 1; i < d.contents.size(); ++i) {
            const ContentRecord& r = d.contents[i];
            detail::put<int64_t>(out, r.raw_id);
            detail::put<int8_t>(out, r.kind);
            detail::put<int8_t>(out, r.part);
            detail::put<int8_t>(out, static_cast<int8_t>(r.tags.size()));
            detail::put_vec(out, r.tags);
            detail::put<int64_t>(out, r.popularity);
            detail::put<double>(out, r.difficulty);
        }
    }

    for (int64_t s = 0; s < shards; ++s) {
        std::ofstream out(fs::path(dir) / detail::shard_name(s), std::ios::binary);
        if (!out) throw DataError("cannot write shard " + std::to_string(s) + " in " + dir);
        const int64_t lo = s * users_per_shard;
        const int64_t hi = std::min(n_users, lo + users_per_shard);
        detail::put_magic(out, "KTF1USER");
        detail::put<int64_t>(out, s);
        detail::put<int64_t>(out, hi - lo);
        for (int64_t ui = lo; ui < hi; ++ui) {
            const UserSequence& u = d.sequences[static_cast<size_t>(ui)];
            detail::put<int64_t>(out, u.user_id);
            detail::put<int64_t>(out, u.size());
            detail::put_vec(out, u.row_id);
            detail::put_vec(out, u.content);
            detail::put_vec(out, u.timestamp);
            detail::put_vec(out, u.container);
            detail::put_vec(out, u.time_lag);
            detail::put_vec(out, u.answered_correctly);
            detail::put_vec(out, u.user_answer);
            detail::put_vec(out, u.elapsed_ms);
            detail::put_vec(out, u.had_explanation);
        }
    }
}

inline PreparedData load_prepared(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest = fs::path(dir) / "manifest.txt";
    std::ifstream min(manifest, std::ios::binary);
    if (!min) throw DataError("cannot open " + manifest.string());
    std::string line;
    if (!std::getline(min, line) || line != "KTF1")
        throw DataError(manifest.string() + ": bad magic line");
    int64_t num_users = -1, num_rows = -1, shard_count = -1;
    PreparedData d;
    while (std::getline(min, line)) {
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw DataError(manifest.string() + ": bad line " + line);
        const std::string key = line.substr(0, eq);
        const int64_t val = parse_i64(line.substr(eq + 1), manifest.string() + " key " + key);
        if (key == "num_questions") d.num_questions = val;
        else if (key == "num_lectures") d.num_lectures = val;
        else if (key == "num_tags") d.num_tags = val;
        else if (key == "num_users") num_users = val;
        else if (key == "num_rows") num_rows = val;
        else if (key == "shard_count") shard_count = val;
        else if (key == "users_per_shard") {}  // informational
        else throw DataError(manifest.string() + ": unknown key " + key);
    }
    if (num_users < 0 || num_rows < 0 || shard_count < 0)
        throw DataError(manifest.string() + ": missing counts");

    {
        const fs::path p = fs::path(dir) / "contents.bin";
        std::ifstream in(p, std::ios::binary);
        if (!in) throw DataError("cannot open " + p.string());
        detail::check_magic(in, "KTF1CONT", p.string());
        const auto n = detail::get<int64_t>(in, "content count");
        const auto nq = detail::get<int64_t>(in, "question count");
        const auto nt = detail::get<int64_t>(in, "tag count");
        if (nq != d.num_questions || nt != d.num_tags ||
            n != d.num_questions + d.num_lectures + 1)
            throw DataError(p.string() + ": counts disagree with manifest");
        d.contents.resize(static_cast<size_t>(n));
        for (int64_t i = 1; i < n; ++i) {
            ContentRecord& r = d.contents[static_cast<size_t>(i)];
            r.raw_id = detail::get<int64_t>(in, "raw_id");
            r.kind = detail::get<int8_t>(in, "kind");
            r.part = detail::get<int8_t>(in, "part");
            const auto ntags = detail::get<int8_t>(in, "tag count");
            r.tags = detail::get_vec<int32_t>(in, static_cast<size_t>(ntags), "tags");
            r.popularity = detail::get<int64_t>(in, "popularity");
            r.difficulty = detail::get<double>(in, "difficulty");
        }
    }

    d.sequences.reserve(static_cast<size_t>(num_users));
    for (int64_t s = 0; s < shard_count; ++s) {
        const fs::path p = fs::path(dir) / detail::shard_name(s);
        std::ifstream in(p, std::ios::binary);
        if (!in) throw DataError("cannot open " + p.string());
        detail::check_magic(in, "KTF1USER", p.string());
        const auto idx = detail::get<int64_t>(in, "shard index");
        if (idx != s) throw DataError(p.string() + ": shard index mismatch");
        const auto n = detail::get<int64_t>(in, "user count");
        for (int64_t ui = 0; ui < n; ++ui) {
            UserSequence u;
            u.user_id = detail::get<int64_t>(in, "user_id");
            const auto len = static_cast<size_t>(detail::get<int64_t>(in, "sequence length"));
            u.row_id = detail::get_vec<int64_t>(in, len, "row_id");
            u.content = detail::get_vec<int32_t>(in, len, "content");
            u.timestamp = detail::get_vec<int64_t>(in, len, "timestamp");
            u.container = detail::get_vec<int64_t>(in, len, "container");
            u.time_lag = detail::get_vec<int64_t>(in, len, "time_lag");
            u.answered_correctly = detail::get_vec<int8_t>(in, len, "answered_correctly");
            u.user_answer = detail::get_vec<int8_t>(in, len, "user_answer");
            u.elapsed_ms = detail::get_vec<int64_t>(in, len, "elapsed_ms");
            u.had_explanation = detail::get_vec<int8_t>(in, len, "had_explanation");
            // kind is derivable from the content table
            u.kind.resize(len);
            for (size_t i = 0; i < len; ++i) {
                const int32_t c = u.content[i];
                if (c < 1 || c >= static_cast<int32_t>(d.contents.size()))
                    throw DataError(p.string() + ": content index out of range");
                u.kind[i] = d.contents[static_cast<size_t>(c)].kind;
            }
            d.sequences.push_back(std::move(u));
        }
    }
    if (static_cast<int64_t>(d.sequences.size()) != num_users)
        throw DataError(dir + ": user count disagrees with manifest");
    if (d.num_rows() != num_rows) throw DataError(dir + ": row count disagrees with manifest");
    return d;
}

}  // namespace ktf
