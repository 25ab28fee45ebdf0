#pragma once

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ktf/errors.hpp"
#include "ktf/model.hpp"
#include "ktf/train.hpp"

namespace ktf {

// ---------------------------------------------------------------------------
// one flat key=value namespace covering model, training, split, streaming and
// paths. Precedence: compiled defaults < config file < command-line flags.
// ---------------------------------------------------------------------------

struct RunConfig {
    ModelConfig model;  // vocab sizes stay 0 until prepared data is loaded
    TrainConfig train;
    double holdout_fraction = 0.025;
    double new_user_fraction = 0.2;
    int64_t group_cap = 50;
    uint64_t seed = 1;
    std::string train_csv;
    std::string questions_csv;
    std::string lectures_csv;
    std::string data_dir;  // prepared shards
    std::string out_dir = ".";
    std::string checkpoint;

    std::set<std::string> overridden;  // keys set by file or flags
    std::set<std::string> from_flags;  // subset set on the command line
};

namespace detail {

inline int64_t cfg_i64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const int64_t n = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
    }
}

inline double cfg_f64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
    }
}

inline bool cfg_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ConfigError("config: " + key + " expects on/off, got '" + v + "'");
}

inline std::string cfg_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline void apply_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    using detail::cfg_bool;
    using detail::cfg_f64;
    using detail::cfg_i64;
    auto& m = c.model;
    auto& t = c.train;
    if (key == "d_model") m.d_model = cfg_i64(key, value);
    else if (key == "heads") m.heads = cfg_i64(key, value);
    else if (key == "encoder_layers") m.encoder_layers = cfg_i64(key, value);
    else if (key == "decoder_layers") m.decoder_layers = cfg_i64(key, value);
    else if (key == "d_ff") m.d_ff = cfg_i64(key, value);
    else if (key == "d_embed") m.d_embed = cfg_i64(key, value);
    else if (key == "d_id") m.d_id = cfg_i64(key, value);
    else if (key == "d_part") m.d_part = cfg_i64(key, value);
    else if (key == "d_kind") m.d_kind = cfg_i64(key, value);
    else if (key == "d_tag") m.d_tag = cfg_i64(key, value);
    else if (key == "d_pop") m.d_pop = cfg_i64(key, value);
    else if (key == "d_diff") m.d_diff = cfg_i64(key, value);
    else if (key == "v_time") m.v_time = cfg_i64(key, value);
    else if (key == "v_stats") m.v_stats = cfg_i64(key, value);
    else if (key == "window") m.window = static_cast<int>(cfg_i64(key, value));
    else if (key == "lag_x_max") m.lag_x_max = cfg_f64(key, value);
    else if (key == "elapsed_x_max") m.elapsed_x_max = cfg_f64(key, value);
    else if (key == "pop_x_max") m.pop_x_max = cfg_f64(key, value);
    else if (key == "num_contents") m.num_contents = cfg_i64(key, value);
    else if (key == "num_tags") m.num_tags = cfg_i64(key, value);
    else if (key == "time_weighted") m.time_weighted = cfg_bool(key, value);
    else if (key == "continuous_embedding") m.continuous_embedding = cfg_bool(key, value);
    else if (key == "content_layer_norm") m.content_layer_norm = cfg_bool(key, value);
    else if (key == "batch_size") t.batch_size = cfg_i64(key, value);
    else if (key == "seq_len") { t.seq_len = cfg_i64(key, value); m.seq_len = t.seq_len; }
    else if (key == "peak_lr") t.lr.peak = cfg_f64(key, value);
    else if (key == "warmup_steps") t.lr.warmup_steps = cfg_i64(key, value);
    else if (key == "decay_steps") t.lr.decay_steps = cfg_i64(key, value);
    else if (key == "epochs") t.epochs = cfg_i64(key, value);
    else if (key == "max_steps") t.max_steps = cfg_i64(key, value);
    else if (key == "eval_every") t.eval_every = cfg_i64(key, value);
    else if (key == "eval_seq_len") t.eval_seq_len = cfg_i64(key, value);
    else if (key == "eval_batch_size") t.eval_batch_size = cfg_i64(key, value);
    else if (key == "patience") t.patience = cfg_i64(key, value);
    else if (key == "clip_norm") t.clip_norm = cfg_f64(key, value);
    else if (key == "holdout_fraction") c.holdout_fraction = cfg_f64(key, value);
    else if (key == "new_user_fraction") c.new_user_fraction = cfg_f64(key, value);
    else if (key == "group_cap") c.group_cap = cfg_i64(key, value);
    else if (key == "seed") { c.seed = static_cast<uint64_t>(cfg_i64(key, value)); t.seed = c.seed; }
    else if (key == "train_csv") c.train_csv = value;
    else if (key == "questions_csv") c.questions_csv = value;
    else if (key == "lectures_csv") c.lectures_csv = value;
    else if (key == "data_dir") c.data_dir = value;
    else if (key == "out_dir") c.out_dir = value;
    else if (key == "checkpoint") c.checkpoint = value;
    else throw ConfigError("config: unknown key '" + key + "'");
    c.overridden.insert(key);
}

// key=value lines; '#' starts a comment; blanks skipped
inline void load_config_file(RunConfig& c, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string{};
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        const auto stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                              " is not key=value");
        apply_config_value(c, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
}

// every knob, echoed in a stable order — written next to each artifact
inline std::string dump_config(const RunConfig& c) {
    using detail::cfg_num;
    std::ostringstream os;
    const auto& m = c.model;
    const auto& t = c.train;
    os << "d_model=" << m.d_model << '\n'
       << "heads=" << m.heads << '\n'
       << "encoder_layers=" << m.encoder_layers << '\n'
       << "decoder_layers=" << m.decoder_layers << '\n'
       << "d_ff=" << m.d_ff << '\n'
       << "d_embed=" << m.d_embed << '\n'
       << "d_id=" << m.d_id << '\n'
       << "d_part=" << m.d_part << '\n'
       << "d_kind=" << m.d_kind << '\n'
       << "d_tag=" << m.d_tag << '\n'
       << "d_pop=" << m.d_pop << '\n'
       << "d_diff=" << m.d_diff << '\n'
       << "v_time=" << m.v_time << '\n'
       << "v_stats=" << m.v_stats << '\n'
       << "window=" << m.window << '\n'
       << "lag_x_max=" << cfg_num(m.lag_x_max) << '\n'
       << "elapsed_x_max=" << cfg_num(m.elapsed_x_max) << '\n'
       << "pop_x_max=" << cfg_num(m.pop_x_max) << '\n'
       << "time_weighted=" << (m.time_weighted ? "on" : "off") << '\n'
       << "continuous_embedding=" << (m.continuous_embedding ? "on" : "off") << '\n'
       << "content_layer_norm=" << (m.content_layer_norm ? "on" : "off") << '\n'
       << "num_contents=" << m.num_contents << '\n'
       << "num_tags=" << m.num_tags << '\n'
       << "batch_size=" << t.batch_size << '\n'
       << "seq_len=" << t.seq_len << '\n'
       << "peak_lr=" << cfg_num(t.lr.peak) << '\n'
       << "warmup_steps=" << t.lr.warmup_steps << '\n'
       << "decay_steps=" << t.lr.decay_steps << '\n'
       << "epochs=" << t.epochs << '\n'
       << "max_steps=" << t.max_steps << '\n'
       << "eval_every=" << t.eval_every << '\n'
       << "eval_seq_len=" << t.eval_seq_len << '\n'
       << "eval_batch_size=" << t.eval_batch_size << '\n'
       << "patience=" << t.patience << '\n'
       << "clip_norm=" << cfg_num(t.clip_norm) << '\n'
       << "holdout_fraction=" << cfg_num(c.holdout_fraction) << '\n'
       << "new_user_fraction=" << cfg_num(c.new_user_fraction) << '\n'
       << "group_cap=" << c.group_cap << '\n'
       << "seed=" << c.seed << '\n'
       << "train_csv=" << c.train_csv << '\n'
       << "questions_csv=" << c.questions_csv << '\n'
       << "lectures_csv=" << c.lectures_csv << '\n'
       << "data_dir=" << c.data_dir << '\n'
       << "out_dir=" << c.out_dir << '\n'
       << "checkpoint=" << c.checkpoint << '\n';
    return os.str();
}

}  // namespace ktf
