#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ktf/dataset_io.hpp"
#include "ktf/errors.hpp"
#include "ktf/model.hpp"
#include "ktf/optim.hpp"

namespace ktf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are raw little-endian values");

// ---------------------------------------------------------------------------
// "KTC1" checkpoint: config digest, trainer counters, named parameter tensors,
// Adam moments. Every value is stored raw, so save/load/resave is
// byte-identical and a resumed run continues bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline void digest_mix(uint64_t& h, const std::string& s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;  // FNV-1a 64
    }
}

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

// Digest over every field that shapes the parameter set (vocab included) plus
// the scalar width. Two configs with equal digests produce interchangeable
// checkpoints.
template <typename S>
uint64_t config_digest(const ModelConfig& c) {
    using detail::num;
    std::string s;
    s += "d_model=" + std::to_string(c.d_model);
    s += ";heads=" + std::to_string(c.heads);
    s += ";enc=" + std::to_string(c.encoder_layers);
    s += ";dec=" + std::to_string(c.decoder_layers);
    s += ";d_ff=" + std::to_string(c.d_ff);
    s += ";d_embed=" + std::to_string(c.d_embed);
    s += ";d_id=" + std::to_string(c.d_id);
    s += ";d_part=" + std::to_string(c.d_part);
    s += ";d_kind=" + std::to_string(c.d_kind);
    s += ";d_tag=" + std::to_string(c.d_tag);
    s += ";d_pop=" + std::to_string(c.d_pop);
    s += ";d_diff=" + std::to_string(c.d_diff);
    s += ";v_time=" + std::to_string(c.v_time);
    s += ";v_stats=" + std::to_string(c.v_stats);
    s += ";window=" + std::to_string(c.window);
    s += ";lag_x_max=" + num(c.lag_x_max);
    s += ";elapsed_x_max=" + num(c.elapsed_x_max);
    s += ";pop_x_max=" + num(c.pop_x_max);
    s += ";tw=" + std::to_string(c.time_weighted ? 1 : 0);
    s += ";ce=" + std::to_string(c.continuous_embedding ? 1 : 0);
    s += ";cln=" + std::to_string(c.content_layer_norm ? 1 : 0);
    s += ";num_contents=" + std::to_string(c.num_contents);
    s += ";num_tags=" + std::to_string(c.num_tags);
    s += ";scalar_bytes=" + std::to_string(sizeof(S));
    uint64_t h = 0xcbf29ce484222325ull;
    detail::digest_mix(h, s);
    return h;
}

// resumable trainer position; stored verbatim in the checkpoint
struct TrainerState {
    int64_t step = 0;
    int64_t epoch = 0;
    int64_t batch_index = 0;  // batches already consumed within `epoch`
    double best_val_auc = -1.0;
    int64_t evals_since_best = 0;
};

namespace detail {

template <typename S>
void put_tensor(std::ostream& os, const Tensor<S>& t) {
    put(os, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) put(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(S) * static_cast<size_t>(t.size())));
}

template <typename S>
void get_tensor_into(std::istream& is, Tensor<S>& t, const std::string& what) {
    const auto rank = get<uint32_t>(is, what);
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = get<int64_t>(is, what);
    if (shape != t.shape)
        throw DataError("checkpoint: shape mismatch for " + what);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(S) * static_cast<size_t>(t.size())));
    if (!is) throw DataError("checkpoint: truncated payload in " + what);
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, Model<S>& m, const AdamState<S>& adam,
                     const TrainerState& ts) {
    namespace fs = std::filesystem;
    const auto params = m.parameters();
    if (!adam.m.empty() && adam.m.size() != params.size())
        throw ShapeError("save_checkpoint: Adam state does not match parameter registry");

    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("save_checkpoint: cannot open " + tmp);
        os.write("KTC1", 4);
        detail::put(os, config_digest<S>(m.cfg));
        detail::put(os, ts.step);
        detail::put(os, ts.epoch);
        detail::put(os, ts.batch_index);
        detail::put(os, ts.best_val_auc);
        detail::put(os, ts.evals_since_best);

        detail::put(os, static_cast<uint32_t>(params.size()));
        for (const auto* p : params) {
            detail::put(os, static_cast<uint32_t>(p->name.size()));
            os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
            detail::put_tensor(os, p->value);
        }

        detail::put(os, static_cast<uint8_t>(adam.m.empty() ? 0 : 1));
        if (!adam.m.empty()) {
            detail::put(os, adam.step);
            for (size_t k = 0; k < params.size(); ++k) {
                detail::put_tensor(os, adam.m[k]);
                detail::put_tensor(os, adam.v[k]);
            }
        }
        if (!os) throw DataError("save_checkpoint: write failed on " + tmp);
    }
    fs::rename(tmp, path);
}

// The model must already be built with the matching config: the digest guards
// against loading weights into a differently-shaped net.
template <typename S>
TrainerState load_checkpoint(const std::string& path, Model<S>& m, AdamState<S>& adam) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "KTC1", 4) != 0)
        throw DataError("load_checkpoint: " + path + " is not a KTC1 checkpoint");
    const auto digest = detail::get<uint64_t>(is, "checkpoint");
    if (digest != config_digest<S>(m.cfg))
        throw ConfigError("load_checkpoint: config digest mismatch (checkpoint was written by a "
                          "different model configuration)");

    TrainerState ts;
    ts.step = detail::get<int64_t>(is, "checkpoint");
    ts.epoch = detail::get<int64_t>(is, "checkpoint");
    ts.batch_index = detail::get<int64_t>(is, "checkpoint");
    ts.best_val_auc = detail::get<double>(is, "checkpoint");
    ts.evals_since_best = detail::get<int64_t>(is, "checkpoint");

    auto params = m.parameters();
    const auto count = detail::get<uint32_t>(is, "checkpoint");
    if (count != params.size())
        throw DataError("load_checkpoint: parameter count mismatch");
    for (auto* p : params) {
        const auto len = detail::get<uint32_t>(is, "checkpoint");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw DataError("checkpoint: truncated payload");
        if (name != p->name)
            throw DataError("load_checkpoint: expected parameter " + p->name + ", found " + name);
        detail::get_tensor_into(is, p->value, p->name);
    }

    const auto has_adam = detail::get<uint8_t>(is, "checkpoint");
    if (has_adam) {
        adam.init(params);
        adam.step = detail::get<int64_t>(is, "checkpoint");
        for (size_t k = 0; k < params.size(); ++k) {
            detail::get_tensor_into(is, adam.m[k], params[k]->name + ".m");
            detail::get_tensor_into(is, adam.v[k], params[k]->name + ".v");
        }
    } else {
        adam.m.clear();
        adam.v.clear();
        adam.step = 0;
    }
    return ts;
}

}  // namespace ktf
