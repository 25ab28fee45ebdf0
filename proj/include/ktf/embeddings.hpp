#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ktf/dataset_io.hpp"
#include "ktf/errors.hpp"
#include "ktf/ops.hpp"
#include "ktf/rng.hpp"
#include "ktf/tensor.hpp"
#include "ktf/windows.hpp"

namespace ktf {

// ---------------------------------------------------------------------------
// categorical lookup; index 0 is padding and yields a zero vector
// ---------------------------------------------------------------------------

template <typename S>
struct EmbeddingTable {
    Parameter<S> weight;  // [V, d]

    EmbeddingTable(std::string name, int64_t V, int64_t d, Rng& rng)
        : weight(std::move(name), init_weight<S>({V, d}, rng)) {
        // the pad row never reaches outputs, but keep it zero for tidy dumps
        for (int64_t j = 0; j < d; ++j) weight.value[j] = S{0};
    }
    int64_t V() const { return weight.value.dim(0); }
    int64_t d() const { return weight.value.dim(1); }
};

template <typename S, typename I>
void embed_rows(const Tensor<S>& table, const std::vector<I>& idx, Tensor<S>& out) {
    const int64_t V = table.dim(0);
    const int64_t d = table.dim(1);
    const auto n = static_cast<int64_t>(idx.size());
    for (int64_t i = 0; i < n; ++i) {
        const int64_t r = static_cast<int64_t>(idx[static_cast<size_t>(i)]);
        S* dst = out.data() + i * d;
        if (r == 0) {
            std::fill(dst, dst + d, S{0});
            continue;
        }
        if (r < 0 || r >= V)
            throw DataError("embedding index " + std::to_string(r) + " outside [0, " +
                            std::to_string(V) + ")");
        const S* src = table.data() + r * d;
        std::copy(src, src + d, dst);
    }
}

template <typename S, typename I>
void embed_rows_backward(const std::vector<I>& idx, const Tensor<S>& dout, Tensor<S>& dtable) {
    const int64_t d = dtable.dim(1);
    const auto n = static_cast<int64_t>(idx.size());
    for (int64_t i = 0; i < n; ++i) {
        const int64_t r = static_cast<int64_t>(idx[static_cast<size_t>(i)]);
        if (r == 0) continue;
        const S* src = dout.data() + i * d;
        S* dst = dtable.data() + r * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
}

// ---------------------------------------------------------------------------
// windowed continuous embedding. A real input is mapped onto the table's
// index space, then a triangular kernel of window W blends the neighboring
// rows (Fig-2-style "weighted windowed sum"). Row V (one past the table) is
// a learned N/A row.
// ---------------------------------------------------------------------------

template <typename S>
struct ContinuousEmbedding {
    Parameter<S> table;  // [V+1, d]; last row = N/A
    int64_t V;
    int window;       // odd, >= 1
    double x_max;     // clamp for the log map / upper bound for linear
    bool linear_map;  // difficulty lives in [0,1] already
    bool discretize = false;  // ablation: nearest row, no blending

    ContinuousEmbedding(std::string name, int64_t V_, int64_t d, int window_, double x_max_,
                        bool linear, Rng& rng)
        : table(std::move(name), init_weight<S>({V_ + 1, d}, rng)),
          V(V_),
          window(window_),
          x_max(x_max_),
          linear_map(linear) {
        if (window < 1 || window % 2 == 0) throw ConfigError("continuous window must be odd >= 1");
        if (window > 13) throw ConfigError("continuous window too large");
        if (V < 2) throw ConfigError("continuous table needs V >= 2");
        if (!(x_max > 0)) throw ConfigError("x_max must be positive");
    }
    int64_t d() const { return table.value.dim(1); }

    // monotone index map: phi(0)=0, phi(x_max)=V-1
    double phi(double x) const {
        if (x < 0) throw DataError("continuous feature is negative: " + std::to_string(x));
        if (linear_map) return std::min(x, x_max) / x_max * static_cast<double>(V - 1);
        return static_cast<double>(V - 1) * std::log1p(std::min(x, x_max)) / std::log1p(x_max);
    }
};

// per-position blend: up to window+2 candidate rows with normalized weights
struct ContKernel {
    std::array<int32_t, 16> rows{};
    std::array<double, 16> weights{};
    int n = 0;  // 0 = pad position (no contribution)
};

template <typename S>
ContKernel continuous_kernel(const ContinuousEmbedding<S>& e, double x, bool is_na) {
    ContKernel k;
    if (is_na) {
        k.rows[0] = static_cast<int32_t>(e.V);  // learned N/A row
        k.weights[0] = 1.0;
        k.n = 1;
        return k;
    }
    const double c = e.phi(x);
    if (e.discretize) {
        const auto r = static_cast<int64_t>(std::llround(c));
        k.rows[0] = static_cast<int32_t>(std::clamp<int64_t>(r, 0, e.V - 1));
        k.weights[0] = 1.0;
        k.n = 1;
        return k;
    }
    const double h = (e.window + 1) / 2.0;
    const auto lo = static_cast<int64_t>(std::ceil(c - h));
    const auto hi = static_cast<int64_t>(std::floor(c + h));
    double total = 0;
    for (int64_t r = std::max<int64_t>(lo, 0); r <= std::min<int64_t>(hi, e.V - 1); ++r) {
        const double w = std::max(0.0, 1.0 - std::abs(c - static_cast<double>(r)) / h);
        if (w <= 0.0) continue;
        k.rows[static_cast<size_t>(k.n)] = static_cast<int32_t>(r);
        k.weights[static_cast<size_t>(k.n)] = w;
        total += w;
        ++k.n;
    }
    // candidates always exist: h >= 1 guarantees at least one in-range row
    for (int i = 0; i < k.n; ++i) k.weights[static_cast<size_t>(i)] /= total;
    return k;
}

template <typename S>
void continuous_embed(const ContinuousEmbedding<S>& e, const std::vector<double>& x,
                      const std::vector<uint8_t>& na, const std::vector<uint8_t>& pad,
                      Tensor<S>& out, std::vector<ContKernel>* cache = nullptr) {
    const auto n = static_cast<int64_t>(x.size());
    const int64_t d = e.d();
    if (cache) cache->assign(static_cast<size_t>(n), ContKernel{});
    for (int64_t i = 0; i < n; ++i) {
        const auto si = static_cast<size_t>(i);
        S* dst = out.data() + i * d;
        std::fill(dst, dst + d, S{0});
        if (!pad.empty() && pad[si]) continue;
        const ContKernel k = continuous_kernel(e, x[si], !na.empty() && na[si]);
        if (cache) (*cache)[si] = k;
        for (int c = 0; c < k.n; ++c) {
            const S* row = e.table.value.data() + static_cast<int64_t>(k.rows[static_cast<size_t>(c)]) * d;
            const S w = static_cast<S>(k.weights[static_cast<size_t>(c)]);
            for (int64_t j = 0; j < d; ++j) dst[j] += w * row[j];
        }
    }
}

template <typename S>
void continuous_embed_backward(const std::vector<ContKernel>& kernels, const Tensor<S>& dout,
                               Tensor<S>& dtable) {
    const int64_t d = dtable.dim(1);
    for (size_t i = 0; i < kernels.size(); ++i) {
        const ContKernel& k = kernels[i];
        const S* src = dout.data() + static_cast<int64_t>(i) * d;
        for (int c = 0; c < k.n; ++c) {
            S* dst = dtable.data() + static_cast<int64_t>(k.rows[static_cast<size_t>(c)]) * d;
            const S w = static_cast<S>(k.weights[static_cast<size_t>(c)]);
            for (int64_t j = 0; j < d; ++j) dst[j] += w * src[j];
        }
    }
}

// ---------------------------------------------------------------------------
// static per-content features, index-aligned with the content table
// ---------------------------------------------------------------------------

struct ContentFeatures {
    std::vector<int8_t> kind, part;
    std::vector<int32_t> tag_offset;  // CSR: tags of content c are
    std::vector<int32_t> tag_index;   // tag_index[tag_offset[c] .. tag_offset[c+1])
    std::vector<double> popularity;
    std::vector<double> difficulty;
    std::vector<uint8_t> stats_na;  // lectures carry no popularity/difficulty

    int64_t num_contents() const { return static_cast<int64_t>(kind.size()) - 1; }
};

// stats_override replaces per-question popularity/difficulty (train-split
// recomputation); pass nullptr to keep the prepare-time values
inline ContentFeatures build_content_features(const PreparedData& d,
                                              const ContentStats* stats_override = nullptr) {
    ContentFeatures f;
    const size_t n = d.contents.size();
    f.kind.assign(n, 0);
    f.part.assign(n, 0);
    f.tag_offset.assign(n + 1, 0);
    f.popularity.assign(n, 0.0);
    f.difficulty.assign(n, 0.5);
    f.stats_na.assign(n, 1);
    for (size_t c = 1; c < n; ++c) {
        const ContentRecord& r = d.contents[c];
        f.kind[c] = r.kind;
        f.part[c] = r.part;
        f.tag_offset[c + 1] = f.tag_offset[c] + static_cast<int32_t>(r.tags.size());
        for (int32_t t : r.tags) f.tag_index.push_back(t);
        const bool is_question = r.kind == kKindQuestion;
        f.stats_na[c] = is_question ? 0 : 1;
        if (is_question) {
            if (stats_override) {
                f.popularity[c] = static_cast<double>(stats_override->popularity[c]);
                f.difficulty[c] = stats_override->difficulty[c];
            } else {
                f.popularity[c] = static_cast<double>(r.popularity);
                f.difficulty[c] = r.difficulty;
            }
        }
    }
    f.tag_offset[0] = 0;
    return f;
}

// ---------------------------------------------------------------------------
// content embedding: concat of six slots, then a learned layer norm per row.
// Pad (index 0) bypasses the norm and stays exactly zero.
// ---------------------------------------------------------------------------

template <typename S>
struct ContentEmbedding {
    EmbeddingTable<S> id;    // [num_contents+1, d_id]
    EmbeddingTable<S> part;  // [kPartCount, d_part]
    EmbeddingTable<S> kind;  // [kKindCount, d_kind]
    EmbeddingTable<S> tag;   // [num_tags+2, d_tag]
    ContinuousEmbedding<S> popularity;
    ContinuousEmbedding<S> difficulty;
    Parameter<S> ln_gain, ln_bias;
    bool use_layer_norm = true;

    ContentEmbedding(int64_t num_contents, int64_t num_tags, int64_t d_id, int64_t d_part,
                     int64_t d_kind, int64_t d_tag, int64_t d_pop, int64_t d_diff, int64_t v_pop,
                     int64_t v_diff, int window, double pop_x_max, Rng& rng)
        : id("content.id", num_contents + 1, d_id, rng),
          part("content.part", kPartCount, d_part, rng),
          kind("content.kind", kKindCount, d_kind, rng),
          tag("content.tag", num_tags + 2, d_tag, rng),
          popularity("content.popularity", v_pop, d_pop, window, pop_x_max, false, rng),
          difficulty("content.difficulty", v_diff, d_diff, window, 1.0, true, rng),
          ln_gain("content.ln_gain", Tensor<S>::full({d_id + d_part + d_kind + d_tag + d_pop + d_diff}, S{1})),
          ln_bias("content.ln_bias", Tensor<S>::zeros({d_id + d_part + d_kind + d_tag + d_pop + d_diff})) {}

    int64_t d_content() const { return ln_gain.value.size(); }
};

template <typename S>
struct ContentEmbedCache {
    std::vector<int32_t> idx;  // the positions' content indices
    Tensor<S> pre;             // [N, d_content] concat before the norm
    std::vector<ContKernel> pop_kernels, diff_kernels;
    Tensor<S> xhat;  // [N, d_content]
    Tensor<S> rstd;  // [N]; 0 marks a bypassed (pad) row
};

template <typename S>
void content_embed_forward(const ContentEmbedding<S>& e, const ContentFeatures& f,
                           const std::vector<int32_t>& idx, Tensor<S>& out,
                           ContentEmbedCache<S>* cache) {
    const auto n = static_cast<int64_t>(idx.size());
    const int64_t dc = e.d_content();
    const int64_t d_id = e.id.d(), d_part = e.part.d(), d_kind = e.kind.d(), d_tag = e.tag.d();
    const int64_t d_pop = e.popularity.d(), d_diff = e.difficulty.d();

    Tensor<S> pre = Tensor<S>::zeros({n, dc});
    std::vector<ContKernel> pop_k(static_cast<size_t>(n)), diff_k(static_cast<size_t>(n));

    for (int64_t i = 0; i < n; ++i) {
        const int64_t c = idx[static_cast<size_t>(i)];
        if (c == 0) continue;  // pad row stays zero
        if (c < 0 || c > f.num_contents())
            throw DataError("content index " + std::to_string(c) + " has no metadata");
        S* row = pre.data() + i * dc;
        int64_t off = 0;
        const auto sc = static_cast<size_t>(c);

        std::copy(e.id.weight.value.data() + c * d_id, e.id.weight.value.data() + (c + 1) * d_id,
                  row + off);
        off += d_id;
        const S* psrc = e.part.weight.value.data() + static_cast<int64_t>(f.part[sc]) * d_part;
        std::copy(psrc, psrc + d_part, row + off);
        off += d_part;
        const S* ksrc = e.kind.weight.value.data() + static_cast<int64_t>(f.kind[sc]) * d_kind;
        std::copy(ksrc, ksrc + d_kind, row + off);
        off += d_kind;
        // tags: mean of the content's tag rows; none → zero slot
        const int32_t t0 = f.tag_offset[sc], t1 = f.tag_offset[sc + 1];
        if (t1 > t0) {
            const S inv = S{1} / static_cast<S>(t1 - t0);
            for (int32_t t = t0; t < t1; ++t) {
                const S* tsrc =
                    e.tag.weight.value.data() + static_cast<int64_t>(f.tag_index[static_cast<size_t>(t)]) * d_tag;
                for (int64_t j = 0; j < d_tag; ++j) row[off + j] += inv * tsrc[j];
            }
        }
        off += d_tag;
        const bool na = f.stats_na[sc] != 0;
        const ContKernel pk = continuous_kernel(e.popularity, f.popularity[sc], na);
        for (int q = 0; q < pk.n; ++q) {
            const S* src =
                e.popularity.table.value.data() + static_cast<int64_t>(pk.rows[static_cast<size_t>(q)]) * d_pop;
            const S w = static_cast<S>(pk.weights[static_cast<size_t>(q)]);
            for (int64_t j = 0; j < d_pop; ++j) row[off + j] += w * src[j];
        }
        pop_k[static_cast<size_t>(i)] = pk;
        off += d_pop;
        const ContKernel dk = continuous_kernel(e.difficulty, f.difficulty[sc], na);
        for (int q = 0; q < dk.n; ++q) {
            const S* src =
                e.difficulty.table.value.data() + static_cast<int64_t>(dk.rows[static_cast<size_t>(q)]) * d_diff;
            const S w = static_cast<S>(dk.weights[static_cast<size_t>(q)]);
            for (int64_t j = 0; j < d_diff; ++j) row[off + j] += w * src[j];
        }
        diff_k[static_cast<size_t>(i)] = dk;
    }

    // row-wise norm with pad bypass
    Tensor<S> xhat = Tensor<S>::zeros({n, dc});
    Tensor<S> rstd = Tensor<S>::zeros({n});
    for (int64_t i = 0; i < n; ++i) {
        S* dst = out.data() + i * dc;
        const S* src = pre.data() + i * dc;
        if (idx[static_cast<size_t>(i)] == 0) {
            std::fill(dst, dst + dc, S{0});
            continue;
        }
        if (!e.use_layer_norm) {
            std::copy(src, src + dc, dst);
            continue;
        }
        S mean = S{0};
        for (int64_t j = 0; j < dc; ++j) mean += src[j];
        mean /= static_cast<S>(dc);
        S var = S{0};
        for (int64_t j = 0; j < dc; ++j) {
            const S dvj = src[j] - mean;
            var += dvj * dvj;
        }
        var /= static_cast<S>(dc);
        const S r = S{1} / std::sqrt(var + static_cast<S>(kLayerNormEps));
        rstd[i] = r;
        S* xh = xhat.data() + i * dc;
        for (int64_t j = 0; j < dc; ++j) {
            xh[j] = (src[j] - mean) * r;
            dst[j] = xh[j] * e.ln_gain.value[j] + e.ln_bias.value[j];
        }
    }

    if (cache) {
        cache->idx = idx;
        cache->pre = std::move(pre);
        cache->pop_kernels = std::move(pop_k);
        cache->diff_kernels = std::move(diff_k);
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
}

template <typename S>
void content_embed_backward(ContentEmbedding<S>& e, const ContentFeatures& f,
                            const ContentEmbedCache<S>& cache, const Tensor<S>& dout) {
    const auto n = static_cast<int64_t>(cache.idx.size());
    const int64_t dc = e.d_content();
    const int64_t d_id = e.id.d(), d_part = e.part.d(), d_kind = e.kind.d(), d_tag = e.tag.d();
    const int64_t d_pop = e.popularity.d(), d_diff = e.difficulty.d();

    Tensor<S> dpre = Tensor<S>::zeros({n, dc});
    for (int64_t i = 0; i < n; ++i) {
        if (cache.idx[static_cast<size_t>(i)] == 0) continue;
        const S* dy = dout.data() + i * dc;
        S* dx = dpre.data() + i * dc;
        if (!e.use_layer_norm) {
            std::copy(dy, dy + dc, dx);
            continue;
        }
        const S* xh = cache.xhat.data() + i * dc;
        const S r = cache.rstd[i];
        S sum_dxhat = S{0}, sum_dxhat_xhat = S{0};
        for (int64_t j = 0; j < dc; ++j) {
            const S dxh = dy[j] * e.ln_gain.value[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
            e.ln_gain.grad[j] += dy[j] * xh[j];
            e.ln_bias.grad[j] += dy[j];
        }
        const S inv_d = S{1} / static_cast<S>(dc);
        for (int64_t j = 0; j < dc; ++j) {
            const S dxh = dy[j] * e.ln_gain.value[j];
            dx[j] = r * (dxh - inv_d * sum_dxhat - xh[j] * inv_d * sum_dxhat_xhat);
        }
    }

    for (int64_t i = 0; i < n; ++i) {
        const int64_t c = cache.idx[static_cast<size_t>(i)];
        if (c == 0) continue;
        const auto sc = static_cast<size_t>(c);
        const S* drow = dpre.data() + i * dc;
        int64_t off = 0;
        {
            S* dst = e.id.weight.grad.data() + c * d_id;
            for (int64_t j = 0; j < d_id; ++j) dst[j] += drow[off + j];
            off += d_id;
        }
        {
            S* dst = e.part.weight.grad.data() + static_cast<int64_t>(f.part[sc]) * d_part;
            for (int64_t j = 0; j < d_part; ++j) dst[j] += drow[off + j];
            off += d_part;
        }
        {
            S* dst = e.kind.weight.grad.data() + static_cast<int64_t>(f.kind[sc]) * d_kind;
            for (int64_t j = 0; j < d_kind; ++j) dst[j] += drow[off + j];
            off += d_kind;
        }
        {
            const int32_t t0 = f.tag_offset[sc], t1 = f.tag_offset[sc + 1];
            if (t1 > t0) {
                const S inv = S{1} / static_cast<S>(t1 - t0);
                for (int32_t t = t0; t < t1; ++t) {
                    S* dst = e.tag.weight.grad.data() +
                             static_cast<int64_t>(f.tag_index[static_cast<size_t>(t)]) * d_tag;
                    for (int64_t j = 0; j < d_tag; ++j) dst[j] += inv * drow[off + j];
                }
            }
            off += d_tag;
        }
        {
            const ContKernel& k = cache.pop_kernels[static_cast<size_t>(i)];
            for (int q = 0; q < k.n; ++q) {
                S* dst = e.popularity.table.grad.data() +
                         static_cast<int64_t>(k.rows[static_cast<size_t>(q)]) * d_pop;
                const S w = static_cast<S>(k.weights[static_cast<size_t>(q)]);
                for (int64_t j = 0; j < d_pop; ++j) dst[j] += w * drow[off + j];
            }
            off += d_pop;
        }
        {
            const ContKernel& k = cache.diff_kernels[static_cast<size_t>(i)];
            for (int q = 0; q < k.n; ++q) {
                S* dst = e.difficulty.table.grad.data() +
                         static_cast<int64_t>(k.rows[static_cast<size_t>(q)]) * d_diff;
                const S w = static_cast<S>(k.weights[static_cast<size_t>(q)]);
                for (int64_t j = 0; j < d_diff; ++j) dst[j] += w * drow[off + j];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// encoder/decoder input composition. Encoder sees everything; decoder sees
// only content + time lag.
// ---------------------------------------------------------------------------

template <typename S>
struct FeatureEmbeddings {
    ContentEmbedding<S> content;
    ContinuousEmbedding<S> lag;      // ms, log-mapped
    ContinuousEmbedding<S> elapsed;  // ms, log-mapped
    EmbeddingTable<S> ac, ua, expl;
    Parameter<S> enc_W, enc_b;
    Parameter<S> dec_W, dec_b;

    FeatureEmbeddings(int64_t num_contents, int64_t num_tags, int64_t d_embed, int64_t d_model,
                      int window, double lag_x_max, double elapsed_x_max, double pop_x_max,
                      int64_t d_id, int64_t d_part, int64_t d_kind, int64_t d_tag, int64_t d_pop,
                      int64_t d_diff, int64_t v_time, int64_t v_stats, Rng& rng)
        : content(num_contents, num_tags, d_id, d_part, d_kind, d_tag, d_pop, d_diff, v_stats,
                  v_stats, window, pop_x_max, rng),
          lag("lag", v_time, d_embed, window, lag_x_max, false, rng),
          elapsed("elapsed", v_time, d_embed, window, elapsed_x_max, false, rng),
          ac("answered_correctly", kAnsweredCorrectlyCount, d_embed, rng),
          ua("user_answer", kUserAnswerCount, d_embed, rng),
          expl("had_explanation", kHadExplanationCount, d_embed, rng),
          enc_W("enc_in.W",
                init_weight<S>({content.d_content() + 5 * d_embed, d_model}, rng)),
          enc_b("enc_in.b", Tensor<S>::zeros({d_model})),
          dec_W("dec_in.W", init_weight<S>({content.d_content() + d_embed, d_model}, rng)),
          dec_b("dec_in.b", Tensor<S>::zeros({d_model})) {}
};

template <typename S>
struct ComposeCache {
    ContentEmbedCache<S> content;
    Tensor<S> content_out;  // [N, d_content]
    std::vector<ContKernel> lag_kernels, elapsed_kernels;
    Tensor<S> lag_out, elapsed_out, ac_out, ua_out, expl_out;  // [N, d_embed]
    Tensor<S> enc_concat, dec_concat;
    std::vector<int8_t> ac_idx, ua_idx, expl_idx;  // pad-masked indices
};

namespace detail {

// copy [N, w] block into columns [at, at+w) of [N, W]
template <typename S>
void paste_cols(const Tensor<S>& part, Tensor<S>& whole, int64_t at) {
    const int64_t n = part.dim(0), w = part.dim(1), W = whole.dim(1);
    for (int64_t i = 0; i < n; ++i)
        std::copy(part.data() + i * w, part.data() + (i + 1) * w, whole.data() + i * W + at);
}

template <typename S>
void slice_cols_add(const Tensor<S>& whole, Tensor<S>& part, int64_t at) {
    const int64_t n = part.dim(0), w = part.dim(1), W = whole.dim(1);
    for (int64_t i = 0; i < n; ++i) {
        const S* src = whole.data() + i * W + at;
        S* dst = part.data() + i * w;
        for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
    }
}

}  // namespace detail

template <typename S>
void compose_inputs(const FeatureEmbeddings<S>& emb, const ContentFeatures& features,
                    const Batch<S>& batch, Tensor<S>& enc_in, Tensor<S>& dec_in,
                    ComposeCache<S>& cache) {
    const int64_t N = batch.B * batch.L;
    const int64_t dc = emb.content.d_content();
    const int64_t de = emb.lag.d();

    cache.content_out = Tensor<S>::zeros({N, dc});
    content_embed_forward(emb.content, features, batch.content, cache.content_out,
                          &cache.content);

    std::vector<double> lag_x(static_cast<size_t>(N)), elapsed_x(static_cast<size_t>(N));
    std::vector<uint8_t> no_na(static_cast<size_t>(N), 0), elapsed_na(static_cast<size_t>(N), 0);
    std::vector<uint8_t> pad(batch.pad.v.begin(), batch.pad.v.end());
    for (int64_t i = 0; i < N; ++i) {
        const auto si = static_cast<size_t>(i);
        lag_x[si] = static_cast<double>(batch.time_lag[si]);
        const int64_t el = batch.elapsed_ms[si];
        elapsed_na[si] = el == kElapsedNA ? 1 : 0;
        elapsed_x[si] = elapsed_na[si] ? 0.0 : static_cast<double>(el);
    }
    cache.lag_out = Tensor<S>::zeros({N, de});
    cache.elapsed_out = Tensor<S>::zeros({N, de});
    continuous_embed(emb.lag, lag_x, no_na, pad, cache.lag_out, &cache.lag_kernels);
    continuous_embed(emb.elapsed, elapsed_x, elapsed_na, pad, cache.elapsed_out,
                     &cache.elapsed_kernels);

    // categorical planes are already pad-safe: pad positions carry index 0
    cache.ac_idx.assign(batch.answered_correctly.begin(), batch.answered_correctly.end());
    cache.ua_idx.assign(batch.user_answer.begin(), batch.user_answer.end());
    cache.expl_idx.assign(batch.had_explanation.begin(), batch.had_explanation.end());
    cache.ac_out = Tensor<S>::zeros({N, de});
    cache.ua_out = Tensor<S>::zeros({N, de});
    cache.expl_out = Tensor<S>::zeros({N, de});
    embed_rows(emb.ac.weight.value, cache.ac_idx, cache.ac_out);
    embed_rows(emb.ua.weight.value, cache.ua_idx, cache.ua_out);
    embed_rows(emb.expl.weight.value, cache.expl_idx, cache.expl_out);

    cache.enc_concat = Tensor<S>::zeros({N, dc + 5 * de});
    detail::paste_cols(cache.content_out, cache.enc_concat, 0);
    detail::paste_cols(cache.lag_out, cache.enc_concat, dc);
    detail::paste_cols(cache.ac_out, cache.enc_concat, dc + de);
    detail::paste_cols(cache.ua_out, cache.enc_concat, dc + 2 * de);
    detail::paste_cols(cache.elapsed_out, cache.enc_concat, dc + 3 * de);
    detail::paste_cols(cache.expl_out, cache.enc_concat, dc + 4 * de);

    cache.dec_concat = Tensor<S>::zeros({N, dc + de});
    detail::paste_cols(cache.content_out, cache.dec_concat, 0);
    detail::paste_cols(cache.lag_out, cache.dec_concat, dc);

    enc_in = affine(cache.enc_concat, emb.enc_W.value, emb.enc_b.value);
    dec_in = affine(cache.dec_concat, emb.dec_W.value, emb.dec_b.value);
    enc_in.shape = {batch.B, batch.L, emb.enc_b.value.size()};
    dec_in.shape = {batch.B, batch.L, emb.dec_b.value.size()};
}

template <typename S>
void compose_inputs_backward(FeatureEmbeddings<S>& emb, const ContentFeatures& features,
                             const ComposeCache<S>& cache, const Tensor<S>& denc_in,
                             const Tensor<S>& ddec_in) {
    const int64_t N = cache.enc_concat.dim(0);
    const int64_t dc = emb.content.d_content();
    const int64_t de = emb.lag.d();
    const int64_t d_model = emb.enc_b.value.size();

    Tensor<S> denc_flat = denc_in;
    denc_flat.shape = {N, d_model};
    Tensor<S> ddec_flat = ddec_in;
    ddec_flat.shape = {N, d_model};

    Tensor<S> denc_concat = Tensor<S>::zeros(cache.enc_concat.shape);
    Tensor<S> ddec_concat = Tensor<S>::zeros(cache.dec_concat.shape);
    affine_backward(cache.enc_concat, emb.enc_W.value, denc_flat, &denc_concat, emb.enc_W.grad,
                    emb.enc_b.grad);
    affine_backward(cache.dec_concat, emb.dec_W.value, ddec_flat, &ddec_concat, emb.dec_W.grad,
                    emb.dec_b.grad);

    // content and lag feed both concats; their slices accumulate
    Tensor<S> dcontent = Tensor<S>::zeros({N, dc});
    detail::slice_cols_add(denc_concat, dcontent, 0);
    detail::slice_cols_add(ddec_concat, dcontent, 0);
    Tensor<S> dlag = Tensor<S>::zeros({N, de});
    detail::slice_cols_add(denc_concat, dlag, dc);
    detail::slice_cols_add(ddec_concat, dlag, dc);
    Tensor<S> dac = Tensor<S>::zeros({N, de});
    detail::slice_cols_add(denc_concat, dac, dc + de);
    Tensor<S> dua = Tensor<S>::zeros({N, de});
    detail::slice_cols_add(denc_concat, dua, dc + 2 * de);
    Tensor<S> delapsed = Tensor<S>::zeros({N, de});
    detail::slice_cols_add(denc_concat, delapsed, dc + 3 * de);
    Tensor<S> dexpl = Tensor<S>::zeros({N, de});
    detail::slice_cols_add(denc_concat, dexpl, dc + 4 * de);

    content_embed_backward(emb.content, features, cache.content, dcontent);
    continuous_embed_backward(cache.lag_kernels, dlag, emb.lag.table.grad);
    continuous_embed_backward(cache.elapsed_kernels, delapsed, emb.elapsed.table.grad);
    embed_rows_backward(cache.ac_idx, dac, emb.ac.weight.grad);
    embed_rows_backward(cache.ua_idx, dua, emb.ua.weight.grad);
    embed_rows_backward(cache.expl_idx, dexpl, emb.expl.weight.grad);
}

}  // namespace ktf
