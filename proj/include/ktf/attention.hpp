#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "ktf/errors.hpp"
#include "ktf/ops.hpp"
#include "ktf/rng.hpp"
#include "ktf/tensor.hpp"

namespace ktf {

// Multihead attention with a per-head time decay: each head subtracts
// w_h * log(gap) from its logits, so older keys lose weight like gap^(-w_h).
template <typename S>
struct MultiheadParams {
    Parameter<S> Wq, Wk, Wv, Wo;  // [d_model, d_model], no biases
    Parameter<S> w;               // [H] decay exponents, kept >= 0
    int64_t H = 1;

    MultiheadParams(const std::string& prefix, int64_t d_model, int64_t heads, bool time_weighted,
                    Rng& rng)
        : Wq(prefix + ".Wq", init_weight<S>({d_model, d_model}, rng)),
          Wk(prefix + ".Wk", init_weight<S>({d_model, d_model}, rng)),
          Wv(prefix + ".Wv", init_weight<S>({d_model, d_model}, rng)),
          Wo(prefix + ".Wo", init_weight<S>({d_model, d_model}, rng)),
          w(prefix + ".w", Tensor<S>::zeros({heads})),
          H(heads) {
        if (heads < 1 || d_model % heads != 0)
            throw ConfigError(prefix + ": d_model " + std::to_string(d_model) +
                              " not divisible by heads " + std::to_string(heads));
        if (time_weighted) {
            for (int64_t h = 0; h < heads; ++h) w.value[h] = static_cast<S>(rng.uniform());
        } else {
            w.trainable = false;
        }
    }

    int64_t d_model() const { return Wq.value.dim(0); }
    int64_t d_head() const { return d_model() / H; }

    // non-negativity projection, applied after each optimizer step
    void clamp_w() {
        for (int64_t h = 0; h < H; ++h)
            if (w.value[h] < S{0}) w.value[h] = S{0};
    }
};

namespace detail {

// masked softmax over one logits row; masked entries 0, empty rows all-zero
template <typename S>
void masked_softmax_row(const S* logits, const uint8_t* mask, S* out, int64_t n) {
    S mx = S{0};
    bool any = false;
    for (int64_t j = 0; j < n; ++j) {
        if (!mask[j]) continue;
        if (!any || logits[j] > mx) mx = logits[j];
        any = true;
    }
    if (!any) {
        for (int64_t j = 0; j < n; ++j) out[j] = S{0};
        return;
    }
    S total = S{0};
    for (int64_t j = 0; j < n; ++j) {
        out[j] = mask[j] ? std::exp(logits[j] - mx) : S{0};
        total += out[j];
    }
    const S inv = S{1} / total;
    for (int64_t j = 0; j < n; ++j) out[j] *= inv;
}

// dlogits += p .* (dp - sum(p .* dp)) on mask-true entries
template <typename S>
void masked_softmax_row_backward(const S* p, const uint8_t* mask, const S* dp, S* dlogits,
                                 int64_t n) {
    S dot = S{0};
    for (int64_t j = 0; j < n; ++j)
        if (mask[j]) dot += p[j] * dp[j];
    for (int64_t j = 0; j < n; ++j) dlogits[j] = mask[j] ? p[j] * (dp[j] - dot) : S{0};
}

}  // namespace detail

// Single-slice decayed attention: softmax(Q K^T / sqrt(d_k) - w * logT) V.
template <typename S>
Tensor<S> scaled_dot_attention_decayed(const Tensor<S>& Q, const Tensor<S>& K, const Tensor<S>& V,
                                       const Tensor<S>& logT, const Tensor<uint8_t>& mask, S w,
                                       Tensor<S>* probs_out = nullptr) {
    if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2)
        throw ShapeError("attention expects rank-2 Q/K/V");
    const int64_t Lq = Q.dim(0), dk = Q.dim(1);
    const int64_t Lk = K.dim(0), dv = V.dim(1);
    if (K.dim(1) != dk) throw ShapeError("attention: K width != Q width");
    if (V.dim(0) != Lk) throw ShapeError("attention: V rows != K rows");
    if (logT.shape != std::vector<int64_t>{Lq, Lk} || mask.shape != std::vector<int64_t>{Lq, Lk})
        throw ShapeError("attention: logT/mask must be [L_q, L_k]");

    Tensor<S> logits = Tensor<S>::zeros({Lq, Lk});
    const S scale = S{1} / std::sqrt(static_cast<S>(dk));
    as_matrix(logits, Lq, Lk).noalias() = as_matrix(Q, Lq, dk) * as_matrix(K, Lk, dk).transpose();
    for (int64_t i = 0; i < Lq * Lk; ++i) logits[i] = logits[i] * scale - w * logT[i];

    Tensor<S> probs = Tensor<S>::zeros({Lq, Lk});
    for (int64_t i = 0; i < Lq; ++i)
        detail::masked_softmax_row(logits.data() + i * Lk, mask.data() + i * Lk,
                                   probs.data() + i * Lk, Lk);

    Tensor<S> out = Tensor<S>::zeros({Lq, dv});
    as_matrix(out, Lq, dv).noalias() = as_matrix(probs, Lq, Lk) * as_matrix(V, Lk, dv);
    if (probs_out) *probs_out = std::move(probs);
    return out;
}

template <typename S>
struct AttentionCache {
    Tensor<S> q, k, v;   // [B, L, d_model] projected inputs
    Tensor<S> probs;     // [B, H, L, L]
    Tensor<S> ctx;       // [B, L, d_model] head-concat before W_O
};

// x_q: [B, L, d_model] queries; x_kv: [B, L, d_model] keys/values.
// logT, mask: [B, L, L]. When time_weighted is false the decay term is
// skipped entirely (w stays frozen at zero).
template <typename S>
Tensor<S> multihead_attention(const MultiheadParams<S>& p, const Tensor<S>& x_q,
                              const Tensor<S>& x_kv, const Tensor<S>& logT,
                              const Tensor<uint8_t>& mask, bool time_weighted,
                              AttentionCache<S>* cache) {
    const int64_t B = x_q.dim(0), L = x_q.dim(1), d = p.d_model();
    const int64_t H = p.H, dh = p.d_head();
    if (x_q.dim(2) != d || x_kv.shape != x_q.shape) throw ShapeError("attention: input width mismatch");
    if (logT.shape != std::vector<int64_t>{B, L, L} || mask.shape != std::vector<int64_t>{B, L, L})
        throw ShapeError("attention: logT/mask must be [B, L, L]");
    const int64_t N = B * L;

    Tensor<S> q = Tensor<S>::zeros({B, L, d});
    Tensor<S> k = Tensor<S>::zeros({B, L, d});
    Tensor<S> v = Tensor<S>::zeros({B, L, d});
    as_matrix(q, N, d).noalias() = as_matrix(x_q, N, d) * as_matrix(p.Wq.value, d, d);
    as_matrix(k, N, d).noalias() = as_matrix(x_kv, N, d) * as_matrix(p.Wk.value, d, d);
    as_matrix(v, N, d).noalias() = as_matrix(x_kv, N, d) * as_matrix(p.Wv.value, d, d);

    Tensor<S> probs = Tensor<S>::zeros({B, H, L, L});
    Tensor<S> ctx = Tensor<S>::zeros({B, L, d});
    Tensor<S> logits = Tensor<S>::zeros({L, L});
    const S scale = S{1} / std::sqrt(static_cast<S>(dh));

    for (int64_t b = 0; b < B; ++b) {
        ECMap<S> qb(q.data() + b * L * d, L, d);
        ECMap<S> kb(k.data() + b * L * d, L, d);
        ECMap<S> vb(v.data() + b * L * d, L, d);
        EMap<S> cb(ctx.data() + b * L * d, L, d);
        const S* logT_b = logT.data() + b * L * L;
        const uint8_t* mask_b = mask.data() + b * L * L;
        for (int64_t h = 0; h < H; ++h) {
            as_matrix(logits, L, L).noalias() =
                qb.middleCols(h * dh, dh) * kb.middleCols(h * dh, dh).transpose();
            const S wh = p.w.value[h];
            if (time_weighted) {
                for (int64_t i = 0; i < L * L; ++i) logits[i] = logits[i] * scale - wh * logT_b[i];
            } else {
                for (int64_t i = 0; i < L * L; ++i) logits[i] *= scale;
            }
            S* probs_bh = probs.data() + (b * H + h) * L * L;
            for (int64_t i = 0; i < L; ++i)
                detail::masked_softmax_row(logits.data() + i * L, mask_b + i * L,
                                           probs_bh + i * L, L);
            cb.middleCols(h * dh, dh).noalias() =
                ECMap<S>(probs_bh, L, L) * vb.middleCols(h * dh, dh);
        }
    }

    Tensor<S> out = Tensor<S>::zeros({B, L, d});
    as_matrix(out, N, d).noalias() = as_matrix(ctx, N, d) * as_matrix(p.Wo.value, d, d);
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->ctx = std::move(ctx);
    }
    return out;
}

// Accumulates into dx_q, dx_kv and the parameter grads. For self-attention
// callers may pass the same tensor for both gradient sinks.
template <typename S>
void multihead_attention_backward(MultiheadParams<S>& p, const Tensor<S>& x_q,
                                  const Tensor<S>& x_kv, const Tensor<S>& logT,
                                  const Tensor<uint8_t>& mask, bool time_weighted,
                                  const AttentionCache<S>& cache, const Tensor<S>& dout,
                                  Tensor<S>& dx_q, Tensor<S>& dx_kv) {
    const int64_t B = x_q.dim(0), L = x_q.dim(1), d = p.d_model();
    const int64_t H = p.H, dh = p.d_head();
    const int64_t N = B * L;
    check_same_shape(dout, x_q, "attention backward dout");

    // out = ctx * Wo
    Tensor<S> dctx = Tensor<S>::zeros({B, L, d});
    as_matrix(dctx, N, d).noalias() = as_matrix(dout, N, d) * as_matrix(p.Wo.value, d, d).transpose();
    as_matrix(p.Wo.grad, d, d).noalias() += as_matrix(cache.ctx, N, d).transpose() * as_matrix(dout, N, d);

    Tensor<S> dq = Tensor<S>::zeros({B, L, d});
    Tensor<S> dk = Tensor<S>::zeros({B, L, d});
    Tensor<S> dv = Tensor<S>::zeros({B, L, d});
    Tensor<S> dprobs = Tensor<S>::zeros({L, L});
    Tensor<S> dlogits = Tensor<S>::zeros({L, L});
    const S scale = S{1} / std::sqrt(static_cast<S>(dh));

    for (int64_t b = 0; b < B; ++b) {
        ECMap<S> qb(cache.q.data() + b * L * d, L, d);
        ECMap<S> kb(cache.k.data() + b * L * d, L, d);
        ECMap<S> vb(cache.v.data() + b * L * d, L, d);
        ECMap<S> dcb(dctx.data() + b * L * d, L, d);
        EMap<S> dqb(dq.data() + b * L * d, L, d);
        EMap<S> dkb(dk.data() + b * L * d, L, d);
        EMap<S> dvb(dv.data() + b * L * d, L, d);
        const S* logT_b = logT.data() + b * L * L;
        const uint8_t* mask_b = mask.data() + b * L * L;
        for (int64_t h = 0; h < H; ++h) {
            const S* probs_bh = cache.probs.data() + (b * H + h) * L * L;
            as_matrix(dprobs, L, L).noalias() =
                dcb.middleCols(h * dh, dh) * vb.middleCols(h * dh, dh).transpose();
            dvb.middleCols(h * dh, dh).noalias() +=
                ECMap<S>(probs_bh, L, L).transpose() * dcb.middleCols(h * dh, dh);
            for (int64_t i = 0; i < L; ++i)
                detail::masked_softmax_row_backward(probs_bh + i * L, mask_b + i * L,
                                                    dprobs.data() + i * L, dlogits.data() + i * L,
                                                    L);
            if (time_weighted && p.w.trainable) {
                S dw = S{0};
                for (int64_t i = 0; i < L * L; ++i) dw -= dlogits[i] * logT_b[i];
                p.w.grad[h] += dw;
            }
            dqb.middleCols(h * dh, dh).noalias() +=
                scale * (as_matrix(dlogits, L, L) * kb.middleCols(h * dh, dh));
            dkb.middleCols(h * dh, dh).noalias() +=
                scale * (as_matrix(dlogits, L, L).transpose() * qb.middleCols(h * dh, dh));
        }
    }

    as_matrix(dx_q, N, d).noalias() += as_matrix(dq, N, d) * as_matrix(p.Wq.value, d, d).transpose();
    as_matrix(p.Wq.grad, d, d).noalias() += as_matrix(x_q, N, d).transpose() * as_matrix(dq, N, d);
    as_matrix(dx_kv, N, d).noalias() += as_matrix(dk, N, d) * as_matrix(p.Wk.value, d, d).transpose();
    as_matrix(p.Wk.grad, d, d).noalias() += as_matrix(x_kv, N, d).transpose() * as_matrix(dk, N, d);
    as_matrix(dx_kv, N, d).noalias() += as_matrix(dv, N, d) * as_matrix(p.Wv.value, d, d).transpose();
    as_matrix(p.Wv.grad, d, d).noalias() += as_matrix(x_kv, N, d).transpose() * as_matrix(dv, N, d);
}

}  // namespace ktf
