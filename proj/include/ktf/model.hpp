#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ktf/attention.hpp"
#include "ktf/embeddings.hpp"
#include "ktf/errors.hpp"
#include "ktf/ops.hpp"
#include "ktf/rng.hpp"
#include "ktf/tensor.hpp"
#include "ktf/windows.hpp"

namespace ktf {

struct ModelConfig {
    int64_t d_model = 512;
    int64_t heads = 8;
    int64_t encoder_layers = 4;
    int64_t decoder_layers = 4;
    int64_t d_ff = 2048;
    int64_t d_embed = 128;
    int64_t seq_len = 1024;

    // content-slot budget
    int64_t d_id = 64, d_part = 16, d_kind = 16, d_tag = 64, d_pop = 32, d_diff = 32;
    // continuous index maps
    int64_t v_time = 300, v_stats = 100;
    int window = 5;
    double lag_x_max = 2592000000.0;  // 30 days in ms
    double elapsed_x_max = 300000.0;  // 300 s in ms
    double pop_x_max = 100000.0;

    // ablation toggles
    bool time_weighted = true;
    bool continuous_embedding = true;
    bool content_layer_norm = true;

    // data-dependent vocabulary
    int64_t num_contents = 0;
    int64_t num_tags = 0;

    int64_t d_content() const { return d_id + d_part + d_kind + d_tag + d_pop + d_diff; }

    void validate() const {
        auto positive = [](int64_t v, const char* what) {
            if (v < 1) throw ConfigError(std::string(what) + " must be >= 1");
        };
        positive(d_model, "d_model");
        positive(heads, "heads");
        positive(encoder_layers, "encoder_layers");
        positive(decoder_layers, "decoder_layers");
        positive(d_ff, "d_ff");
        positive(d_embed, "d_embed");
        positive(seq_len, "seq_len");
        positive(d_id, "d_id");
        positive(d_part, "d_part");
        positive(d_kind, "d_kind");
        positive(d_tag, "d_tag");
        positive(d_pop, "d_pop");
        positive(d_diff, "d_diff");
        positive(v_time, "v_time");
        positive(v_stats, "v_stats");
        positive(num_contents, "num_contents");
        if (num_tags < 0) throw ConfigError("num_tags must be >= 0");
        if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
        if (window < 1 || window % 2 == 0) throw ConfigError("window must be odd >= 1");
    }
};

template <typename S>
struct FeedForward {
    Parameter<S> W1, b1, W2, b2;

    FeedForward(const std::string& prefix, int64_t d_model, int64_t d_ff, Rng& rng)
        : W1(prefix + ".W1", init_weight<S>({d_model, d_ff}, rng)),
          b1(prefix + ".b1", Tensor<S>::zeros({d_ff})),
          W2(prefix + ".W2", init_weight<S>({d_ff, d_model}, rng)),
          b2(prefix + ".b2", Tensor<S>::zeros({d_model})) {}
};

template <typename S>
struct EncoderLayer {
    MultiheadParams<S> attn;
    Parameter<S> ln1_g, ln1_b;
    FeedForward<S> ff;
    Parameter<S> ln2_g, ln2_b;

    EncoderLayer(const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : attn(prefix + ".attn", cfg.d_model, cfg.heads, cfg.time_weighted, rng),
          ln1_g(prefix + ".ln1.gain", Tensor<S>::full({cfg.d_model}, S{1})),
          ln1_b(prefix + ".ln1.bias", Tensor<S>::zeros({cfg.d_model})),
          ff(prefix + ".ff", cfg.d_model, cfg.d_ff, rng),
          ln2_g(prefix + ".ln2.gain", Tensor<S>::full({cfg.d_model}, S{1})),
          ln2_b(prefix + ".ln2.bias", Tensor<S>::zeros({cfg.d_model})) {}
};

template <typename S>
struct DecoderLayer {
    MultiheadParams<S> self_attn;
    Parameter<S> ln1_g, ln1_b;
    MultiheadParams<S> cross_attn;
    Parameter<S> ln2_g, ln2_b;
    FeedForward<S> ff;
    Parameter<S> ln3_g, ln3_b;

    DecoderLayer(const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : self_attn(prefix + ".self", cfg.d_model, cfg.heads, cfg.time_weighted, rng),
          ln1_g(prefix + ".ln1.gain", Tensor<S>::full({cfg.d_model}, S{1})),
          ln1_b(prefix + ".ln1.bias", Tensor<S>::zeros({cfg.d_model})),
          cross_attn(prefix + ".cross", cfg.d_model, cfg.heads, cfg.time_weighted, rng),
          ln2_g(prefix + ".ln2.gain", Tensor<S>::full({cfg.d_model}, S{1})),
          ln2_b(prefix + ".ln2.bias", Tensor<S>::zeros({cfg.d_model})),
          ff(prefix + ".ff", cfg.d_model, cfg.d_ff, rng),
          ln3_g(prefix + ".ln3.gain", Tensor<S>::full({cfg.d_model}, S{1})),
          ln3_b(prefix + ".ln3.bias", Tensor<S>::zeros({cfg.d_model})) {}
};

template <typename S>
struct Model {
    ModelConfig cfg;
    FeatureEmbeddings<S> emb;
    std::vector<EncoderLayer<S>> enc;
    std::vector<DecoderLayer<S>> dec;
    Parameter<S> head_W, head_b;

    Model(const ModelConfig& config, Rng& rng)
        : cfg((config.validate(), config)),
          emb(cfg.num_contents, cfg.num_tags, cfg.d_embed, cfg.d_model, cfg.window, cfg.lag_x_max,
              cfg.elapsed_x_max, cfg.pop_x_max, cfg.d_id, cfg.d_part, cfg.d_kind, cfg.d_tag,
              cfg.d_pop, cfg.d_diff, cfg.v_time, cfg.v_stats, rng),
          head_W("head.W", init_weight<S>({cfg.d_model, 1}, rng)),
          head_b("head.b", Tensor<S>::zeros({1})) {
        if (!cfg.continuous_embedding) {
            emb.lag.discretize = true;
            emb.elapsed.discretize = true;
            emb.content.popularity.discretize = true;
            emb.content.difficulty.discretize = true;
        }
        emb.content.use_layer_norm = cfg.content_layer_norm;
        enc.reserve(static_cast<size_t>(cfg.encoder_layers));
        for (int64_t i = 0; i < cfg.encoder_layers; ++i)
            enc.emplace_back("enc" + std::to_string(i), cfg, rng);
        dec.reserve(static_cast<size_t>(cfg.decoder_layers));
        for (int64_t i = 0; i < cfg.decoder_layers; ++i)
            dec.emplace_back("dec" + std::to_string(i), cfg, rng);
    }

    // stable order: embeddings, encoder stack, decoder stack, head
    std::vector<Parameter<S>*> parameters() {
        std::vector<Parameter<S>*> ps;
        auto& c = emb.content;
        for (Parameter<S>* p :
             {&c.id.weight, &c.part.weight, &c.kind.weight, &c.tag.weight, &c.popularity.table,
              &c.difficulty.table, &c.ln_gain, &c.ln_bias, &emb.lag.table, &emb.elapsed.table,
              &emb.ac.weight, &emb.ua.weight, &emb.expl.weight, &emb.enc_W, &emb.enc_b,
              &emb.dec_W, &emb.dec_b})
            ps.push_back(p);
        auto add_attn = [&ps](MultiheadParams<S>& a) {
            ps.push_back(&a.Wq);
            ps.push_back(&a.Wk);
            ps.push_back(&a.Wv);
            ps.push_back(&a.Wo);
            ps.push_back(&a.w);
        };
        auto add_ff = [&ps](FeedForward<S>& f) {
            ps.push_back(&f.W1);
            ps.push_back(&f.b1);
            ps.push_back(&f.W2);
            ps.push_back(&f.b2);
        };
        for (auto& l : enc) {
            add_attn(l.attn);
            ps.push_back(&l.ln1_g);
            ps.push_back(&l.ln1_b);
            add_ff(l.ff);
            ps.push_back(&l.ln2_g);
            ps.push_back(&l.ln2_b);
        }
        for (auto& l : dec) {
            add_attn(l.self_attn);
            ps.push_back(&l.ln1_g);
            ps.push_back(&l.ln1_b);
            add_attn(l.cross_attn);
            ps.push_back(&l.ln2_g);
            ps.push_back(&l.ln2_b);
            add_ff(l.ff);
            ps.push_back(&l.ln3_g);
            ps.push_back(&l.ln3_b);
        }
        ps.push_back(&head_W);
        ps.push_back(&head_b);
        return ps;
    }

    void zero_grads() {
        for (auto* p : parameters()) p->zero_grad();
    }

    // non-negativity projection for the decay exponents
    void clamp_decay() {
        for (auto& l : enc) l.attn.clamp_w();
        for (auto& l : dec) {
            l.self_attn.clamp_w();
            l.cross_attn.clamp_w();
        }
    }
};

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

template <typename S>
struct EncLayerCache {
    Tensor<S> x_in;
    AttentionCache<S> attn;
    LayerNormCache<S> ln1;
    Tensor<S> n1;     // post-LN1, input to the FFN
    Tensor<S> h_pre;  // FFN inner pre-activation
    Tensor<S> h;      // FFN inner post-ReLU
    LayerNormCache<S> ln2;
};

template <typename S>
struct DecLayerCache {
    Tensor<S> y_in;
    AttentionCache<S> self_attn;
    LayerNormCache<S> ln1;
    Tensor<S> n1;  // post-LN1, query into cross attention
    AttentionCache<S> cross_attn;
    LayerNormCache<S> ln2;
    Tensor<S> n2;  // post-LN2, input to the FFN
    Tensor<S> h_pre;
    Tensor<S> h;
    LayerNormCache<S> ln3;
};

template <typename S>
struct ForwardCache {
    ComposeCache<S> compose;
    Tensor<S> enc_in, dec_in;
    std::vector<EncLayerCache<S>> enc;
    std::vector<DecLayerCache<S>> dec;
    Tensor<S> enc_out;   // final encoder output (cross-attention keys/values)
    Tensor<S> head_in;   // final decoder output
    Tensor<S> probs;     // [B, L]
};

namespace detail {

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "residual add");
    Tensor<S> out = Tensor<S>::zeros(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

}  // namespace detail

template <typename S>
Tensor<S> encoder_layer_forward(const EncoderLayer<S>& l, Tensor<S> x, const Tensor<S>& logT,
                                const Tensor<uint8_t>& mask, bool time_weighted,
                                EncLayerCache<S>& c) {
    c.x_in = std::move(x);
    Tensor<S> a = multihead_attention(l.attn, c.x_in, c.x_in, logT, mask, time_weighted, &c.attn);
    Tensor<S> res1 = detail::add(c.x_in, a);
    c.n1 = layer_norm(res1, l.ln1_g.value, l.ln1_b.value, &c.ln1);
    c.h_pre = affine(c.n1, l.ff.W1.value, l.ff.b1.value);
    c.h = relu(c.h_pre);
    Tensor<S> ff_out = affine(c.h, l.ff.W2.value, l.ff.b2.value);
    Tensor<S> res2 = detail::add(c.n1, ff_out);
    return layer_norm(res2, l.ln2_g.value, l.ln2_b.value, &c.ln2);
}

// returns gradient w.r.t. the layer input
template <typename S>
Tensor<S> encoder_layer_backward(EncoderLayer<S>& l, const Tensor<S>& logT,
                                 const Tensor<uint8_t>& mask, bool time_weighted,
                                 const EncLayerCache<S>& c, const Tensor<S>& dout) {
    Tensor<S> dres2 = Tensor<S>::zeros(dout.shape);
    layer_norm_backward(c.ln2, l.ln2_g.value, dout, dres2, l.ln2_g.grad, l.ln2_b.grad);

    Tensor<S> dn1 = dres2;  // residual branch
    Tensor<S> dh = Tensor<S>::zeros(c.h.shape);
    affine_backward(c.h, l.ff.W2.value, dres2, &dh, l.ff.W2.grad, l.ff.b2.grad);
    Tensor<S> dh_pre = Tensor<S>::zeros(c.h_pre.shape);
    relu_backward(c.h_pre, dh, dh_pre);
    affine_backward(c.n1, l.ff.W1.value, dh_pre, &dn1, l.ff.W1.grad, l.ff.b1.grad);

    Tensor<S> dres1 = Tensor<S>::zeros(dn1.shape);
    layer_norm_backward(c.ln1, l.ln1_g.value, dn1, dres1, l.ln1_g.grad, l.ln1_b.grad);

    Tensor<S> dx = dres1;  // residual branch
    multihead_attention_backward(l.attn, c.x_in, c.x_in, logT, mask, time_weighted, c.attn, dres1,
                                 dx, dx);
    return dx;
}

template <typename S>
Tensor<S> decoder_layer_forward(const DecoderLayer<S>& l, Tensor<S> y, const Tensor<S>& enc_out,
                                const Tensor<S>& logT, const Tensor<uint8_t>& self_mask,
                                const Tensor<uint8_t>& cross_mask, bool time_weighted,
                                DecLayerCache<S>& c) {
    c.y_in = std::move(y);
    Tensor<S> a =
        multihead_attention(l.self_attn, c.y_in, c.y_in, logT, self_mask, time_weighted, &c.self_attn);
    Tensor<S> res1 = detail::add(c.y_in, a);
    c.n1 = layer_norm(res1, l.ln1_g.value, l.ln1_b.value, &c.ln1);

    Tensor<S> x =
        multihead_attention(l.cross_attn, c.n1, enc_out, logT, cross_mask, time_weighted, &c.cross_attn);
    Tensor<S> res2 = detail::add(c.n1, x);
    c.n2 = layer_norm(res2, l.ln2_g.value, l.ln2_b.value, &c.ln2);

    c.h_pre = affine(c.n2, l.ff.W1.value, l.ff.b1.value);
    c.h = relu(c.h_pre);
    Tensor<S> ff_out = affine(c.h, l.ff.W2.value, l.ff.b2.value);
    Tensor<S> res3 = detail::add(c.n2, ff_out);
    return layer_norm(res3, l.ln3_g.value, l.ln3_b.value, &c.ln3);
}

// returns gradient w.r.t. y; accumulates the encoder-output gradient
template <typename S>
Tensor<S> decoder_layer_backward(DecoderLayer<S>& l, const Tensor<S>& enc_out,
                                 const Tensor<S>& logT, const Tensor<uint8_t>& self_mask,
                                 const Tensor<uint8_t>& cross_mask, bool time_weighted,
                                 const DecLayerCache<S>& c, const Tensor<S>& dout,
                                 Tensor<S>& denc_out) {
    Tensor<S> dres3 = Tensor<S>::zeros(dout.shape);
    layer_norm_backward(c.ln3, l.ln3_g.value, dout, dres3, l.ln3_g.grad, l.ln3_b.grad);

    Tensor<S> dn2 = dres3;
    Tensor<S> dh = Tensor<S>::zeros(c.h.shape);
    affine_backward(c.h, l.ff.W2.value, dres3, &dh, l.ff.W2.grad, l.ff.b2.grad);
    Tensor<S> dh_pre = Tensor<S>::zeros(c.h_pre.shape);
    relu_backward(c.h_pre, dh, dh_pre);
    affine_backward(c.n2, l.ff.W1.value, dh_pre, &dn2, l.ff.W1.grad, l.ff.b1.grad);

    Tensor<S> dres2 = Tensor<S>::zeros(dn2.shape);
    layer_norm_backward(c.ln2, l.ln2_g.value, dn2, dres2, l.ln2_g.grad, l.ln2_b.grad);

    Tensor<S> dn1 = dres2;
    multihead_attention_backward(l.cross_attn, c.n1, enc_out, logT, cross_mask, time_weighted,
                                 c.cross_attn, dres2, dn1, denc_out);

    Tensor<S> dres1 = Tensor<S>::zeros(dn1.shape);
    layer_norm_backward(c.ln1, l.ln1_g.value, dn1, dres1, l.ln1_g.grad, l.ln1_b.grad);

    Tensor<S> dy = dres1;
    multihead_attention_backward(l.self_attn, c.y_in, c.y_in, logT, self_mask, time_weighted,
                                 c.self_attn, dres1, dy, dy);
    return dy;
}

// Full forward pass: probabilities [B, L] that the question at each position
// is answered correctly. Pad positions produce values the loss mask ignores.
template <typename S>
Tensor<S> model_forward(const Model<S>& m, const ContentFeatures& features, const Batch<S>& batch,
                        ForwardCache<S>& cache) {
    if (batch.B < 1 || batch.L < 1) throw DataError("model_forward: empty batch");
    compose_inputs(m.emb, features, batch, cache.enc_in, cache.dec_in, cache.compose);

    cache.enc.assign(static_cast<size_t>(m.cfg.encoder_layers), EncLayerCache<S>{});
    Tensor<S> x = cache.enc_in;
    for (size_t i = 0; i < m.enc.size(); ++i)
        x = encoder_layer_forward(m.enc[i], std::move(x), batch.log_time_gap, batch.self_mask,
                                  m.cfg.time_weighted, cache.enc[i]);
    cache.enc_out = std::move(x);

    cache.dec.assign(static_cast<size_t>(m.cfg.decoder_layers), DecLayerCache<S>{});
    Tensor<S> y = cache.dec_in;
    for (size_t i = 0; i < m.dec.size(); ++i)
        y = decoder_layer_forward(m.dec[i], std::move(y), cache.enc_out, batch.log_time_gap,
                                  batch.self_mask, batch.cross_mask, m.cfg.time_weighted,
                                  cache.dec[i]);
    cache.head_in = std::move(y);

    Tensor<S> logits = affine(cache.head_in, m.head_W.value, m.head_b.value);
    logits.shape = {batch.B, batch.L};
    cache.probs = sigmoid(logits);
    return cache.probs;
}

// dprobs: [B, L] upstream gradient. Accumulates into every parameter grad.
template <typename S>
void model_backward(Model<S>& m, const ContentFeatures& features, const Batch<S>& batch,
                    const ForwardCache<S>& cache, const Tensor<S>& dprobs) {
    Tensor<S> dlogits = Tensor<S>::zeros({batch.B, batch.L});
    sigmoid_backward(cache.probs, dprobs, dlogits);
    dlogits.shape = {batch.B, batch.L, 1};

    Tensor<S> dy = Tensor<S>::zeros(cache.head_in.shape);
    affine_backward(cache.head_in, m.head_W.value, dlogits, &dy, m.head_W.grad, m.head_b.grad);

    Tensor<S> denc_out = Tensor<S>::zeros(cache.enc_out.shape);
    for (size_t i = m.dec.size(); i-- > 0;)
        dy = decoder_layer_backward(m.dec[i], cache.enc_out, batch.log_time_gap, batch.self_mask,
                                    batch.cross_mask, m.cfg.time_weighted, cache.dec[i], dy,
                                    denc_out);

    Tensor<S> dx = std::move(denc_out);
    for (size_t i = m.enc.size(); i-- > 0;)
        dx = encoder_layer_backward(m.enc[i], batch.log_time_gap, batch.self_mask,
                                    m.cfg.time_weighted, cache.enc[i], dx);

    compose_inputs_backward(m.emb, features, cache.compose, dx, dy);
}

// convenience used by training and tests: masked BCE + gradient in one pass
template <typename S>
BceResult<S> model_loss_and_backward(Model<S>& m, const ContentFeatures& features,
                                     const Batch<S>& batch, ForwardCache<S>& cache) {
    Tensor<S> probs = model_forward(m, features, batch, cache);
    BceResult<S> r = bce_loss(probs, batch.label, batch.loss_mask);
    Tensor<S> dprobs = Tensor<S>::zeros(probs.shape);
    bce_backward(probs, batch.label, batch.loss_mask, S{1}, dprobs);
    model_backward(m, features, batch, cache, dprobs);
    return r;
}

}  // namespace ktf
