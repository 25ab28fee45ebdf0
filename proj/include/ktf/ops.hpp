#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>

#include "ktf/rng.hpp"
#include "ktf/tensor.hpp"

namespace ktf {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

template <typename S>
inline EMap<S> as_matrix(Tensor<S>& t, int64_t rows, int64_t cols) {
    return EMap<S>(t.data(), rows, cols);
}
template <typename S>
inline ECMap<S> as_matrix(const Tensor<S>& t, int64_t rows, int64_t cols) {
    return ECMap<S>(t.data(), rows, cols);
}

// ---------------------------------------------------------------------------
// affine: y = x W + b over the last axis of x.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> affine(const Tensor<S>& x, const Tensor<S>& W, const Tensor<S>& b) {
    const int64_t d_in = x.cols();
    const int64_t n = x.rows();
    if (W.rank() != 2 || W.dim(0) != d_in)
        throw ShapeError("affine: x " + format_shape(x.shape) + " vs W " + format_shape(W.shape));
    const int64_t d_out = W.dim(1);
    if (b.size() != d_out)
        throw ShapeError("affine: b " + format_shape(b.shape) + " vs W " + format_shape(W.shape));

    std::vector<int64_t> out_shape = x.shape;
    out_shape.back() = d_out;
    Tensor<S> y = Tensor<S>::zeros(out_shape);
    as_matrix(y, n, d_out).noalias() = as_matrix(x, n, d_in) * as_matrix(W, d_in, d_out);
    as_matrix(y, n, d_out).rowwise() +=
        Eigen::Map<const Eigen::RowVector<S, Eigen::Dynamic>>(b.data(), d_out);
    return y;
}

// Accumulates into dx (if non-null), dW, db.
template <typename S>
void affine_backward(const Tensor<S>& x, const Tensor<S>& W, const Tensor<S>& dy, Tensor<S>* dx,
                     Tensor<S>& dW, Tensor<S>& db) {
    const int64_t d_in = x.cols();
    const int64_t d_out = W.dim(1);
    const int64_t n = x.rows();
    if (dx) as_matrix(*dx, n, d_in).noalias() += as_matrix(dy, n, d_out) * as_matrix(W, d_in, d_out).transpose();
    as_matrix(dW, d_in, d_out).noalias() += as_matrix(x, n, d_in).transpose() * as_matrix(dy, n, d_out);
    Eigen::Map<Eigen::RowVector<S, Eigen::Dynamic>>(db.data(), d_out) +=
        as_matrix(dy, n, d_out).colwise().sum();
}

// ---------------------------------------------------------------------------
// softmax over the last axis, restricted to mask-true entries.
// Masked entries get weight exactly 0; a fully-masked row yields all zeros.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& logits, const Tensor<uint8_t>& mask) {
    if (logits.shape != mask.shape)
        throw ShapeError("softmax_rows: logits " + format_shape(logits.shape) + " vs mask " +
                         format_shape(mask.shape));
    const int64_t n = logits.rows();
    const int64_t d = logits.cols();
    Tensor<S> p = Tensor<S>::zeros(logits.shape);
    for (int64_t r = 0; r < n; ++r) {
        const S* l = logits.data() + r * d;
        const uint8_t* m = mask.data() + r * d;
        S* out = p.data() + r * d;
        S max_l = std::numeric_limits<S>::lowest();
        bool any = false;
        for (int64_t j = 0; j < d; ++j) {
            if (m[j] && l[j] > max_l) {
                max_l = l[j];
                any = true;
            }
        }
        if (!any) continue;  // defined fallback: all-zero row
        S sum = S{0};
        for (int64_t j = 0; j < d; ++j) {
            if (m[j]) {
                out[j] = std::exp(l[j] - max_l);
                sum += out[j];
            }
        }
        const S inv = S{1} / sum;
        for (int64_t j = 0; j < d; ++j) out[j] *= inv;
    }
    return p;
}

template <typename S>
void softmax_rows_backward(const Tensor<S>& probs, const Tensor<uint8_t>& mask,
                           const Tensor<S>& dprobs, Tensor<S>& dlogits) {
    const int64_t n = probs.rows();
    const int64_t d = probs.cols();
    for (int64_t r = 0; r < n; ++r) {
        const S* p = probs.data() + r * d;
        const S* dp = dprobs.data() + r * d;
        const uint8_t* m = mask.data() + r * d;
        S* dl = dlogits.data() + r * d;
        S dot = S{0};
        for (int64_t j = 0; j < d; ++j) dot += p[j] * dp[j];
        for (int64_t j = 0; j < d; ++j) {
            if (m[j]) dl[j] += p[j] * (dp[j] - dot);
        }
    }
}

// ---------------------------------------------------------------------------
// layer norm over the last axis; eps sits inside the square root.
// ---------------------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-6;

template <typename S>
struct LayerNormCache {
    Tensor<S> xhat;  // normalized input
    Tensor<S> rstd;  // [rows]
};

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     LayerNormCache<S>* cache = nullptr) {
    const int64_t n = x.rows();
    const int64_t d = x.cols();
    if (gain.size() != d || bias.size() != d)
        throw ShapeError("layer_norm: gain/bias " + format_shape(gain.shape) + " vs x " +
                         format_shape(x.shape));
    Tensor<S> y = Tensor<S>::zeros(x.shape);
    if (cache) {
        cache->xhat = Tensor<S>::zeros(x.shape);
        cache->rstd = Tensor<S>::zeros({n});
    }
    for (int64_t r = 0; r < n; ++r) {
        const S* xi = x.data() + r * d;
        S* yi = y.data() + r * d;
        S mean = S{0};
        for (int64_t j = 0; j < d; ++j) mean += xi[j];
        mean /= static_cast<S>(d);
        S var = S{0};
        for (int64_t j = 0; j < d; ++j) {
            const S c = xi[j] - mean;
            var += c * c;
        }
        var /= static_cast<S>(d);
        const S rstd = S{1} / std::sqrt(var + static_cast<S>(kLayerNormEps));
        for (int64_t j = 0; j < d; ++j) {
            const S xh = (xi[j] - mean) * rstd;
            yi[j] = xh * gain[j] + bias[j];
            if (cache) cache->xhat[r * d + j] = xh;
        }
        if (cache) cache->rstd[r] = rstd;
    }
    return y;
}

template <typename S>
void layer_norm_backward(const LayerNormCache<S>& cache, const Tensor<S>& gain,
                         const Tensor<S>& dy, Tensor<S>& dx, Tensor<S>& dgain, Tensor<S>& dbias) {
    const int64_t n = cache.xhat.rows();
    const int64_t d = cache.xhat.cols();
    for (int64_t r = 0; r < n; ++r) {
        const S* xh = cache.xhat.data() + r * d;
        const S* dyi = dy.data() + r * d;
        S* dxi = dx.data() + r * d;
        const S rstd = cache.rstd[r];
        S sum_dxhat = S{0};
        S sum_dxhat_xhat = S{0};
        for (int64_t j = 0; j < d; ++j) {
            const S dxhat = dyi[j] * gain[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[j];
            dgain[j] += dyi[j] * xh[j];
            dbias[j] += dyi[j];
        }
        const S inv_d = S{1} / static_cast<S>(d);
        for (int64_t j = 0; j < d; ++j) {
            const S dxhat = dyi[j] * gain[j];
            dxi[j] += rstd * (dxhat - inv_d * sum_dxhat - xh[j] * inv_d * sum_dxhat_xhat);
        }
    }
}

// ---------------------------------------------------------------------------
// pointwise activations
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    Tensor<S> y = Tensor<S>::zeros(x.shape);
    for (int64_t i = 0; i < x.size(); ++i) y[i] = S{1} / (S{1} + std::exp(-x[i]));
    return y;
}

template <typename S>
void sigmoid_backward(const Tensor<S>& y, const Tensor<S>& dy, Tensor<S>& dx) {
    for (int64_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * y[i] * (S{1} - y[i]);
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    Tensor<S> y = Tensor<S>::zeros(x.shape);
    for (int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > S{0} ? x[i] : S{0};
    return y;
}

template <typename S>
void relu_backward(const Tensor<S>& x, const Tensor<S>& dy, Tensor<S>& dx) {
    for (int64_t i = 0; i < x.size(); ++i) dx[i] += x[i] > S{0} ? dy[i] : S{0};
}

// ---------------------------------------------------------------------------
// binary cross-entropy, mean over mask-true positions.
// ---------------------------------------------------------------------------

inline constexpr double kBceClamp = 1e-7;

template <typename S>
struct BceResult {
    S loss{};
    int64_t count = 0;
};

template <typename S>
BceResult<S> bce_loss(const Tensor<S>& p, const Tensor<uint8_t>& y, const Tensor<uint8_t>& mask) {
    if (p.shape != y.shape || p.shape != mask.shape)
        throw ShapeError("bce_loss: p " + format_shape(p.shape) + " vs y " + format_shape(y.shape) +
                         " vs mask " + format_shape(mask.shape));
    const S lo = static_cast<S>(kBceClamp);
    const S hi = S{1} - static_cast<S>(kBceClamp);
    S total = S{0};
    int64_t count = 0;
    for (int64_t i = 0; i < p.size(); ++i) {
        if (!mask[i]) continue;
        const S pc = std::min(hi, std::max(lo, p[i]));
        total += y[i] ? -std::log(pc) : -std::log(S{1} - pc);
        ++count;
    }
    BceResult<S> r;
    r.count = count;
    r.loss = count ? total / static_cast<S>(count) : S{0};
    return r;
}

// d(loss)/d(p), scaled by dloss. Zero where masked or where the clamp is active.
template <typename S>
void bce_backward(const Tensor<S>& p, const Tensor<uint8_t>& y, const Tensor<uint8_t>& mask,
                  S dloss, Tensor<S>& dp) {
    int64_t count = 0;
    for (int64_t i = 0; i < p.size(); ++i) count += mask[i] ? 1 : 0;
    if (count == 0) return;
    const S lo = static_cast<S>(kBceClamp);
    const S hi = S{1} - static_cast<S>(kBceClamp);
    const S scale = dloss / static_cast<S>(count);
    for (int64_t i = 0; i < p.size(); ++i) {
        if (!mask[i]) continue;
        if (p[i] < lo || p[i] > hi) continue;  // clamp region: flat
        const S pc = p[i];
        dp[i] += scale * (pc - (y[i] ? S{1} : S{0})) / (pc * (S{1} - pc));
    }
}

// truncated normal (|z| <= 2), sigma 0.02 — shared init for weights/tables
template <typename S>
Tensor<S> init_weight(std::vector<int64_t> shape, Rng& rng, double sigma = 0.02) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.truncated_normal(sigma));
    return t;
}

}  // namespace ktf
