#pragma once

// Naive loop-based multihead attention used as an oracle. Deliberately
// written without Eigen or any shared kernels so it can disagree with the
// production path if either is wrong.

#include <cmath>
#include <cstdint>
#include <vector>

#include "ktf/attention.hpp"
#include "ktf/tensor.hpp"

namespace ktf::test {

// y[i, :] = x[i, :] * W  (no bias)
inline std::vector<double> ref_project(const std::vector<double>& x, int64_t n, int64_t d_in,
                                       const Tensor<double>& W) {
    const int64_t d_out = W.dim(1);
    std::vector<double> y(static_cast<size_t>(n * d_out), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t a = 0; a < d_in; ++a) {
            const double xv = x[static_cast<size_t>(i * d_in + a)];
            for (int64_t c = 0; c < d_out; ++c)
                y[static_cast<size_t>(i * d_out + c)] += xv * W[a * d_out + c];
        }
    return y;
}

// vanilla multihead attention (no decay term), one batch slice
inline Tensor<double> ref_vanilla_multihead(const ktf::MultiheadParams<double>& p,
                                            const Tensor<double>& x_q, const Tensor<double>& x_kv,
                                            const Tensor<uint8_t>& mask) {
    const int64_t B = x_q.dim(0), L = x_q.dim(1), d = p.d_model();
    const int64_t H = p.H, dh = p.d_head();
    Tensor<double> out = Tensor<double>::zeros({B, L, d});
    for (int64_t b = 0; b < B; ++b) {
        std::vector<double> xq(x_q.data() + b * L * d, x_q.data() + (b + 1) * L * d);
        std::vector<double> xkv(x_kv.data() + b * L * d, x_kv.data() + (b + 1) * L * d);
        const auto q = ref_project(xq, L, d, p.Wq.value);
        const auto k = ref_project(xkv, L, d, p.Wk.value);
        const auto v = ref_project(xkv, L, d, p.Wv.value);
        std::vector<double> ctx(static_cast<size_t>(L * d), 0.0);
        for (int64_t h = 0; h < H; ++h) {
            const int64_t c0 = h * dh;
            for (int64_t i = 0; i < L; ++i) {
                std::vector<double> logits(static_cast<size_t>(L), 0.0);
                bool any = false;
                double mx = 0;
                for (int64_t j = 0; j < L; ++j) {
                    if (!mask[(b * L + i) * L + j]) continue;
                    double s = 0;
                    for (int64_t a = 0; a < dh; ++a)
                        s += q[static_cast<size_t>(i * d + c0 + a)] * k[static_cast<size_t>(j * d + c0 + a)];
                    s /= std::sqrt(static_cast<double>(dh));
                    logits[static_cast<size_t>(j)] = s;
                    if (!any || s > mx) mx = s;
                    any = true;
                }
                if (!any) continue;  // row stays zero
                double total = 0;
                std::vector<double> prob(static_cast<size_t>(L), 0.0);
                for (int64_t j = 0; j < L; ++j) {
                    if (!mask[(b * L + i) * L + j]) continue;
                    prob[static_cast<size_t>(j)] = std::exp(logits[static_cast<size_t>(j)] - mx);
                    total += prob[static_cast<size_t>(j)];
                }
                for (int64_t j = 0; j < L; ++j) {
                    const double pj = prob[static_cast<size_t>(j)] / total;
                    for (int64_t a = 0; a < dh; ++a)
                        ctx[static_cast<size_t>(i * d + c0 + a)] += pj * v[static_cast<size_t>(j * d + c0 + a)];
                }
            }
        }
        const auto o = ref_project(ctx, L, d, p.Wo.value);
        std::copy(o.begin(), o.end(), out.data() + b * L * d);
    }
    return out;
}

}  // namespace ktf::test
