#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ktf/tensor.hpp"

namespace ktf {

// ---------------------------------------------------------------------------
// learning-rate schedule: linear warmup, then cosine decay to zero.
// ---------------------------------------------------------------------------

struct LrSchedule {
    double peak = 2.5e-4;
    int64_t warmup_steps = 4000;
    int64_t decay_steps = 30000;

    void validate() const {
        if (warmup_steps < 1 || decay_steps < 1)
            throw ConfigError("lr schedule: warmup_steps and decay_steps must be >= 1");
        if (!(peak > 0.0)) throw ConfigError("lr schedule: peak must be positive");
    }
};

inline double lr_at_step(int64_t step, const LrSchedule& s) {
    if (step < 0) throw NumericError("lr_at_step: negative step");
    if (step < s.warmup_steps)
        return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    const int64_t t = std::min(step - s.warmup_steps, s.decay_steps);
    return 0.5 * s.peak *
           (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(s.decay_steps)));
}

// ---------------------------------------------------------------------------
// Adam with bias correction. Moments are kept per parameter, in parameter
// registry order; the step counter advances once per adam_step call.
// ---------------------------------------------------------------------------

template <typename S>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    int64_t step = 0;
    std::vector<Tensor<S>> m;
    std::vector<Tensor<S>> v;

    void init(const std::vector<Parameter<S>*>& params) {
        m.clear();
        v.clear();
        m.reserve(params.size());
        v.reserve(params.size());
        for (const auto* p : params) {
            m.push_back(Tensor<S>::zeros(p->value.shape));
            v.push_back(Tensor<S>::zeros(p->value.shape));
        }
        step = 0;
    }
};

template <typename S>
void adam_step(const std::vector<Parameter<S>*>& params, AdamState<S>& st, double lr) {
    if (st.m.size() != params.size())
        throw ShapeError("adam_step: state holds " + std::to_string(st.m.size()) +
                         " moments for " + std::to_string(params.size()) + " parameters");
    st.step += 1;
    const S b1 = static_cast<S>(st.beta1);
    const S b2 = static_cast<S>(st.beta2);
    const S bc1 = S{1} - static_cast<S>(std::pow(st.beta1, static_cast<double>(st.step)));
    const S bc2 = S{1} - static_cast<S>(std::pow(st.beta2, static_cast<double>(st.step)));
    const S eps = static_cast<S>(st.eps);
    const S rate = static_cast<S>(lr);
    for (size_t k = 0; k < params.size(); ++k) {
        Parameter<S>& p = *params[k];
        if (!p.trainable) continue;
        Tensor<S>& m = st.m[k];
        Tensor<S>& v = st.v[k];
        check_same_shape(p.value, p.grad, "adam_step grad");
        for (int64_t i = 0; i < p.value.size(); ++i) {
            const S g = p.grad[i];
            m[i] = b1 * m[i] + (S{1} - b1) * g;
            v[i] = b2 * v[i] + (S{1} - b2) * g * g;
            const S mhat = m[i] / bc1;
            const S vhat = v[i] / bc2;
            p.value[i] -= rate * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <typename S>
void zero_grads(const std::vector<Parameter<S>*>& params) {
    for (auto* p : params) p->zero_grad();
}

// Scales all gradients so the global L2 norm does not exceed max_norm.
// Returns the pre-clip norm.
template <typename S>
double clip_global_norm(const std::vector<Parameter<S>*>& params, double max_norm) {
    double sq = 0.0;
    for (const auto* p : params) {
        if (!p->trainable) continue;
        for (int64_t i = 0; i < p->grad.size(); ++i) {
            const double g = static_cast<double>(p->grad[i]);
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const S scale = static_cast<S>(max_norm / norm);
        for (auto* p : params) {
            if (!p->trainable) continue;
            for (int64_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= scale;
        }
    }
    return norm;
}

}  // namespace ktf
