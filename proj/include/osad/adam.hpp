#pragma once

#include <cmath>
#include <vector>

#include "osad/tensor.hpp"

namespace osad {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment buffers, one per parameter, plus the step counter t.
template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    long t = 0;

    static AdamState zeros_like(const std::vector<Tensor<T>*>& params) {
        AdamState s;
        for (const auto* p : params) {
            s.m.emplace_back(p->shape());
            s.v.emplace_back(p->shape());
        }
        return s;
    }
};

/// One bias-corrected Adam update; increments state.t first, so the first call uses t = 1.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               const AdamHyper& h) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
        throw DimensionError("adam_step: parameter, gradient and moment counts differ");
    ++state.t;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k];
        const auto& g = grads[k];
        auto& m = state.m[k];
        auto& v = state.v[k];
        require_same_shape(p.shape(), g.shape(), "adam_step");
        require_same_shape(p.shape(), m.shape(), "adam_step");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = static_cast<T>(h.beta1 * m[i] + (1.0 - h.beta1) * g[i]);
            v[i] = static_cast<T>(h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i]);
            const double mhat = m[i] / c1, vhat = v[i] / c2;
            p[i] = static_cast<T>(p[i] - h.lr * mhat / (std::sqrt(vhat) + h.eps));
        }
    }
}

}  // namespace osad
