#pragma once

#include "voxa/tape.hpp"

namespace voxa {

// Per-parameter first/second moment accumulators plus step counter.
template <class T>
struct AdamState {
    std::vector<NdArray<T>> m, v;
    std::int64_t t = 0;

    static AdamState for_params(const ParamStore<T>& params) {
        AdamState s;
        for (std::size_t i = 0; i < params.size(); ++i) {
            s.m.emplace_back(params[i].value->shape);
            s.v.emplace_back(params[i].value->shape);
        }
        return s;
    }
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard bias-corrected Adam update applied to every parameter's
// accumulated gradient. Increments state.t.
template <class T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, const AdamConfig& cfg) {
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state does not match parameter store");
    state.t += 1;
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
    const T bc1 = T(1) - T(std::pow(cfg.beta1, double(state.t)));
    const T bc2 = T(1) - T(std::pow(cfg.beta2, double(state.t)));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& val = params[p].value->v;
        const auto& g = params[p].grad.v;
        auto& m = state.m[p].v;
        auto& v = state.v[p].v;
        for (std::size_t i = 0; i < val.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            val[i] -= T(cfg.lr) * mhat / (std::sqrt(vhat) + T(cfg.eps));
        }
    }
}

}  // namespace voxa
