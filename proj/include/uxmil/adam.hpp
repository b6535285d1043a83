#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "uxmil/params.hpp"

namespace uxmil {

// Adam with bias correction. Moment buffers are laid out per parameter in
// registration order; the step counter is shared.
template <class S>
struct AdamState {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    uint64_t step = 0;
    std::vector<std::vector<S>> m, v;

    void attach(const ParamList<S>& params) {
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p.value.numel(), S(0));
            v.emplace_back(p.value.numel(), S(0));
        }
        step = 0;
    }
};

template <class S>
void adam_step(ParamList<S>& params, AdamState<S>& state) {
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " params, got " + std::to_string(params.size()));
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const S b1 = static_cast<S>(state.beta1), b2 = static_cast<S>(state.beta2);
    const S one_m_b1 = static_cast<S>(1.0 - state.beta1);
    const S one_m_b2 = static_cast<S>(1.0 - state.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].value;
        if (state.m[i].size() != p.numel())
            throw ShapeError("adam_step: moment size " + std::to_string(state.m[i].size()) +
                             " vs param " + params[i].name + " " + shape_str(p.shape()));
        if (!p.has_grad()) continue;
        S* m = state.m[i].data();
        S* v = state.v[i].data();
        const S* g = p.grad();
        S* w = p.data();
        for (std::size_t j = 0; j < p.numel(); ++j) {
            m[j] = b1 * m[j] + one_m_b1 * g[j];
            v[j] = b2 * v[j] + one_m_b2 * g[j] * g[j];
            const double mhat = static_cast<double>(m[j]) / bc1;
            const double vhat = static_cast<double>(v[j]) / bc2;
            w[j] -= static_cast<S>(state.learning_rate * mhat /
                                   (std::sqrt(vhat) + state.epsilon));
        }
    }
}

}  // namespace uxmil
