#pragma once

#include <cmath>
#include <vector>

#include "tokcode/common.hpp"

namespace tokcode {

// Adam with bias correction. One state per parameter tensor; update order is
// fixed by the caller, which keeps training runs bit-reproducible.
template <class Real>
struct AdamState {
    std::vector<Real> m;
    std::vector<Real> v;
    long t = 0;
};

template <class Real>
struct AdamConfig {
    Real lr = Real(1e-3);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real eps = Real(1e-8);
};

template <class Real>
void adam_step(std::vector<Real>& param, const std::vector<Real>& grad, AdamState<Real>& state,
               const AdamConfig<Real>& cfg) {
    if (param.size() != grad.size()) {
        throw InputError("adam_step: parameter/gradient size mismatch");
    }
    if (state.m.empty()) {
        state.m.assign(param.size(), Real(0));
        state.v.assign(param.size(), Real(0));
    }
    state.t += 1;
    const Real bc1 = Real(1) - std::pow(cfg.beta1, Real(state.t));
    const Real bc2 = Real(1) - std::pow(cfg.beta2, Real(state.t));
    for (size_t i = 0; i < param.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (Real(1) - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (Real(1) - cfg.beta2) * grad[i] * grad[i];
        const Real mhat = state.m[i] / bc1;
        const Real vhat = state.v[i] / bc2;
        param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace tokcode
