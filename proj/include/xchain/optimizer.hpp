#pragma once

// Adam with bias-corrected moments. A parameter without an accumulated
// gradient is treated as having gradient zero, so a step over an untouched
// model is the identity.

#include <cmath>
#include <cstdint>
#include <vector>

#include "xchain/errors.hpp"
#include "xchain/tensor.hpp"

namespace xchain {

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<std::vector<double>> m; // first moments, parallel to params
    std::vector<std::vector<double>> v; // second moments
};

inline AdamState make_adam_state(const std::vector<Tensor>& params) {
    AdamState state;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const Tensor& p : params) {
        state.m.emplace_back(p.size(), 0.0);
        state.v.emplace_back(p.size(), 0.0);
    }
    return state;
}

inline void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw DimensionError("adam_step: state tracks " + std::to_string(state.m.size()) +
                             " parameters, got " + std::to_string(params.size()));
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& param = params[p];
        if (state.m[p].size() != param.size())
            throw DimensionError("adam_step: moment size " + std::to_string(state.m[p].size()) +
                                 " does not match parameter of shape " + shape_str(param.shape()));
        const std::vector<double>* grad = param.has_grad() ? &param.grad() : nullptr;
        double* w = param.data();
        double* m = state.m[p].data();
        double* v = state.v[p].data();
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double g = grad ? (*grad)[i] : 0.0;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

} // namespace xchain
