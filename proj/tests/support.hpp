#pragma once

// Shared test helpers: the central finite-difference gradient oracle and a
// naive matmul reference. These stay independent of the library's autograd
// path on purpose.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "xchain/tensor.hpp"

namespace testsupport {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t nonzero_analytic = 0;
    std::string worst;
};

// Central differences (f(x+h) - f(x-h)) / 2h against the analytic gradients
// already accumulated on `params`. Relative error per element is
// |a - n| / max(1, |a|, |n|).
template <class LossFn>
GradCheckResult finite_diff_check(std::vector<std::pair<std::string, xchain::Tensor>> params,
                                  LossFn&& loss, double h = 1e-5) {
    GradCheckResult res;
    for (auto& [name, p] : params) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + h;
            const double up = loss();
            p.data()[i] = saved - h;
            const double down = loss();
            p.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
            const double err =
                std::abs(analytic - numeric) /
                std::max({1.0, std::abs(analytic), std::abs(numeric)});
            if (err > res.max_rel_err) {
                res.max_rel_err = err;
                res.worst = name + "[" + std::to_string(i) + "]";
            }
            if (analytic != 0.0) ++res.nonzero_analytic;
            ++res.checked;
        }
    }
    return res;
}

inline xchain::Tensor naive_matmul(const xchain::Tensor& a, const xchain::Tensor& b) {
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    xchain::Tensor out = xchain::Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) s += a.data()[i * k + kk] * b.data()[kk * n + j];
            out.data()[i * n + j] = s;
        }
    return out;
}

inline xchain::Tensor random_tensor(xchain::Shape shape, xchain::Rng& rng, double scale = 1.0) {
    xchain::Tensor t = xchain::Tensor::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.gauss(0.0, scale);
    return t;
}

} // namespace testsupport
