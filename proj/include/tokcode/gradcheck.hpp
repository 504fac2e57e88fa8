#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "tokcode/tensor.hpp"

namespace tokcode::ad {

template <class Real>
struct GcParam {
    int rows = 0;
    int cols = 0;
    std::vector<Real> values;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    size_t checked = 0;
};

// Compares reverse-mode gradients against central finite differences of the
// forward function. `build` receives a fresh graph plus one trainable leaf
// per parameter and must return a scalar tensor. Above `max_per_param`
// elements, a seeded random subset is checked instead of every element.
template <class Real, class Builder>
GradCheckReport grad_check(Builder&& build, std::vector<GcParam<Real>> params, Real eps,
                           double tol, size_t max_per_param = 128, uint64_t seed = 0,
                           double denom_floor = 1e-3) {
    if (!(eps > Real(0))) throw InputError("grad_check: eps must be positive");

    auto eval = [&](const std::vector<GcParam<Real>>& p, bool with_grad,
                    std::vector<std::vector<Real>>* grads_out) -> double {
        Graph<Real> g;
        std::vector<Tensor<Real>> leaves;
        leaves.reserve(p.size());
        for (const auto& prm : p) {
            leaves.push_back(g.leaf(prm.rows, prm.cols,
                                    std::span<const Real>(prm.values.data(), prm.values.size()),
                                    true, "gc_param"));
        }
        Tensor<Real> out = build(g, leaves);
        g.check_finite();
        if (with_grad) {
            g.backward(out);
            grads_out->clear();
            for (const auto& leaf : leaves) grads_out->push_back(leaf.grad());
        }
        return static_cast<double>(out.scalar());
    };

    std::vector<std::vector<Real>> analytic;
    eval(params, true, &analytic);

    GradCheckReport report;
    report.pass = true;
    Rng rng(stage_seed(seed, "grad-check-subset"));

    for (size_t pi = 0; pi < params.size(); ++pi) {
        const size_t n = params[pi].values.size();
        std::vector<size_t> elems;
        if (n <= max_per_param) {
            for (size_t i = 0; i < n; ++i) elems.push_back(i);
        } else {
            for (size_t i = 0; i < max_per_param; ++i) elems.push_back(rng.next_below(n));
            std::sort(elems.begin(), elems.end());
            elems.erase(std::unique(elems.begin(), elems.end()), elems.end());
        }
        for (size_t ei : elems) {
            const Real saved = params[pi].values[ei];
            params[pi].values[ei] = saved + eps;
            const double fp = eval(params, false, nullptr);
            params[pi].values[ei] = saved - eps;
            const double fm = eval(params, false, nullptr);
            params[pi].values[ei] = saved;

            const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
            const double exact = static_cast<double>(analytic[pi][ei]);
            const double denom = std::max({std::abs(numeric), std::abs(exact), denom_floor});
            const double rel = std::abs(numeric - exact) / denom;
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.checked;
        }
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace tokcode::ad
