// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "neuroalign/error.hpp"

namespace neuroalign {

namespace {

double evaluate(const ScalarFunction& f, const Tensor64& x) {
    const Tensor64 y = f(x);
    if (y.numel() != 1) {
        throw ContractError("grad_check: function must return a scalar, got " + shape_string(y.shape()));
    }
    return y.item();
}

} // namespace

GradCheckResult grad_check_detailed(const ScalarFunction& f, const Tensor64& x, double h) {
    if (!(h >= 1e-5 && h <= 1e-2)) {
        throw ContractError("grad_check: step must lie in [1e-5, 1e-2]");
    }
    Tensor64 leaf = x.detach(true);
    const Tensor64 y = f(leaf);
    if (y.numel() != 1) {
        throw ContractError("grad_check: function must return a scalar, got " + shape_string(y.shape()));
    }
    GradCheckResult result;
    if (y.requires_grad()) {
        backward(y);
        result.analytic = leaf.grad();
    } else {
        // f does not depend on x at all.
        result.analytic.assign(x.numel(), 0.0);
    }

    std::vector<double> probe(x.values().begin(), x.values().end());
    result.numeric.resize(probe.size());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + h;
        const double up = evaluate(f, Tensor64(x.shape(), probe));
        probe[i] = saved - h;
        const double down = evaluate(f, Tensor64(x.shape(), probe));
        probe[i] = saved;
        result.numeric[i] = (up - down) / (2.0 * h);
        const double a = result.analytic[i];
        const double err = std::abs(a - result.numeric[i]) / std::max(1.0, std::abs(a));
        if (err > result.max_rel_error) {
            result.max_rel_error = err;
            result.worst_index = i;
        }
    }
    return result;
}

double grad_check(const ScalarFunction& f, const Tensor64& x, double h) {
    return grad_check_detailed(f, x, h).max_rel_error;
}

} // namespace neuroalign
