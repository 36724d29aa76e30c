// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

#include "neuroalign/tensor.hpp"

namespace neuroalign {

using ScalarFunction = std::function<Tensor64(const Tensor64&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

/// Compares the taped gradient of f at x with central differences of step h,
/// in float64. The error of a coordinate is |analytic - fd| / max(1, |analytic|).
/// Throws ContractError when f is not scalar or h is outside [1e-5, 1e-2].
GradCheckResult grad_check_detailed(const ScalarFunction& f, const Tensor64& x, double h = 1e-5);

/// Maximum relative error of grad_check_detailed.
double grad_check(const ScalarFunction& f, const Tensor64& x, double h = 1e-5);

} // namespace neuroalign
