// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/nn.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "neuroalign/error.hpp"

namespace neuroalign {

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Shape shape, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) {
        v = static_cast<float>(rng.uniform(-bound, bound));
    }
    return Tensor(std::move(shape), std::move(values), true);
}

Linear<float> make_linear(std::size_t in, std::size_t out, Rng& rng) {
    return {xavier_uniform(in, out, {in, out}, rng), Tensor::zeros({out}, true)};
}

Norm<float> make_norm(std::size_t dim) {
    return {Tensor::full({dim}, 1.f, true), Tensor::zeros({dim}, true)};
}

void assign_parameters(const ParamList<float>& target, const ParamList<float>& source) {
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& p : source) {
        by_name.emplace(p.name, &p.tensor);
    }
    for (const auto& p : target) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw FormatError("missing parameter '" + p.name + "'");
        }
        if (it->second->shape() != p.tensor.shape()) {
            throw ShapeError("parameter '" + p.name + "' has shape " + shape_string(it->second->shape()) +
                             ", expected " + shape_string(p.tensor.shape()));
        }
        Tensor dst = p.tensor;
        auto src = it->second->values();
        std::copy(src.begin(), src.end(), dst.mutable_values().begin());
    }
}

} // namespace neuroalign
