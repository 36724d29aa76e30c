// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Small parameter containers shared by the encoder, fusion and alignment
// modules. Weights are stored [in, out] so that a layer is x * W + b.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "neuroalign/ops.hpp"
#include "neuroalign/random.hpp"
#include "neuroalign/tensor.hpp"

namespace neuroalign {

template <typename T>
struct NamedParam {
    std::string name;
    BasicTensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Shape shape, Rng& rng);

template <typename T>
struct Linear {
    BasicTensor<T> weight; // [in, out]
    BasicTensor<T> bias;   // [out]

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add_bias(matmul(x, weight), bias); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }

    template <typename U>
    Linear<U> cast() const {
        return {weight.template cast<U>(), bias.template cast<U>()};
    }
};

/// Xavier-uniform weights, zero bias.
Linear<float> make_linear(std::size_t in, std::size_t out, Rng& rng);

/// LayerNorm gain and bias.
template <typename T>
struct Norm {
    BasicTensor<T> gain;
    BasicTensor<T> bias;

    BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gain, bias); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".gain", gain});
        out.push_back({prefix + ".bias", bias});
    }

    template <typename U>
    Norm<U> cast() const {
        return {gain.template cast<U>(), bias.template cast<U>()};
    }
};

/// Unit gain, zero bias.
Norm<float> make_norm(std::size_t dim);

template <typename T>
std::size_t parameter_count(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) {
        n += p.tensor.numel();
    }
    return n;
}

/// Copies values from `source` into the tensors of `target`, matched by
/// name. Throws when a name is missing or a shape differs.
void assign_parameters(const ParamList<float>& target, const ParamList<float>& source);

} // namespace neuroalign
