// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/fusion.hpp"

#include <cmath>

#include "neuroalign/error.hpp"

namespace neuroalign {

void FusionDims::validate() const {
    if (input_dim == 0 || model_dim == 0 || heads == 0 || ffn_mult == 0 || layers == 0) {
        throw ContractError("fusion dimensions must be positive");
    }
    if (model_dim % heads != 0) {
        throw ContractError("fusion width " + std::to_string(model_dim) + " is not divisible by " +
                            std::to_string(heads) + " heads");
    }
}

template <typename T>
BasicTensor<T> MultiHeadAttention<T>::operator()(const BasicTensor<T>& x) const {
    const auto b = x.dim(0), n = x.dim(1), d = x.dim(2);
    const auto dh = d / heads;
    auto split = [&](const BasicTensor<T>& t) {
        return reshape(permute(reshape(t, {b, n, heads, dh}), {0, 2, 1, 3}), {b * heads, n, dh});
    };
    const auto q = split(query(x));
    const auto k = split(key(x));
    const auto v = split(value(x));
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    const auto weights = softmax_rows(scale(bmm(q, transpose(k)), inv_sqrt));
    const auto merged = reshape(permute(reshape(bmm(weights, v), {b, heads, n, dh}), {0, 2, 1, 3}), {b, n, d});
    return output(merged);
}

template <typename T>
void MultiHeadAttention<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
}

template <typename T>
BasicTensor<T> FusionLayer<T>::operator()(const BasicTensor<T>& x) const {
    const auto h = norm1(add(x, attn(x)));
    return norm2(add(h, ff2(gelu(ff1(h)))));
}

template <typename T>
void FusionLayer<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    attn.collect(prefix + ".attn", out);
    norm1.collect(prefix + ".norm1", out);
    ff1.collect(prefix + ".ff1", out);
    ff2.collect(prefix + ".ff2", out);
    norm2.collect(prefix + ".norm2", out);
}

template <typename T>
ParamList<T> FusionParams<T>::parameters(const std::string& prefix) const {
    ParamList<T> out;
    for (std::size_t m = 0; m < 4; ++m) {
        input_proj[m].collect(prefix + ".input_proj" + std::to_string(m), out);
        input_norm[m].collect(prefix + ".input_norm" + std::to_string(m), out);
    }
    out.push_back({prefix + ".position", position});
    for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].collect(prefix + ".layer" + std::to_string(l), out);
    }
    out1.collect(prefix + ".out1", out);
    out2.collect(prefix + ".out2", out);
    return out;
}

FusionParams<float> init_fusion(const FusionDims& dims, Rng& rng) {
    dims.validate();
    const auto d = dims.model_dim;
    FusionParams<float> p;
    p.dims = dims;
    for (std::size_t m = 0; m < 4; ++m) {
        p.input_proj[m] = make_linear(dims.input_dim, d, rng);
        p.input_norm[m] = make_norm(d);
    }
    std::vector<float> pos(4 * d);
    for (auto& v : pos) {
        v = static_cast<float>(0.02 * rng.normal());
    }
    p.position = Tensor({4, d}, std::move(pos), true);
    for (std::size_t l = 0; l < dims.layers; ++l) {
        FusionLayer<float> layer;
        layer.attn = {dims.heads, make_linear(d, d, rng), make_linear(d, d, rng), make_linear(d, d, rng),
                      make_linear(d, d, rng)};
        layer.norm1 = make_norm(d);
        layer.ff1 = make_linear(d, d * dims.ffn_mult, rng);
        layer.ff2 = make_linear(d * dims.ffn_mult, d, rng);
        layer.norm2 = make_norm(d);
        p.layers.push_back(std::move(layer));
    }
    p.out1 = make_linear(d, d, rng);
    p.out2 = make_linear(d, d, rng);
    return p;
}

template <typename T>
BasicTensor<T> tokenize_project(const std::array<BasicTensor<T>, 4>& z, const FusionParams<T>& params) {
    const auto b = z[0].dim(0);
    const auto d = params.dims.model_dim;
    std::vector<BasicTensor<T>> tokens;
    for (std::size_t m = 0; m < 4; ++m) {
        if (z[m].rank() != 2 || z[m].dim(0) != b || z[m].dim(1) != params.dims.input_dim) {
            throw ContractError("fusion input " + std::to_string(m) + " has shape " + shape_string(z[m].shape()) +
                                ", expected [" + std::to_string(b) + ", " + std::to_string(params.dims.input_dim) +
                                "]");
        }
        tokens.push_back(gelu(params.input_norm[m](params.input_proj[m](z[m]))));
    }
    const auto stacked = reshape(stack(tokens, 1), {b, 4 * d});
    return reshape(add_bias(stacked, reshape(params.position, {4 * d})), {b, 4, d});
}

template <typename T>
BasicTensor<T> fusion_forward(const BasicTensor<T>& tokens, const FusionParams<T>& params) {
    if (tokens.rank() != 3 || tokens.dim(1) != 4 || tokens.dim(2) != params.dims.model_dim) {
        throw ContractError("fusion tokens " + shape_string(tokens.shape()) + " must be [B, 4, " +
                            std::to_string(params.dims.model_dim) + "]");
    }
    auto h = tokens;
    for (const auto& layer : params.layers) {
        h = layer(h);
    }
    const auto pooled = mean_axis(h, 1);
    return add(pooled, params.out2(gelu(params.out1(pooled))));
}

template <typename T>
MaskedTokens<T> modality_mask(const BasicTensor<T>& tokens, Rng& rng) {
    const auto index = rng.index(tokens.dim(1));
    return {zero_slot(tokens, 1, index), index};
}

#define NEUROALIGN_INSTANTIATE(T)                                                                          \
    template struct MultiHeadAttention<T>;                                                                \
    template struct FusionLayer<T>;                                                                       \
    template struct FusionParams<T>;                                                                      \
    template BasicTensor<T> tokenize_project(const std::array<BasicTensor<T>, 4>&, const FusionParams<T>&); \
    template BasicTensor<T> fusion_forward(const BasicTensor<T>&, const FusionParams<T>&);                 \
    template MaskedTokens<T> modality_mask(const BasicTensor<T>&, Rng&);

NEUROALIGN_INSTANTIATE(float)
NEUROALIGN_INSTANTIATE(double)

} // namespace neuroalign
