// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal fusion encoder over the four expert embeddings.

#pragma once

#include <array>
#include <vector>

#include "neuroalign/nn.hpp"

namespace neuroalign {

struct FusionDims {
    std::size_t input_dim = 1024; // expert embedding width
    std::size_t model_dim = 1024;
    std::size_t heads = 8;
    std::size_t ffn_mult = 4;
    std::size_t layers = 2;

    void validate() const;
};

template <typename T>
struct MultiHeadAttention {
    std::size_t heads = 1;
    Linear<T> query, key, value, output;

    /// x[B, N, d] -> [B, N, d]
    BasicTensor<T> operator()(const BasicTensor<T>& x) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;
    template <typename U>
    MultiHeadAttention<U> cast() const {
        return {heads, query.template cast<U>(), key.template cast<U>(), value.template cast<U>(),
                output.template cast<U>()};
    }
};

/// Post-norm layer: H = LN1(H + MSA(H)); H = LN2(H + FFN(H)).
template <typename T>
struct FusionLayer {
    MultiHeadAttention<T> attn;
    Norm<T> norm1;
    Linear<T> ff1, ff2;
    Norm<T> norm2;

    BasicTensor<T> operator()(const BasicTensor<T>& x) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;
    template <typename U>
    FusionLayer<U> cast() const {
        return {attn.template cast<U>(), norm1.template cast<U>(), ff1.template cast<U>(), ff2.template cast<U>(),
                norm2.template cast<U>()};
    }
};

template <typename T>
struct FusionParams {
    FusionDims dims;
    std::array<Linear<T>, 4> input_proj;
    std::array<Norm<T>, 4> input_norm;
    BasicTensor<T> position; // [4, d]
    std::vector<FusionLayer<T>> layers;
    Linear<T> out1, out2;

    ParamList<T> parameters(const std::string& prefix) const;

    template <typename U>
    FusionParams<U> cast() const {
        FusionParams<U> out;
        out.dims = dims;
        for (std::size_t m = 0; m < 4; ++m) {
            out.input_proj[m] = input_proj[m].template cast<U>();
            out.input_norm[m] = input_norm[m].template cast<U>();
        }
        out.position = position.template cast<U>();
        for (const auto& l : layers) {
            out.layers.push_back(l.template cast<U>());
        }
        out.out1 = out1.template cast<U>();
        out.out2 = out2.template cast<U>();
        return out;
    }
};

/// Xavier weights, zero biases, unit LayerNorm gains and N(0, 0.02^2)
/// position codes.
FusionParams<float> init_fusion(const FusionDims& dims, Rng& rng);

/// Per-modality Linear -> LayerNorm -> GELU, stacked in the order
/// [image, text, depth, edge], plus the position codes. -> [B, 4, d]
template <typename T>
BasicTensor<T> tokenize_project(const std::array<BasicTensor<T>, 4>& z, const FusionParams<T>& params);

/// Encoder layers, mean over the four tokens, then z = h + MLP(h). -> [B, d]
template <typename T>
BasicTensor<T> fusion_forward(const BasicTensor<T>& tokens, const FusionParams<T>& params);

template <typename T>
struct MaskedTokens {
    BasicTensor<T> tokens;
    std::size_t index = 0;
};

/// Zeroes one uniformly drawn modality slot for the whole batch.
template <typename T>
MaskedTokens<T> modality_mask(const BasicTensor<T>& tokens, Rng& rng);

} // namespace neuroalign
