// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Modality expert encoders: one parameter-isolated branch per target
// modality, each Proj(TS-Conv(Attn(x))) over a [B, C, T] epoch batch.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "neuroalign/nn.hpp"

namespace neuroalign {

enum class ModalityId { image, text, depth, edge, fusion };

/// The four expert branches in their fixed order.
inline constexpr std::array<ModalityId, 4> kExpertModalities = {ModalityId::image, ModalityId::text,
                                                                ModalityId::depth, ModalityId::edge};

std::string_view modality_name(ModalityId id);
ModalityId parse_modality(std::string_view name);
/// Position of an expert modality in kExpertModalities; fusion is an error.
std::size_t modality_index(ModalityId id);

/// Backbone variants. `cogcap` is the full encoder; the others drop the
/// attention stages and change the temporal kernel, for encoder ablations.
enum class EncoderVariant { cogcap, tsconv, shallownet, eegnet };

std::string_view variant_name(EncoderVariant v);
EncoderVariant parse_variant(std::string_view name);

struct ExpertDims {
    std::size_t channels = 0;
    std::size_t timesteps = 0;
    std::size_t embed_dim = 1024;
    std::size_t temporal_kernel = 7;
    EncoderVariant variant = EncoderVariant::cogcap;

    void validate() const;
    /// Temporal kernel width actually used by the variant.
    std::size_t kernel_width() const;
    bool has_attention() const { return variant == EncoderVariant::cogcap; }
};

/// Single-head, width-preserving self-attention with a residual connection.
template <typename T>
struct SelfAttention {
    Linear<T> query, key, value;

    /// x[B, N, D] -> x + softmax(Q K^T / sqrt(D)) V
    BasicTensor<T> operator()(const BasicTensor<T>& x) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;
    template <typename U>
    SelfAttention<U> cast() const {
        return {query.template cast<U>(), key.template cast<U>(), value.template cast<U>()};
    }
};

template <typename T>
struct ExpertParams {
    ExpertDims dims;
    std::optional<SelfAttention<T>> channel_attn;  // tokens are channels, width T
    std::optional<SelfAttention<T>> temporal_attn; // tokens are time steps, width C
    BasicTensor<T> conv_weight;                    // [C, k]
    BasicTensor<T> conv_bias;                      // [C]
    Linear<T> mix;                                 // 1x1 channel mixing, C -> C
    Linear<T> proj1;                               // C -> d
    Linear<T> proj2;                               // d -> d

    ParamList<T> parameters(const std::string& prefix) const;

    template <typename U>
    ExpertParams<U> cast() const {
        ExpertParams<U> out;
        out.dims = dims;
        if (channel_attn) {
            out.channel_attn = channel_attn->template cast<U>();
            out.temporal_attn = temporal_attn->template cast<U>();
        }
        out.conv_weight = conv_weight.template cast<U>();
        out.conv_bias = conv_bias.template cast<U>();
        out.mix = mix.template cast<U>();
        out.proj1 = proj1.template cast<U>();
        out.proj2 = proj2.template cast<U>();
        return out;
    }
};

/// Xavier-uniform weights and zero biases from `rng`.
ExpertParams<float> init_expert(const ExpertDims& dims, Rng& rng);
/// Four branches drawn from independent streams of `seed`.
std::array<ExpertParams<float>, 4> init_experts(std::uint64_t seed, const ExpertDims& dims);

/// Channel attention then temporal attention (identity for variants
/// without attention). [B, C, T] -> [B, C, T]
template <typename T>
BasicTensor<T> expert_attention(const BasicTensor<T>& x, const ExpertParams<T>& params);

/// Causal depthwise temporal conv, channel mixing and GELU, before pooling.
/// [B, C, T] -> [B, T, C]
template <typename T>
BasicTensor<T> expert_ts_conv(const BasicTensor<T>& x, const ExpertParams<T>& params);

/// Full branch: attention, TS-conv, mean over time, two-layer projection.
/// [B, C, T] -> [B, d]
template <typename T>
BasicTensor<T> expert_forward(const BasicTensor<T>& x, const ExpertParams<T>& params);

} // namespace neuroalign
