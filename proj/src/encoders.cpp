// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/encoders.hpp"

#include <cmath>

#include "neuroalign/error.hpp"

namespace neuroalign {

std::string_view modality_name(ModalityId id) {
    switch (id) {
    case ModalityId::image: return "image";
    case ModalityId::text: return "text";
    case ModalityId::depth: return "depth";
    case ModalityId::edge: return "edge";
    case ModalityId::fusion: return "fusion";
    }
    return "?";
}

ModalityId parse_modality(std::string_view name) {
    for (auto id : {ModalityId::image, ModalityId::text, ModalityId::depth, ModalityId::edge, ModalityId::fusion}) {
        if (modality_name(id) == name) {
            return id;
        }
    }
    throw ConfigError("unknown modality '" + std::string(name) + "'");
}

std::size_t modality_index(ModalityId id) {
    for (std::size_t i = 0; i < kExpertModalities.size(); ++i) {
        if (kExpertModalities[i] == id) {
            return i;
        }
    }
    throw ContractError("fusion is not an expert modality");
}

std::string_view variant_name(EncoderVariant v) {
    switch (v) {
    case EncoderVariant::cogcap: return "cogcap";
    case EncoderVariant::tsconv: return "tsconv";
    case EncoderVariant::shallownet: return "shallownet";
    case EncoderVariant::eegnet: return "eegnet";
    }
    return "?";
}

EncoderVariant parse_variant(std::string_view name) {
    for (auto v : {EncoderVariant::cogcap, EncoderVariant::tsconv, EncoderVariant::shallownet, EncoderVariant::eegnet}) {
        if (variant_name(v) == name) {
            return v;
        }
    }
    throw ConfigError("unknown encoder variant '" + std::string(name) + "'");
}

void ExpertDims::validate() const {
    if (channels == 0 || timesteps == 0 || embed_dim == 0 || temporal_kernel == 0) {
        throw ContractError("expert dimensions must be positive");
    }
}

std::size_t ExpertDims::kernel_width() const {
    switch (variant) {
    case EncoderVariant::shallownet: return 2 * temporal_kernel - 1;
    case EncoderVariant::eegnet: return (temporal_kernel + 1) / 2;
    default: return temporal_kernel;
    }
}

template <typename T>
BasicTensor<T> SelfAttention<T>::operator()(const BasicTensor<T>& x) const {
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(x.dim(2)));
    const auto q = query(x);
    const auto k = key(x);
    const auto v = value(x);
    const auto weights = softmax_rows(scale(bmm(q, transpose(k)), inv_sqrt));
    return add(x, bmm(weights, v));
}

template <typename T>
void SelfAttention<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
}

template <typename T>
ParamList<T> ExpertParams<T>::parameters(const std::string& prefix) const {
    ParamList<T> out;
    if (channel_attn) {
        channel_attn->collect(prefix + ".channel_attn", out);
        temporal_attn->collect(prefix + ".temporal_attn", out);
    }
    out.push_back({prefix + ".conv.weight", conv_weight});
    out.push_back({prefix + ".conv.bias", conv_bias});
    mix.collect(prefix + ".mix", out);
    proj1.collect(prefix + ".proj1", out);
    proj2.collect(prefix + ".proj2", out);
    return out;
}

namespace {

SelfAttention<float> make_attention(std::size_t width, Rng& rng) {
    return {make_linear(width, width, rng), make_linear(width, width, rng), make_linear(width, width, rng)};
}

template <typename T>
void check_input(const BasicTensor<T>& x, const ExpertDims& dims) {
    if (x.rank() != 3 || x.dim(1) != dims.channels || x.dim(2) != dims.timesteps) {
        throw ContractError("expert input " + shape_string(x.shape()) + " does not match [B, " +
                            std::to_string(dims.channels) + ", " + std::to_string(dims.timesteps) + "]");
    }
}

} // namespace

ExpertParams<float> init_expert(const ExpertDims& dims, Rng& rng) {
    dims.validate();
    ExpertParams<float> p;
    p.dims = dims;
    const auto c = dims.channels;
    const auto k = dims.kernel_width();
    if (dims.has_attention()) {
        p.channel_attn = make_attention(dims.timesteps, rng);
        p.temporal_attn = make_attention(c, rng);
    }
    // Depthwise conv: each channel's filter sees k inputs and feeds one output.
    p.conv_weight = xavier_uniform(k, 1, {c, k}, rng);
    p.conv_bias = Tensor::zeros({c}, true);
    p.mix = make_linear(c, c, rng);
    p.proj1 = make_linear(c, dims.embed_dim, rng);
    p.proj2 = make_linear(dims.embed_dim, dims.embed_dim, rng);
    return p;
}

std::array<ExpertParams<float>, 4> init_experts(std::uint64_t seed, const ExpertDims& dims) {
    std::array<ExpertParams<float>, 4> out;
    for (std::size_t m = 0; m < 4; ++m) {
        Rng rng(derive_seed(seed, 100 + m));
        out[m] = init_expert(dims, rng);
    }
    return out;
}

template <typename T>
BasicTensor<T> expert_attention(const BasicTensor<T>& x, const ExpertParams<T>& params) {
    check_input(x, params.dims);
    if (!params.channel_attn) {
        return x;
    }
    const auto channel_mixed = (*params.channel_attn)(x);
    const auto by_time = permute(channel_mixed, {0, 2, 1});
    return permute((*params.temporal_attn)(by_time), {0, 2, 1});
}

template <typename T>
BasicTensor<T> expert_ts_conv(const BasicTensor<T>& x, const ExpertParams<T>& params) {
    check_input(x, params.dims);
    const auto conv = causal_depthwise_conv1d(x, params.conv_weight, params.conv_bias);
    return gelu(params.mix(permute(conv, {0, 2, 1})));
}

template <typename T>
BasicTensor<T> expert_forward(const BasicTensor<T>& x, const ExpertParams<T>& params) {
    const auto features = expert_ts_conv(expert_attention(x, params), params);
    const auto pooled = mean_axis(features, 1);
    return params.proj2(gelu(params.proj1(pooled)));
}

#define NEUROALIGN_INSTANTIATE(T)                                                                             \
    template struct SelfAttention<T>;                                                                        \
    template struct ExpertParams<T>;                                                                         \
    template BasicTensor<T> expert_attention(const BasicTensor<T>&, const ExpertParams<T>&);                 \
    template BasicTensor<T> expert_ts_conv(const BasicTensor<T>&, const ExpertParams<T>&);                   \
    template BasicTensor<T> expert_forward(const BasicTensor<T>&, const ExpertParams<T>&);

NEUROALIGN_INSTANTIATE(float)
NEUROALIGN_INSTANTIATE(double)

} // namespace neuroalign
