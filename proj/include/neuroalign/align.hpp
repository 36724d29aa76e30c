// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared-trunk and per-modality heads mapping the four expert embeddings
// into their target spaces.

#pragma once

#include <array>
#include <vector>

#include "neuroalign/encoders.hpp"
#include "neuroalign/nn.hpp"
#include "neuroalign/objectives.hpp"
#include "neuroalign/optim.hpp"

namespace neuroalign {

struct SthDims {
    std::size_t input_dim = 1024; // per-modality embedding width
    std::size_t model_dim = 1024;
    std::size_t blocks = 4;

    void validate() const;
};

template <typename T>
struct TrunkBlock {
    Linear<T> linear;
    Norm<T> norm;
};

template <typename T>
struct SthHead {
    Linear<T> hidden, output;
};

template <typename T>
struct SthParams {
    SthDims dims;
    std::vector<TrunkBlock<T>> trunk;
    std::array<SthHead<T>, 4> heads;

    ParamList<T> parameters(const std::string& prefix) const;

    template <typename U>
    SthParams<U> cast() const {
        SthParams<U> out;
        out.dims = dims;
        for (const auto& b : trunk) {
            out.trunk.push_back({b.linear.template cast<U>(), b.norm.template cast<U>()});
        }
        for (std::size_t m = 0; m < 4; ++m) {
            out.heads[m] = {heads[m].hidden.template cast<U>(), heads[m].output.template cast<U>()};
        }
        return out;
    }
};

/// Block 1 maps 4 * input_dim -> d, later blocks d -> d.
SthParams<float> init_sth(const SthDims& dims, Rng& rng);

template <typename T>
struct SthOutput {
    std::array<BasicTensor<T>, 4> aligned; // unit rows, [B, d] each
    BasicTensor<T> shared;                 // trunk output f, [B, d]
};

/// Concatenate [image, text, depth, edge], run the SiLU(LayerNorm(W h + b))
/// trunk, then each head Linear -> SiLU -> Linear -> L2 normalisation.
template <typename T>
SthOutput<T> sth_forward(const std::array<BasicTensor<T>, 4>& e, const SthParams<T>& params);

/// Zeroes modality slot `slot` of every sample; this is the dropout used in
/// training and the zero fill used for single-modality inference.
template <typename T>
std::array<BasicTensor<T>, 4> drop_modality(const std::array<BasicTensor<T>, 4>& e, std::size_t slot);

struct SthStepResult {
    double loss = 0;
    std::size_t dropped = 0; // slot zeroed this step, 4 when dropout is off
};

/// One optimisation step: optional modality dropout (uniform slot), forward,
/// sth_loss against targets [B, 4, d], backward and update. A non-finite
/// loss or gradient raises NumericalError before any parameter changes.
SthStepResult sth_train_step(const std::array<Tensor, 4>& e, const Tensor& targets, const SthParams<float>& params,
                             AdamW& optimizer, Rng& rng, const LossConfig& cfg, bool dropout = true);

enum class SthInference { all, single };

/// Aligned embedding of `query` without dropout. In `single` mode the other
/// three inputs are zero-filled.
Tensor sth_infer(const std::array<Tensor, 4>& e, const SthParams<float>& params, ModalityId query,
                 SthInference mode = SthInference::all);

} // namespace neuroalign
