// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Contrastive and alignment losses.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "neuroalign/tensor.hpp"

namespace neuroalign {

enum class ContrastiveKind { scm, infonce };

/// How entries outside the similarity-category mask enter the softmax.
/// `literal` multiplies them by zero (each contributes exp(0) = 1 to the
/// denominator); `neg_inf` drops them from the denominator entirely.
enum class MaskMode { literal, neg_inf };

struct LossConfig {
    double tau = 0.1;
    std::size_t k = 10;
    double lambda_mse = 1.0;
    double lambda_cos = 0.5;
    double lambda_reg = 1e-4;
    ContrastiveKind kind = ContrastiveKind::scm;
    MaskMode mask_mode = MaskMode::literal;

    void validate() const;
};

/// m[i, j] = 1 iff labels agree and j is among the k largest entries of row
/// i of `similarity` (ties go to the lower index); the diagonal is always 1.
/// `similarity` is a row-major [B, B] matrix.
std::vector<std::uint8_t> scm_mask(std::span<const double> similarity, std::span<const std::uint32_t> labels,
                                   std::size_t k);

/// -(1/B) sum_i log M_ii over S = E targets^T / tau with the category mask.
/// Rows of E and targets must be unit length; B >= 2.
template <typename T>
BasicTensor<T> scm_loss(const BasicTensor<T>& embeddings, const BasicTensor<T>& targets,
                        std::span<const std::uint32_t> labels, const LossConfig& cfg);

/// Symmetric cross-entropy with diagonal positives, averaged over both
/// directions.
template <typename T>
BasicTensor<T> infonce_loss(const BasicTensor<T>& embeddings, const BasicTensor<T>& targets, double tau);

/// Dispatches on cfg.kind.
template <typename T>
BasicTensor<T> contrastive_loss(const BasicTensor<T>& embeddings, const BasicTensor<T>& targets,
                                std::span<const std::uint32_t> labels, const LossConfig& cfg);

/// Batch mean of sum over modalities of
/// lambda_mse |e - v|^2 + lambda_cos (1 - cos(e, v)) + lambda_reg |e|^2.
/// e_hat and v are [B, M, d]; rows of v must be unit length.
template <typename T>
BasicTensor<T> sth_loss(const BasicTensor<T>& e_hat, const BasicTensor<T>& v, const LossConfig& cfg);

} // namespace neuroalign
