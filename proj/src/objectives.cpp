// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "neuroalign/error.hpp"
#include "neuroalign/ops.hpp"

namespace neuroalign {

void LossConfig::validate() const {
    if (!(tau > 0)) {
        throw ConfigError("loss temperature tau must be positive");
    }
    if (k == 0) {
        throw ConfigError("top-k must be at least 1");
    }
    if (lambda_mse < 0 || lambda_cos < 0 || lambda_reg < 0) {
        throw ConfigError("loss weights must be non-negative");
    }
}

std::vector<std::uint8_t> scm_mask(std::span<const double> similarity, std::span<const std::uint32_t> labels,
                                   std::size_t k) {
    const std::size_t b = labels.size();
    if (similarity.size() != b * b) {
        throw ShapeError("scm_mask: similarity must be [B, B]");
    }
    std::vector<std::uint8_t> mask(b * b, 0);
    std::vector<std::size_t> order(b);
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = similarity.data() + i * b;
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return row[a] > row[c]; });
        for (std::size_t r = 0; r < std::min(k, b); ++r) {
            const auto j = order[r];
            if (labels[i] == labels[j]) {
                mask[i * b + j] = 1;
            }
        }
        mask[i * b + i] = 1;
    }
    return mask;
}

namespace {

template <typename T>
void check_pair(const BasicTensor<T>& e, const BasicTensor<T>& t, const char* what) {
    if (e.rank() != 2 || t.shape() != e.shape()) {
        throw ShapeError(std::string(what) + ": embeddings " + shape_string(e.shape()) + " and targets " +
                         shape_string(t.shape()) + " must both be [B, d]");
    }
}

template <typename T>
void check_unit_rows(const BasicTensor<T>& x, const char* what) {
    const auto d = x.dim(x.rank() - 1);
    const auto rows = x.numel() / d;
    auto v = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
        double sq = 0;
        for (std::size_t j = 0; j < d; ++j) {
            sq += static_cast<double>(v[r * d + j]) * v[r * d + j];
        }
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-3) {
            throw ContractError(std::string(what) + ": row " + std::to_string(r) + " has norm " +
                                std::to_string(std::sqrt(sq)) + ", expected unit length");
        }
    }
}

template <typename T>
BasicTensor<T> mean_diag_nll(const BasicTensor<T>& log_probs) {
    return scale(mean_all(diagonal(log_probs)), T(-1));
}

} // namespace

template <typename T>
BasicTensor<T> scm_loss(const BasicTensor<T>& embeddings, const BasicTensor<T>& targets,
                        std::span<const std::uint32_t> labels, const LossConfig& cfg) {
    cfg.validate();
    check_pair(embeddings, targets, "scm_loss");
    const auto b = embeddings.dim(0);
    if (b < 2) {
        throw ContractError("scm_loss needs a batch of at least 2");
    }
    if (labels.size() != b) {
        throw ShapeError("scm_loss: one label per row required");
    }
    check_unit_rows(embeddings, "scm_loss embeddings");
    check_unit_rows(targets, "scm_loss targets");

    const auto s = scale(matmul(embeddings, transpose(targets)), static_cast<T>(1.0 / cfg.tau));
    const std::vector<double> sim(s.values().begin(), s.values().end());
    const auto mask = scm_mask(sim, labels, cfg.k);
    if (cfg.mask_mode == MaskMode::neg_inf) {
        return mean_diag_nll(log_softmax_rows(s, mask));
    }
    std::vector<T> m(mask.begin(), mask.end());
    return mean_diag_nll(log_softmax_rows(mul(s, BasicTensor<T>({b, b}, std::move(m)))));
}

template <typename T>
BasicTensor<T> infonce_loss(const BasicTensor<T>& embeddings, const BasicTensor<T>& targets, double tau) {
    if (!(tau > 0)) {
        throw ConfigError("loss temperature tau must be positive");
    }
    check_pair(embeddings, targets, "infonce_loss");
    check_unit_rows(embeddings, "infonce_loss embeddings");
    check_unit_rows(targets, "infonce_loss targets");
    const auto s = scale(matmul(embeddings, transpose(targets)), static_cast<T>(1.0 / tau));
    return scale(add(mean_diag_nll(log_softmax_rows(s)), mean_diag_nll(log_softmax_rows(transpose(s)))), T(0.5));
}

template <typename T>
BasicTensor<T> contrastive_loss(const BasicTensor<T>& embeddings, const BasicTensor<T>& targets,
                                std::span<const std::uint32_t> labels, const LossConfig& cfg) {
    if (cfg.kind == ContrastiveKind::infonce) {
        return infonce_loss(embeddings, targets, cfg.tau);
    }
    return scm_loss(embeddings, targets, labels, cfg);
}

template <typename T>
BasicTensor<T> sth_loss(const BasicTensor<T>& e_hat, const BasicTensor<T>& v, const LossConfig& cfg) {
    cfg.validate();
    if (e_hat.rank() != 3 || v.shape() != e_hat.shape()) {
        throw ContractError("sth_loss: e_hat " + shape_string(e_hat.shape()) + " and targets " +
                            shape_string(v.shape()) + " must both be [B, M, d]");
    }
    check_unit_rows(v, "sth_loss targets");
    const auto b = e_hat.dim(0);
    const auto mse = row_sq_norm(sub(e_hat, v));                   // [B, M]
    const auto cos = row_dot(l2_normalize_rows(e_hat), v);         // [B, M]
    const auto reg = row_sq_norm(e_hat);                           // [B, M]
    auto total = add(scale(mse, static_cast<T>(cfg.lambda_mse)),
                     scale(add_scalar(scale(cos, T(-1)), T(1)), static_cast<T>(cfg.lambda_cos)));
    total = add(total, scale(reg, static_cast<T>(cfg.lambda_reg)));
    return scale(sum_all(total), static_cast<T>(1.0 / static_cast<double>(b)));
}

#define NEUROALIGN_INSTANTIATE(T)                                                                              \
    template BasicTensor<T> scm_loss(const BasicTensor<T>&, const BasicTensor<T>&,                            \
                                     std::span<const std::uint32_t>, const LossConfig&);                      \
    template BasicTensor<T> infonce_loss(const BasicTensor<T>&, const BasicTensor<T>&, double);               \
    template BasicTensor<T> contrastive_loss(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                             std::span<const std::uint32_t>, const LossConfig&);              \
    template BasicTensor<T> sth_loss(const BasicTensor<T>&, const BasicTensor<T>&, const LossConfig&);

NEUROALIGN_INSTANTIATE(float)
NEUROALIGN_INSTANTIATE(double)

} // namespace neuroalign
