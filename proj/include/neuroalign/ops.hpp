// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Broadcasting is limited to leading batch
// dimensions: a [..., n] tensor may combine with an [n] bias, and a
// [..., m, k] tensor may multiply a shared [k, n] matrix. Everything else
// requires matching shapes and an explicit reshape.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "neuroalign/tensor.hpp"

namespace neuroalign {

enum class Activation { gelu, silu, relu, identity };

// Elementwise arithmetic on identically shaped tensors.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T offset);

/// a[..., n] + bias[n]
template <typename T> BasicTensor<T> add_bias(const BasicTensor<T>& a, const BasicTensor<T>& bias);

/// a[..., m, k] x b[k, n] -> [..., m, n]
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// a[B, m, k] x b[B, k, n] -> [B, m, n]
template <typename T> BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
template <typename T> BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<std::size_t>& perm);
/// Swaps the last two axes.
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& a);

/// Softmax along the last axis with per-row max subtraction.
template <typename T> BasicTensor<T> softmax_rows(const BasicTensor<T>& x);
/// Log-softmax along the last axis. With a keep mask (same length as x),
/// dropped entries are excluded from the normaliser, output 0 and receive
/// no gradient; every row must keep at least one entry.
template <typename T>
BasicTensor<T> log_softmax_rows(const BasicTensor<T>& x, std::span<const std::uint8_t> keep = {});

/// Normalises the last axis to zero mean and unit (population) variance,
/// then applies gain and bias of shape [d].
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          T eps = T(1e-5));

/// GELU uses the tanh approximation with fixed constants.
template <typename T> BasicTensor<T> activate(const BasicTensor<T>& x, Activation kind);
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& x) { return activate(x, Activation::gelu); }
template <typename T> BasicTensor<T> silu(const BasicTensor<T>& x) { return activate(x, Activation::silu); }

/// Scalar forward helpers shared with tests.
double gelu_value(double x);
double silu_value(double x);

template <typename T> BasicTensor<T> sum_all(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean_all(const BasicTensor<T>& x);
/// Mean over one axis; the axis is removed from the shape.
template <typename T> BasicTensor<T> mean_axis(const BasicTensor<T>& x, std::size_t axis);

/// Concatenates [..., d_i] tensors with equal leading dims along the last axis.
template <typename T> BasicTensor<T> concat_last(const std::vector<BasicTensor<T>>& parts);
/// Stacks equally shaped tensors along a new axis.
template <typename T> BasicTensor<T> stack(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
/// Copy of x with the slab at `index` along `axis` set to exactly zero.
template <typename T> BasicTensor<T> zero_slot(const BasicTensor<T>& x, std::size_t axis, std::size_t index);

/// Rows of the last axis divided by their L2 norm (norm floored at eps).
template <typename T> BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x, T eps = T(1e-12));
/// Row-wise dot product over the last axis: [..., d] x [..., d] -> [...]
template <typename T> BasicTensor<T> row_dot(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Row-wise squared L2 norm over the last axis.
template <typename T> BasicTensor<T> row_sq_norm(const BasicTensor<T>& a);
/// Diagonal of a square [n, n] tensor.
template <typename T> BasicTensor<T> diagonal(const BasicTensor<T>& x);

/// Depthwise causal convolution along time: x[B, C, T], weight[C, k],
/// bias[C]; out[b, c, t] = bias[c] + sum_j weight[c, j] * x[b, c, t - j]
/// with zero padding before t = 0.
template <typename T>
BasicTensor<T> causal_depthwise_conv1d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                       const BasicTensor<T>& bias);

} // namespace neuroalign
