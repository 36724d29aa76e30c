// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "neuroalign/nn.hpp"

namespace neuroalign {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay over a fixed set of float parameters.
///
/// Each instance owns its moment buffers; two optimizers never touch each
/// other's parameters.
class AdamW {
public:
    AdamW(ParamList<float> params, AdamWConfig config);

    /// Applies one update from the accumulated gradients. Parameters without
    /// a gradient only receive weight decay.
    void step();
    void zero_grad();
    /// True when every accumulated gradient is finite.
    bool gradients_finite() const;

    std::uint64_t step_count() const { return steps_; }
    const ParamList<float>& parameters() const { return params_; }
    const AdamWConfig& config() const { return config_; }

    /// Moment buffers as named tensors ("<param>.m", "<param>.v").
    ParamList<float> state() const;
    void load_state(const ParamList<float>& state, std::uint64_t steps);

private:
    ParamList<float> params_;
    AdamWConfig config_;
    std::vector<std::vector<float>> first_;
    std::vector<std::vector<float>> second_;
    std::uint64_t steps_ = 0;
};

} // namespace neuroalign
