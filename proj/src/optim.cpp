// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/optim.hpp"

#include <cmath>
#include <unordered_map>

#include "neuroalign/error.hpp"

namespace neuroalign {

AdamW::AdamW(ParamList<float> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    if (!(config_.lr > 0) || !(config_.eps > 0) || config_.beta1 < 0 || config_.beta1 >= 1 ||
        config_.beta2 < 0 || config_.beta2 >= 1 || config_.weight_decay < 0) {
        throw ContractError("AdamW: invalid hyper-parameters");
    }
    for (const auto& p : params_) {
        first_.emplace_back(p.tensor.numel(), 0.f);
        second_.emplace_back(p.tensor.numel(), 0.f);
    }
}

void AdamW::step() {
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(config_.beta1, t);
    const double correction2 = 1.0 - std::pow(config_.beta2, t);
    const double decay = 1.0 - config_.lr * config_.weight_decay;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor p = params_[k].tensor;
        auto values = p.mutable_values();
        const bool has_grad = p.has_grad();
        const std::vector<float> grad = has_grad ? p.grad() : std::vector<float>();
        auto& m = first_[k];
        auto& v = second_[k];
        for (std::size_t i = 0; i < values.size(); ++i) {
            double theta = static_cast<double>(values[i]) * decay;
            const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
            const double mi = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            const double vi = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            theta -= config_.lr * (mi / correction1) / (std::sqrt(vi / correction2) + config_.eps);
            values[i] = static_cast<float>(theta);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) {
        p.tensor.zero_grad();
    }
}

bool AdamW::gradients_finite() const {
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) {
            continue;
        }
        for (float g : p.tensor.grad()) {
            if (!std::isfinite(g)) {
                return false;
            }
        }
    }
    return true;
}

ParamList<float> AdamW::state() const {
    ParamList<float> out;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& shape = params_[k].tensor.shape();
        out.push_back({params_[k].name + ".m", Tensor(shape, first_[k])});
        out.push_back({params_[k].name + ".v", Tensor(shape, second_[k])});
    }
    return out;
}

void AdamW::load_state(const ParamList<float>& state, std::uint64_t steps) {
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& s : state) {
        by_name.emplace(s.name, &s.tensor);
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
        for (auto [suffix, buffer] : {std::pair{".m", &first_[k]}, std::pair{".v", &second_[k]}}) {
            auto it = by_name.find(params_[k].name + suffix);
            if (it == by_name.end() || it->second->numel() != buffer->size()) {
                throw FormatError("optimizer state for '" + params_[k].name + "' is missing or mis-shaped");
            }
            buffer->assign(it->second->values().begin(), it->second->values().end());
        }
    }
    steps_ = steps;
}

} // namespace neuroalign
