// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/align.hpp"

#include <cmath>
#include <sstream>

#include "neuroalign/error.hpp"

namespace neuroalign {

void SthDims::validate() const {
    if (input_dim == 0 || model_dim == 0 || blocks == 0) {
        throw ContractError("STH dimensions must be positive");
    }
}

template <typename T>
ParamList<T> SthParams<T>::parameters(const std::string& prefix) const {
    ParamList<T> out;
    for (std::size_t b = 0; b < trunk.size(); ++b) {
        trunk[b].linear.collect(prefix + ".trunk" + std::to_string(b) + ".linear", out);
        trunk[b].norm.collect(prefix + ".trunk" + std::to_string(b) + ".norm", out);
    }
    for (std::size_t m = 0; m < 4; ++m) {
        const std::string name = prefix + ".head_" + std::string(modality_name(kExpertModalities[m]));
        heads[m].hidden.collect(name + ".hidden", out);
        heads[m].output.collect(name + ".output", out);
    }
    return out;
}

SthParams<float> init_sth(const SthDims& dims, Rng& rng) {
    dims.validate();
    SthParams<float> p;
    p.dims = dims;
    for (std::size_t b = 0; b < dims.blocks; ++b) {
        const auto in = b == 0 ? 4 * dims.input_dim : dims.model_dim;
        p.trunk.push_back({make_linear(in, dims.model_dim, rng), make_norm(dims.model_dim)});
    }
    for (auto& head : p.heads) {
        head = {make_linear(dims.model_dim, dims.model_dim, rng), make_linear(dims.model_dim, dims.model_dim, rng)};
    }
    return p;
}

template <typename T>
SthOutput<T> sth_forward(const std::array<BasicTensor<T>, 4>& e, const SthParams<T>& params) {
    const auto b = e[0].dim(0);
    for (const auto& x : e) {
        if (x.rank() != 2 || x.dim(0) != b || x.dim(1) != params.dims.input_dim) {
            throw ContractError("STH input " + shape_string(x.shape()) + " must be [" + std::to_string(b) + ", " +
                                std::to_string(params.dims.input_dim) + "]");
        }
    }
    auto h = concat_last(std::vector<BasicTensor<T>>(e.begin(), e.end()));
    for (const auto& block : params.trunk) {
        h = silu(block.norm(block.linear(h)));
    }
    SthOutput<T> out;
    out.shared = h;
    for (std::size_t m = 0; m < 4; ++m) {
        const auto& head = params.heads[m];
        out.aligned[m] = l2_normalize_rows(head.output(silu(head.hidden(h))));
    }
    return out;
}

template <typename T>
std::array<BasicTensor<T>, 4> drop_modality(const std::array<BasicTensor<T>, 4>& e, std::size_t slot) {
    if (slot >= 4) {
        throw ContractError("modality slot out of range");
    }
    auto out = e;
    out[slot] = BasicTensor<T>::zeros(e[slot].shape());
    return out;
}

SthStepResult sth_train_step(const std::array<Tensor, 4>& e, const Tensor& targets, const SthParams<float>& params,
                             AdamW& optimizer, Rng& rng, const LossConfig& cfg, bool dropout) {
    SthStepResult result;
    result.dropped = dropout ? rng.index(4) : 4;
    const auto inputs = dropout ? drop_modality(e, result.dropped) : e;
    const auto out = sth_forward(inputs, params);
    const auto e_hat = stack(std::vector<Tensor>(out.aligned.begin(), out.aligned.end()), 1);
    const auto loss = sth_loss(e_hat, targets, cfg);
    result.loss = loss.item();
    optimizer.zero_grad();
    backward(loss);
    if (!std::isfinite(result.loss) || !optimizer.gradients_finite()) {
        std::ostringstream os;
        os << "STH step produced a non-finite loss or gradient (loss " << result.loss << ", dropped slot "
           << result.dropped << ", step " << optimizer.step_count() << ")";
        optimizer.zero_grad();
        throw NumericalError(os.str());
    }
    optimizer.step();
    return result;
}

Tensor sth_infer(const std::array<Tensor, 4>& e, const SthParams<float>& params, ModalityId query,
                 SthInference mode) {
    const auto slot = modality_index(query);
    std::array<Tensor, 4> inputs;
    for (std::size_t m = 0; m < 4; ++m) {
        const bool keep = mode == SthInference::all || m == slot;
        inputs[m] = keep ? e[m] : Tensor::zeros(e[m].shape());
    }
    NoGradGuard no_grad;
    return sth_forward(inputs, params).aligned[slot];
}

#define NEUROALIGN_INSTANTIATE(T)                                                                     \
    template struct SthParams<T>;                                                                    \
    template SthOutput<T> sth_forward(const std::array<BasicTensor<T>, 4>&, const SthParams<T>&);    \
    template std::array<BasicTensor<T>, 4> drop_modality(const std::array<BasicTensor<T>, 4>&, std::size_t);

NEUROALIGN_INSTANTIATE(float)
NEUROALIGN_INSTANTIATE(double)

} // namespace neuroalign
