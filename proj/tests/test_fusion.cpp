// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>

#include "neuroalign/error.hpp"
#include "neuroalign/fusion.hpp"
#include "neuroalign/grad_check.hpp"
#include "test_support.hpp"

using namespace neuroalign;
using namespace neuroalign::testing;

namespace {

FusionDims small_fusion(std::size_t d = 8, std::size_t heads = 2) {
    FusionDims f;
    f.input_dim = d;
    f.model_dim = d;
    f.heads = heads;
    return f;
}

FusionParams<float> perturbed_fusion(const FusionDims& dims, std::uint64_t seed) {
    Rng rng(seed);
    auto p = init_fusion(dims, rng);
    for (auto& np : p.parameters("f")) {
        Tensor t = np.tensor;
        for (auto& v : t.mutable_values()) {
            v += static_cast<float>(0.1 * rng.normal());
        }
    }
    return p;
}

std::array<Tensor, 4> random_inputs(Rng& rng, std::size_t b, std::size_t d) {
    return {random_tensor(rng, {b, d}), random_tensor(rng, {b, d}), random_tensor(rng, {b, d}),
            random_tensor(rng, {b, d})};
}

bool same_values(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        worst = std::max(worst, std::abs(double(a.values()[i]) - b.values()[i]));
    }
    return worst;
}

} // namespace

TEST_CASE("fusion shapes", "[fusion]") {
    Rng rng(1);
    const auto params = init_fusion(FusionDims{}, rng);
    const auto z = random_inputs(rng, 3, 1024);
    const auto tokens = tokenize_project(z, params);
    CHECK(tokens.shape() == Shape{3, 4, 1024});
    CHECK(fusion_forward(reshape(Tensor::zeros({2, 4, 1024}), {2, 4, 1024}), params).shape() == Shape{2, 1024});
    CHECK_THROWS_AS(fusion_forward(Tensor::zeros({2, 3, 1024}), params), ContractError);
    CHECK_THROWS_AS((FusionDims{8, 10, 3}.validate()), ContractError);
}

TEST_CASE("zero inputs with zero biases and codes tokenize to zeros", "[fusion]") {
    Rng rng(2);
    auto params = init_fusion(small_fusion(), rng);
    params.position = Tensor::zeros({4, 8}, true);
    const std::array<Tensor, 4> z{Tensor::zeros({2, 8}), Tensor::zeros({2, 8}), Tensor::zeros({2, 8}),
                                  Tensor::zeros({2, 8})};
    const auto tokens = tokenize_project(z, params);
    for (float v : tokens.values()) {
        CHECK(v == 0.f);
    }
}

TEST_CASE("token order matters", "[fusion]") {
    const auto params = perturbed_fusion(small_fusion(), 3);
    Rng rng(4);
    const auto z = random_inputs(rng, 2, 8);
    const auto swapped = std::array<Tensor, 4>{z[1], z[0], z[2], z[3]};
    const auto a = fusion_forward(tokenize_project(z, params), params);
    const auto b = fusion_forward(tokenize_project(swapped, params), params);
    CHECK(max_abs_diff(a, b) > 1e-3);

    // A pure permutation of finished tokens is absorbed by mean pooling; the
    // order dependence enters through the per-slot projections and codes.
    const auto tokens = tokenize_project(z, params);
    std::vector<float> pv(tokens.numel());
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t t = 0; t < 4; ++t) {
            const std::size_t src = (t + 1) % 4;
            for (std::size_t c = 0; c < 8; ++c) {
                pv[(i * 4 + t) * 8 + c] = tokens({i, src, c});
            }
        }
    }
    const auto rolled = fusion_forward(Tensor({2, 4, 8}, pv), params);
    const auto plain = fusion_forward(tokens, params);
    CHECK(max_abs_diff(rolled, plain) < 1e-5);
}

TEST_CASE("fusion forward is deterministic", "[fusion]") {
    const auto params = perturbed_fusion(small_fusion(), 5);
    Rng rng(6);
    const auto tokens = tokenize_project(random_inputs(rng, 3, 8), params);
    CHECK(same_values(fusion_forward(tokens, params), fusion_forward(tokens, params)));
}

TEST_CASE("fusion gradients match finite differences", "[fusion][gradcheck]") {
    for (std::size_t heads : {2u, 8u}) {
        const auto params = perturbed_fusion(small_fusion(8, heads), 7).cast<double>();
        Rng rng(8);
        const auto tokens = random_tensor64(rng, {2, 4, 8});
        auto f = [&](const Tensor64& x) { return sum_all(row_sq_norm(fusion_forward(x, params))); };
        INFO("heads " << heads);
        CHECK(grad_check(f, tokens) < 1e-4);

        const auto z0 = random_tensor64(rng, {2, 8});
        const auto z1 = random_tensor64(rng, {2, 8});
        const auto z2 = random_tensor64(rng, {2, 8});
        auto g = [&](const Tensor64& x) {
            return sum_all(row_sq_norm(fusion_forward(tokenize_project({z0, x, z1, z2}, params), params)));
        };
        CHECK(grad_check(g, random_tensor64(rng, {2, 8})) < 1e-4);
    }
}

TEST_CASE("every fusion parameter receives gradient", "[fusion]") {
    Rng rng(9);
    const auto params = init_fusion(small_fusion(), rng);
    const auto z = random_inputs(rng, 4, 8);
    auto fl = sum_all(mul(fusion_forward(tokenize_project(z, params), params), random_tensor(rng, {4, 8})));
    backward(fl);
    for (const auto& np : params.parameters("f")) {
        bool nonzero = false;
        for (float g : np.tensor.grad()) {
            nonzero = nonzero || g != 0.f;
        }
        INFO(np.name);
        CHECK(nonzero);
    }
}

TEST_CASE("modality masking", "[fusion]") {
    const auto params = perturbed_fusion(small_fusion(), 10);
    Rng rng(11);
    const auto tokens = tokenize_project(random_inputs(rng, 2, 8), params);
    Rng mask_rng(12);
    const auto masked = modality_mask(tokens, mask_rng);
    const auto direct = zero_slot(tokens, 1, masked.index);
    CHECK(same_values(fusion_forward(masked.tokens, params), fusion_forward(direct, params)));
    CHECK(same_values(zero_slot(masked.tokens, 1, masked.index), masked.tokens));
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t c = 0; c < 8; ++c) {
            CHECK(masked.tokens({i, masked.index, c}) == 0.f);
        }
    }

    std::array<int, 4> counts{};
    Rng draws(13);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        ++counts[modality_mask(tokens, draws).index];
    }
    double chi2 = 0;
    for (int c : counts) {
        CHECK(std::abs(c / double(n) - 0.25) <= 0.0125 + 0.02 * 0.25);
        chi2 += (c - n / 4.0) * (c - n / 4.0) / (n / 4.0);
    }
    CHECK(chi2 < 16.27); // chi-square, 3 dof, p = 0.001
}

TEST_CASE("pooling probe with inert attention and feed-forward", "[fusion]") {
    Rng rng(14);
    auto params = perturbed_fusion(small_fusion(), 15);
    for (auto& layer : params.layers) {
        for (auto* lin : {&layer.attn.output, &layer.ff2}) {
            lin->weight = Tensor::zeros(lin->weight.shape(), true);
            lin->bias = Tensor::zeros(lin->bias.shape(), true);
        }
        layer.norm1 = make_norm(8);
        layer.norm2 = make_norm(8);
    }
    // Tokens already standardised per row pass through the LayerNorms.
    std::vector<float> v(3 * 4 * 8);
    for (std::size_t r = 0; r < 12; ++r) {
        double mean = 0, sq = 0;
        std::vector<double> row(8);
        for (auto& x : row) {
            x = rng.normal();
            mean += x;
        }
        mean /= 8;
        for (auto& x : row) {
            sq += (x - mean) * (x - mean);
        }
        const double sd = std::sqrt(sq / 8 + 1e-5); // match the LayerNorm epsilon
        for (std::size_t c = 0; c < 8; ++c) {
            v[r * 8 + c] = static_cast<float>((row[c] - mean) / sd);
        }
    }
    const Tensor tokens({3, 4, 8}, v);
    const auto pooled = mean_axis(tokens, 1);
    const auto expected = add(pooled, params.out2(gelu(params.out1(pooled))));
    CHECK(max_abs_diff(fusion_forward(tokens, params), expected) < 1e-4);
}
