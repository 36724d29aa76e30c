// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "neuroalign/error.hpp"
#include "neuroalign/grad_check.hpp"
#include "neuroalign/ops.hpp"
#include "neuroalign/random.hpp"
#include "neuroalign/tensor.hpp"

using namespace neuroalign;
using Catch::Approx;

namespace {

Tensor64 random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        x = scale * rng.normal();
    }
    return Tensor64(std::move(shape), std::move(v));
}

Tensor random_float(Rng& rng, Shape shape) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) {
        x = static_cast<float>(rng.normal());
    }
    return Tensor(std::move(shape), std::move(v));
}

// Random weighting turns any tensor into a scalar with non-trivial gradients.
Tensor64 weighted_sum(const Tensor64& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum_all(mul(y, random_tensor(rng, y.shape())));
}

} // namespace

TEST_CASE("construction validates shape and finiteness") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
    CHECK_THROWS_AS(Tensor({1}, {NAN}), NumericalError);
    CHECK_THROWS_AS(Tensor({1}, {INFINITY}), NumericalError);
    CHECK_THROWS_AS(Tensor({0}, {}), ShapeError);
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t({1, 2}) == 6.f);
    CHECK(t.numel() == 6);
}

TEST_CASE("matmul examples") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    auto id = matmul(a, eye);
    CHECK(std::vector<float>(id.values().begin(), id.values().end()) == std::vector<float>{1, 2, 3, 4});

    auto col = matmul(a, Tensor({2, 1}, {5, 6}));
    CHECK(col.shape() == Shape{2, 1});
    CHECK(col({0, 0}) == 17.f);
    CHECK(col({1, 0}) == 39.f);

    auto z = matmul(Tensor::zeros({2, 3}), Tensor::full({3, 2}, 1.f));
    for (float v : z.values()) {
        CHECK(v == 0.f);
    }

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul with identity is associative on random 8x8") {
    Rng rng(11);
    std::vector<float> eye(64, 0.f);
    for (int i = 0; i < 8; ++i) {
        eye[i * 9] = 1.f;
    }
    Tensor identity({8, 8}, eye);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = random_float(rng, {8, 8});
        auto b = random_float(rng, {8, 8});
        auto left = matmul(matmul(a, identity), b);
        auto right = matmul(a, matmul(identity, b));
        for (std::size_t i = 0; i < 64; ++i) {
            CHECK(std::abs(left.values()[i] - right.values()[i]) <= 1e-5f);
        }
    }
}

TEST_CASE("softmax examples") {
    auto s = softmax_rows(Tensor({1, 2}, {0, 0}));
    CHECK(s.values()[0] == Approx(0.5));
    CHECK(s.values()[1] == Approx(0.5));

    auto t = softmax_rows(Tensor64({1, 2}, {std::log(2.0), 0.0}));
    CHECK(t.values()[0] == Approx(2.0 / 3.0).margin(1e-12));
    CHECK(t.values()[1] == Approx(1.0 / 3.0).margin(1e-12));

    auto big = softmax_rows(Tensor({1, 2}, {1000, 0}));
    CHECK(std::abs(big.values()[0] - 1.f) <= 1e-6f);
    CHECK(std::abs(big.values()[1]) <= 1e-6f);
}

TEST_CASE("softmax rows sum to one for inputs up to 1e4") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.index(16);
        std::vector<float> v(3 * n);
        const double range = trial % 2 ? 1e4 : 10.0;
        for (auto& x : v) {
            x = static_cast<float>(rng.uniform(-range, range));
        }
        auto y = softmax_rows(Tensor({3, n}, v));
        for (std::size_t r = 0; r < 3; ++r) {
            double total = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const float p = y.values()[r * n + j];
                CHECK(p >= 0.f);
                total += p;
            }
            CHECK(std::abs(total - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("layer norm examples") {
    auto ones = Tensor::full({2}, 1.f);
    auto zeros = Tensor::zeros({2});
    auto constant = layer_norm(Tensor({1, 2}, {3, 3}), ones, zeros);
    CHECK(constant.values()[0] == 0.f);
    CHECK(constant.values()[1] == 0.f);

    auto two = layer_norm(Tensor64({1, 2}, {1, 3}), Tensor64::full({2}, 1.0), Tensor64::zeros({2}), 1e-12);
    CHECK(two.values()[0] == Approx(-1.0).margin(1e-5));
    CHECK(two.values()[1] == Approx(1.0).margin(1e-5));

    Rng rng(3);
    auto x = random_tensor(rng, {4, 6}, 3.0);
    auto y = layer_norm(x, Tensor64::full({6}, 1.0), Tensor64::zeros({6}));
    for (std::size_t r = 0; r < 4; ++r) {
        double mean = 0;
        double var = 0;
        for (std::size_t j = 0; j < 6; ++j) {
            mean += y.values()[r * 6 + j];
        }
        mean /= 6;
        for (std::size_t j = 0; j < 6; ++j) {
            var += std::pow(y.values()[r * 6 + j] - mean, 2);
        }
        CHECK(std::abs(mean) <= 1e-5);
        CHECK(var / 6 == Approx(1.0).margin(1e-5));
    }
    CHECK_THROWS_AS(layer_norm(Tensor({1, 1}, {1}), Tensor({1}, {1}), Tensor({1}, {0})), ShapeError);
}

TEST_CASE("activation examples") {
    auto z = Tensor({1}, {0});
    CHECK(silu(z).item() == 0.f);
    CHECK(gelu(z).item() == 0.f);
    CHECK(silu(Tensor64({1}, {10.0})).item() == Approx(9.99955).margin(1e-5));
    CHECK(silu_value(10.0) == Approx(10.0 / (1.0 + std::exp(-10.0))));
    // Tanh-approximation constants.
    CHECK(gelu(Tensor64({1}, {1.0})).item() == Approx(gelu_value(1.0)));
    CHECK(gelu_value(1.0) == Approx(0.8411919906).margin(1e-9));
}

TEST_CASE("grad_check examples") {
    auto square_sum = [](const Tensor64& x) { return sum_all(mul(x, x)); };
    auto r = grad_check_detailed(square_sum, Tensor64({1}, {3.0}));
    CHECK(r.analytic[0] == Approx(6.0));
    CHECK(r.numeric[0] == Approx(6.0).margin(1e-6));
    CHECK(r.max_rel_error < 1e-6);

    Rng rng(19);
    auto logits = random_tensor(rng, {1, 4});
    const Tensor64 onehot({1, 4}, {0.0, 0.0, 1.0, 0.0});
    auto nll = [&](const Tensor64& x) { return scale(sum_all(mul(log_softmax_rows(x), onehot)), -1.0); };
    CHECK(grad_check(nll, logits) < 1e-4);

    auto constant = [](const Tensor64&) { return Tensor64::scalar(4.0); };
    auto c = grad_check_detailed(constant, random_tensor(rng, {3}));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(c.analytic[i] == 0.0);
        CHECK(c.numeric[i] == 0.0);
    }

    CHECK_THROWS_AS(grad_check([](const Tensor64& x) { return x; }, Tensor64({2}, {1.0, 2.0})), ContractError);
    CHECK_THROWS_AS(grad_check(square_sum, Tensor64({1}, {1.0}), 1.0), ContractError);
}

TEST_CASE("every op passes a finite-difference check in float64") {
    Rng rng(2024);
    const double tol = 1e-4;

    SECTION("elementwise") {
        auto other = random_tensor(rng, {3, 4});
        CHECK(grad_check([&](const Tensor64& x) { return weighted_sum(add(x, other), 1); }, random_tensor(rng, {3, 4})) < tol);
        CHECK(grad_check([&](const Tensor64& x) { return weighted_sum(sub(other, x), 2); }, random_tensor(rng, {3, 4})) < tol);
        CHECK(grad_check([&](const Tensor64& x) { return weighted_sum(mul(x, x), 3); }, random_tensor(rng, {3, 4})) < tol);
        CHECK(grad_check([&](const Tensor64& x) { return weighted_sum(scale(add_scalar(x, 0.5), -2.0), 4); },
                         random_tensor(rng, {3, 4})) < tol);
    }
    SECTION("linear algebra") {
        auto w = random_tensor(rng, {4, 5});
        auto x3 = random_tensor(rng, {2, 3, 4});
        CHECK(grad_check([&](const Tensor64& x) { return weighted_sum(matmul(x, w), 5); }, x3) < tol);
        CHECK(grad_check([&](const Tensor64& ww) { return weighted_sum(matmul(x3, ww), 6); }, w) < tol);
        auto b = random_tensor(rng, {2, 4, 3});
        CHECK(grad_check([&](const Tensor64& x) { return weighted_sum(bmm(x, b), 7); }, x3) < tol);
        CHECK(grad_check([&](const Tensor64& bb) { return weighted_sum(bmm(x3, bb), 8); }, b) < tol);
        CHECK(grad_check([&](const Tensor64& x) { return weighted_sum(add_bias(x, Tensor64::full({4}, 0.3)), 9); }, x3) < tol);
        CHECK(grad_check([&](const Tensor64& bias) { return weighted_sum(add_bias(x3, bias), 10); },
                         random_tensor(rng, {4})) < tol);
    }
    SECTION("shape manipulation") {
        auto x = random_tensor(rng, {2, 3, 4});
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(permute(t, {2, 0, 1}), 11); }, x) < tol);
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(transpose(t), 12); }, x) < tol);
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(reshape(t, {6, 4}), 13); }, x) < tol);
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(mean_axis(t, 1), 14); }, x) < tol);
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(zero_slot(t, 1, 2), 15); }, x) < tol);
        auto y = random_tensor(rng, {2, 3, 2});
        CHECK(grad_check([&](const Tensor64& t) { return weighted_sum(concat_last<double>({t, y, t}), 16); }, x) < tol);
        auto z = random_tensor(rng, {2, 3, 4});
        CHECK(grad_check([&](const Tensor64& t) { return weighted_sum(stack<double>({t, z}, 1), 17); }, x) < tol);
        auto sq = random_tensor(rng, {4, 4});
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(diagonal(t), 18); }, sq) < tol);
    }
    SECTION("nonlinearities and normalisation") {
        auto x = random_tensor(rng, {3, 5}, 2.0);
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(softmax_rows(t), 19); }, x) < tol);
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(log_softmax_rows(t), 20); }, x) < tol);
        std::vector<std::uint8_t> keep(15, 1);
        keep[1] = keep[7] = keep[13] = 0;
        CHECK(grad_check([&](const Tensor64& t) { return weighted_sum(log_softmax_rows<double>(t, keep), 21); }, x) < tol);
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(gelu(t), 22); }, x) < tol);
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(silu(t), 23); }, x) < tol);
        auto gain = random_tensor(rng, {5});
        auto bias = random_tensor(rng, {5});
        CHECK(grad_check([&](const Tensor64& t) { return weighted_sum(layer_norm(t, gain, bias), 24); }, x) < tol);
        CHECK(grad_check([&](const Tensor64& g) { return weighted_sum(layer_norm(x, g, bias), 25); }, gain) < tol);
        CHECK(grad_check([&](const Tensor64& b) { return weighted_sum(layer_norm(x, gain, b), 26); }, bias) < tol);
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(l2_normalize_rows(t), 27); }, x) < tol);
        auto other = random_tensor(rng, {3, 5});
        CHECK(grad_check([&](const Tensor64& t) { return weighted_sum(row_dot(t, other), 28); }, x) < tol);
        CHECK(grad_check([](const Tensor64& t) { return weighted_sum(row_sq_norm(t), 29); }, x) < tol);
    }
    SECTION("causal convolution") {
        auto x = random_tensor(rng, {2, 3, 9});
        auto w = random_tensor(rng, {3, 4});
        auto b = random_tensor(rng, {3});
        CHECK(grad_check([&](const Tensor64& t) { return weighted_sum(causal_depthwise_conv1d(t, w, b), 30); }, x) < tol);
        CHECK(grad_check([&](const Tensor64& t) { return weighted_sum(causal_depthwise_conv1d(x, t, b), 31); }, w) < tol);
        CHECK(grad_check([&](const Tensor64& t) { return weighted_sum(causal_depthwise_conv1d(x, w, t), 32); }, b) < tol);
    }
}

TEST_CASE("causal convolution matches a direct evaluation") {
    Tensor64 x({1, 1, 5}, {1, 2, 3, 4, 5});
    Tensor64 w({1, 3}, {1.0, 0.5, 0.25});
    auto y = causal_depthwise_conv1d(x, w, Tensor64({1}, {0.0}));
    const std::vector<double> expected{1.0, 2.5, 4.25, 6.0, 7.75};
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(y.values()[t] == Approx(expected[t]));
    }
}

TEST_CASE("shared subexpressions accumulate gradients") {
    Tensor64 x({1}, {2.0}, true);
    auto y = mul(x, x);       // x^2
    auto z = add(y, mul(y, x)); // x^2 + x^3
    backward(sum_all(z));
    CHECK(x.grad()[0] == Approx(2 * 2.0 + 3 * 4.0));
}

TEST_CASE("backward twice without reset is an error") {
    Tensor64 x({2}, {1.0, 2.0}, true);
    auto loss = sum_all(mul(x, x));
    GradTape<double> tape(loss);
    tape.backward();
    CHECK(x.grad()[1] == Approx(4.0));
    CHECK_THROWS_AS(tape.backward(), AutogradError);
    // A fresh tape over the same consumed graph is refused as well.
    CHECK_THROWS_AS(backward(loss), AutogradError);
    CHECK(x.grad()[1] == Approx(4.0));

    tape.reset();
    x.zero_grad();
    tape.backward();
    CHECK(x.grad()[1] == Approx(4.0));
}

TEST_CASE("gradient flows only into tensors that require it") {
    Tensor64 a({2, 2}, {1, 2, 3, 4}, true);
    Tensor64 b({2, 2}, {1, 0, 0, 1});
    auto loss = sum_all(matmul(a, b));
    backward(loss);
    CHECK(a.has_grad());
    CHECK_FALSE(b.has_grad());
    auto inert = sum_all(matmul(b, b));
    CHECK_FALSE(inert.requires_grad());
    CHECK_THROWS_AS(backward(inert), AutogradError);
}

TEST_CASE("no-grad scope records nothing and restores on exit") {
    Tensor64 a({2, 2}, {1, 2, 3, 4}, true);
    CHECK(grad_enabled());
    {
        NoGradGuard outer;
        CHECK_FALSE(grad_enabled());
        {
            NoGradGuard inner;
            CHECK_FALSE(grad_enabled());
        }
        CHECK_FALSE(grad_enabled());
        const auto y = sum_all(matmul(a, a));
        CHECK_FALSE(y.requires_grad());
        CHECK(y.item() == Approx(54.0));
    }
    CHECK(grad_enabled());
    CHECK(sum_all(matmul(a, a)).requires_grad());
}
