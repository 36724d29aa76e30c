// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "neuroalign/error.hpp"
#include "neuroalign/metrics.hpp"
#include "test_support.hpp"

using namespace neuroalign;
using namespace neuroalign::testing;

namespace {

ImageBuffer random_image(Rng& rng, std::size_t w, std::size_t h) {
    std::vector<float> px(w * h);
    for (auto& p : px) {
        p = static_cast<float>(rng.uniform());
    }
    return ImageBuffer(w, h, 1, std::move(px));
}

ImageBuffer smooth_image(std::size_t size) {
    ImageBuffer img = ImageBuffer::filled(size, size, 1, 0.f);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            img.at(x, y) = static_cast<float>(0.5 + 0.3 * std::sin(x * 0.3) * std::cos(y * 0.2));
        }
    }
    return img;
}

// Random orthogonal d x d matrix by Gram-Schmidt.
std::vector<double> random_rotation(Rng& rng, std::size_t d) {
    std::vector<double> q(d * d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            q[i * d + j] = rng.normal();
        }
        for (std::size_t k = 0; k < i; ++k) {
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) {
                dot += q[i * d + j] * q[k * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
                q[i * d + j] -= dot * q[k * d + j];
            }
        }
        double n = 0;
        for (std::size_t j = 0; j < d; ++j) {
            n += q[i * d + j] * q[i * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) {
            q[i * d + j] /= std::sqrt(n);
        }
    }
    return q;
}

Tensor rotate(const Tensor& x, const std::vector<double>& q) {
    const auto n = x.dim(0), d = x.dim(1);
    std::vector<float> out(n * d);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0;
            for (std::size_t j = 0; j < d; ++j) {
                acc += q[i * d + j] * x.values()[r * d + j];
            }
            out[r * d + i] = static_cast<float>(acc);
        }
    }
    return Tensor({n, d}, out);
}

} // namespace

TEST_CASE("retrieval of a gallery against itself is perfect", "[metrics]") {
    Rng rng(1);
    const auto g = random_unit_rows<float>(rng, 12, 8);
    std::vector<std::size_t> truth(12);
    std::iota(truth.begin(), truth.end(), 0);
    const auto r = topk_retrieval(g, g, truth);
    CHECK(r.top1 == 1.0);
    CHECK(r.top5 == 1.0);
    r.validate();
}

TEST_CASE("retrieval with hand-placed ranks", "[metrics]") {
    // Gallery: 10 one-hot rows in 10 dims. Each query puts decreasing weight
    // on chosen entries so the truth lands at rank 1, 2 and 7.
    std::vector<float> gal(100, 0.f);
    for (std::size_t i = 0; i < 10; ++i) {
        gal[i * 10 + i] = 1.f;
    }
    const Tensor gallery({10, 10}, gal);
    auto query = [](std::vector<std::pair<std::size_t, double>> weights) {
        std::vector<double> q(10, 0.0);
        for (auto [i, w] : weights) {
            q[i] = w;
        }
        double n = 0;
        for (double v : q) {
            n += v * v;
        }
        std::vector<float> out;
        for (double v : q) {
            out.push_back(static_cast<float>(v / std::sqrt(n)));
        }
        return out;
    };
    std::vector<float> qs;
    for (auto row : {query({{0, 1.0}}), query({{5, 0.9}, {1, 0.8}}),
                     query({{0, 0.9}, {1, 0.85}, {3, 0.8}, {4, 0.75}, {5, 0.7}, {6, 0.65}, {2, 0.6}})}) {
        qs.insert(qs.end(), row.begin(), row.end());
    }
    const auto r = topk_retrieval(Tensor({3, 10}, qs), gallery, {0, 1, 2});
    CHECK(r.ranks == std::vector<std::size_t>{1, 2, 7});
    CHECK(r.top1 == Catch::Approx(1.0 / 3));
    CHECK(r.top5 == Catch::Approx(2.0 / 3));
    r.validate();
}

TEST_CASE("retrieval ties go to the lower gallery index", "[metrics]") {
    const Tensor gallery({5, 2}, {1, 0, 1, 0, 0, 1, 0, 1, 0, 1});
    const Tensor q({2, 2}, {1, 0, 1, 0});
    const auto r = topk_retrieval(q, gallery, {0, 1});
    CHECK(r.ranks == std::vector<std::size_t>{1, 2});
}

TEST_CASE("retrieval preconditions", "[metrics]") {
    Rng rng(2);
    const auto g = random_unit_rows<float>(rng, 4, 8);
    CHECK_THROWS_AS(topk_retrieval(g, g, {0, 1, 2, 3}), ContractError);
    const auto g5 = random_unit_rows<float>(rng, 5, 8);
    CHECK_THROWS_AS(topk_retrieval(Tensor({1, 8}, std::vector<float>(8, 1.f)), g5, {0}), ContractError);
}

TEST_CASE("retrieval is invariant to a common rotation", "[metrics]") {
    Rng rng(3);
    const auto q = random_unit_rows<float>(rng, 20, 6);
    const auto g = random_unit_rows<float>(rng, 15, 6);
    std::vector<std::size_t> truth;
    for (std::size_t i = 0; i < 20; ++i) {
        truth.push_back(rng.index(15));
    }
    const auto rot = random_rotation(rng, 6);
    const auto a = topk_retrieval(q, g, truth);
    const auto b = topk_retrieval(rotate(q, rot), rotate(g, rot), truth);
    CHECK(a.top1 == b.top1);
    CHECK(a.top5 == b.top5);
}

TEST_CASE("random 200-way retrieval sits at chance", "[metrics][statistical]") {
    Rng rng(4);
    const std::size_t g = 200, d = 200;
    std::vector<float> eye(g * d, 0.f);
    for (std::size_t i = 0; i < g; ++i) {
        eye[i * d + i] = 1.f;
    }
    const Tensor gallery({g, d}, eye);
    const std::size_t trials = 10000;
    const auto queries = random_unit_rows<float>(rng, trials, d);
    std::vector<std::size_t> truth(trials);
    for (auto& t : truth) {
        t = rng.index(g);
    }
    const auto r = topk_retrieval(queries, gallery, truth);
    const double p = 1.0 / 200, sigma = std::sqrt(p * (1 - p) / trials);
    CHECK(std::abs(r.top1 - p) <= 3 * sigma);
}

TEST_CASE("RSA identities", "[metrics]") {
    Rng rng(5);
    std::vector<std::size_t> order{2, 0, 1, 3};
    const Tensor same({4, 3}, std::vector<float>(12, 0.5f));
    const auto ones = rsa_heatmap(same, order);
    for (double v : ones.values) {
        CHECK(v == Catch::Approx(1.0).margin(1e-6));
    }
    std::vector<float> eye(16, 0.f);
    for (std::size_t i = 0; i < 4; ++i) {
        eye[i * 4 + i] = 1.f;
    }
    const auto id = rsa_heatmap(Tensor({4, 4}, eye), order);
    for (std::size_t a = 0; a < 4; ++a) {
        for (std::size_t b = 0; b < 4; ++b) {
            CHECK(std::abs(id(a, b) - (a == b ? 1.0 : 0.0)) <= 1e-6);
        }
    }
    const auto random = rsa_heatmap(random_unit_rows<float>(rng, 6, 5), {0, 1, 2, 3, 4, 5});
    for (std::size_t a = 0; a < 6; ++a) {
        CHECK(random(a, a) == 1.0);
        for (std::size_t b = 0; b < 6; ++b) {
            CHECK(random(a, b) == random(b, a));
            CHECK((random(a, b) >= -1 && random(a, b) <= 1));
        }
    }
    CHECK_THROWS_AS(rsa_heatmap(Tensor({2, 2}, {1, 0, 0, 0}), {0, 1}), ContractError);
    CHECK_THROWS_AS(rsa_heatmap(Tensor({2, 2}, {1, 0, 0, 1}), {0, 0}), ContractError);
}

TEST_CASE("RSA shows cluster blocks", "[metrics]") {
    Rng rng(6);
    const auto centres = random_unit_rows<float>(rng, 2, 16);
    std::vector<float> rows;
    std::vector<std::uint32_t> labels;
    for (std::size_t i = 0; i < 10; ++i) {
        const std::size_t c = i % 2;
        for (std::size_t j = 0; j < 16; ++j) {
            rows.push_back(centres.values()[c * 16 + j] + static_cast<float>(0.05 * rng.normal()));
        }
        labels.push_back(static_cast<std::uint32_t>(c));
    }
    const auto m = rsa_heatmap(Tensor({10, 16}, rows), semantic_order(labels), "semantic");
    double in = 0, off = 0;
    int n_in = 0, n_off = 0;
    for (std::size_t a = 0; a < 10; ++a) {
        for (std::size_t b = 0; b < 10; ++b) {
            if ((a < 5) == (b < 5)) {
                in += m(a, b);
                ++n_in;
            } else {
                off += m(a, b);
                ++n_off;
            }
        }
    }
    CHECK(off / n_off < in / n_in);
}

TEST_CASE("complexity order puts flat images first", "[metrics]") {
    Rng rng(7);
    std::vector<ImageBuffer> imgs{random_image(rng, 16, 16), ImageBuffer::filled(16, 16, 1, 0.3f), smooth_image(16)};
    CHECK(complexity_order(imgs) == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("saliency of a linear surrogate follows its weights", "[metrics]") {
    // encoder(x) = [sum_{c,t} w_c x_ct, 1]: with target [1, 0] the cosine
    // gradient on channel c is proportional to w_c.
    const std::size_t c = 4, t = 6;
    const std::vector<double> w{0.5, -2.0, 1.0, 0.0};
    EpochEncoder surrogate = [&](const Tensor64& x) {
        std::vector<double> weights;
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < t; ++i) {
                weights.push_back(w[ch]);
            }
        }
        const auto proj = sum_all(mul(x, Tensor64({1, c, t}, weights)));
        return concat_last(std::vector<Tensor64>{reshape(proj, {1, 1}), Tensor64({1, 1}, {1.0})});
    };
    Rng rng(8);
    const auto epoch = random_tensor(rng, {c, t});
    const Tensor target({2}, {1.f, 0.f});
    const auto s = saliency_topography(epoch, surrogate, target);
    REQUIRE_FALSE(s.degenerate);
    CHECK(s.channels[0] == Catch::Approx(0.25).margin(1e-9));
    CHECK(s.channels[1] == Catch::Approx(1.0).margin(1e-12));
    CHECK(s.channels[2] == Catch::Approx(0.5).margin(1e-9));
    CHECK(s.channels[3] == 0.0);

    // Normalisation makes the map invariant to scaling the epoch.
    const auto scaled = saliency_topography(scale(epoch, 3.f), surrogate, target);
    for (std::size_t ch = 0; ch < c; ++ch) {
        CHECK(scaled.channels[ch] == Catch::Approx(s.channels[ch]).margin(1e-9));
    }
}

TEST_CASE("saliency through an expert and the degenerate case", "[metrics]") {
    ExpertDims dims;
    dims.channels = 3;
    dims.timesteps = 10;
    dims.embed_dim = 8;
    Rng rng(9);
    const auto params = init_expert(dims, rng);
    const auto epoch = random_tensor(rng, {3, 10});
    const auto target = random_unit_rows<float>(rng, 1, 8);
    const auto s = saliency_topography(epoch, params, reshape(target, {8}));
    CHECK_FALSE(s.degenerate);
    CHECK(*std::max_element(s.channels.begin(), s.channels.end()) == 1.0);

    auto zero = params;
    zero.proj2.weight = Tensor::zeros(zero.proj2.weight.shape(), true);
    const auto z = saliency_topography(epoch, zero, reshape(target, {8}));
    CHECK(z.degenerate);
}

TEST_CASE("pixcorr identities", "[metrics]") {
    Rng rng(10);
    const auto a = random_image(rng, 12, 9);
    CHECK(pixcorr(a, a) == 1.0);
    ImageBuffer reflected = a;
    double mean = 0;
    for (float p : a.pixels) {
        mean += p;
    }
    mean /= a.pixels.size();
    // Reflection about the mean scaled by 0.5 to stay within [0, 1].
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        reflected.pixels[i] = static_cast<float>(mean + 0.5 * (mean - a.pixels[i]));
    }
    CHECK(pixcorr(a, reflected) == Catch::Approx(-1.0).margin(1e-6));
    ImageBuffer affine = a;
    for (auto& p : affine.pixels) {
        p = 0.1f + 0.5f * p;
    }
    CHECK(pixcorr(a, affine) == Catch::Approx(1.0).margin(1e-6));
    CHECK_THROWS_AS(pixcorr(a, ImageBuffer::filled(12, 9, 1, 0.5f)), ContractError);
}

TEST_CASE("ssim identities and orderings", "[metrics]") {
    Rng rng(11);
    const auto a = smooth_image(64);
    CHECK(ssim(a, a) == 1.0);
    const auto noise = random_image(rng, 64, 64);
    const double vs_noise = ssim(a, noise);
    CHECK(std::abs(vs_noise) < 0.1);
    ImageBuffer bright = a;
    for (auto& p : bright.pixels) {
        p = std::min(1.f, p + 0.2f);
    }
    const double shifted = ssim(a, bright);
    CHECK(shifted < 1.0);
    CHECK(shifted > vs_noise);
    CHECK_THROWS_AS(ssim(random_image(rng, 7, 20), random_image(rng, 7, 20)), ContractError);
}
