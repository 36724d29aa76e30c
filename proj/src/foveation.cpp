// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/foveation.hpp"

#include <algorithm>
#include <cmath>

#include "neuroalign/error.hpp"
#include "neuroalign/random.hpp"

namespace neuroalign {

void FoveaParams::validate() const {
    if (!(r_edge >= 0 && r_centre <= 1 && r_edge <= r_centre)) {
        throw ContractError("fovea weights must satisfy 0 <= r_edge <= r_centre <= 1");
    }
    if (!(lambda >= 0)) {
        throw ContractError("fovea lambda must be non-negative");
    }
}

void UMPolicy::validate() const {
    if (!(sigma0 > 0) || !(c >= 0) || sigma0 - c < 0) {
        throw ContractError("UM policy needs sigma0 > 0, c >= 0 and sigma0 - c >= 0");
    }
    if (!(z > 0)) {
        throw ContractError("UM interval width z must be positive");
    }
    if (!(gamma > 0 && gamma <= 1)) {
        throw ContractError("UM EMA coefficient gamma must lie in (0, 1]");
    }
}

std::vector<double> fovea_mask(std::size_t width, std::size_t height, const FoveaParams& params) {
    params.validate();
    const double cx = (static_cast<double>(width) - 1) / 2;
    const double cy = (static_cast<double>(height) - 1) / 2;
    const double d_max = std::hypot(cx, cy);
    std::vector<double> mask(width * height);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
            const double ratio = d_max > 0 ? d / d_max : 0.0;
            // blend form keeps M == r_centre exactly at the centre
            const double w = std::exp(-params.lambda * ratio);
            mask[y * width + x] = params.r_centre * w + params.r_edge * (1 - w);
        }
    }
    return mask;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma >= 0)) {
        throw ContractError("blur sigma must be non-negative");
    }
    if (sigma == 0) {
        return {1.0};
    }
    const auto r = static_cast<long>(std::ceil(3 * sigma));
    std::vector<double> taps(2 * r + 1);
    double total = 0;
    for (long i = -r; i <= r; ++i) {
        const double w = std::exp(-static_cast<double>(i * i) / (2 * sigma * sigma));
        taps[i + r] = w;
        total += w;
    }
    for (auto& w : taps) {
        w /= total;
    }
    return taps;
}

namespace {

std::vector<double> blur_values(const ImageBuffer& img, double sigma) {
    const auto taps = gaussian_kernel(sigma);
    const long r = static_cast<long>(taps.size() / 2);
    const long w = static_cast<long>(img.width);
    const long h = static_cast<long>(img.height);
    const std::size_t ch = img.channels;
    std::vector<double> tmp(img.pixels.size());
    std::vector<double> out(img.pixels.size());
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < ch; ++c) {
                double acc = 0;
                for (long k = -r; k <= r; ++k) {
                    const long xs = std::clamp(x + k, 0L, w - 1);
                    acc += taps[k + r] * img.pixels[(y * w + xs) * ch + c];
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < ch; ++c) {
                double acc = 0;
                for (long k = -r; k <= r; ++k) {
                    const long ys = std::clamp(y + k, 0L, h - 1);
                    acc += taps[k + r] * tmp[(ys * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc;
            }
        }
    }
    return out;
}

float unit_clamp(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

} // namespace

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
    img.validate();
    if (sigma == 0) {
        return img;
    }
    const auto values = blur_values(img, sigma);
    ImageBuffer out = img;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out.pixels[i] = unit_clamp(values[i]);
    }
    return out;
}

ImageBuffer apply_foveation(const ImageBuffer& img, const FoveaParams& params, double sigma) {
    img.validate();
    const auto mask = fovea_mask(img.width, img.height, params);
    if (!(sigma >= 0)) {
        throw ContractError("blur sigma must be non-negative");
    }
    if (sigma == 0) {
        return img;
    }
    const auto blurred = blur_values(img, sigma);
    ImageBuffer out = img;
    for (std::size_t p = 0; p < mask.size(); ++p) {
        const double m = mask[p];
        for (std::size_t c = 0; c < img.channels; ++c) {
            const std::size_t i = p * img.channels + c;
            out.pixels[i] = unit_clamp(m * img.pixels[i] + (1 - m) * blurred[i]);
        }
    }
    return out;
}

MemoryBank::MemoryBank(std::size_t n_samples, double gamma)
    : scores_(n_samples, 0.0), initialized_(n_samples, 0), gamma_(gamma) {
    if (!(gamma > 0 && gamma <= 1)) {
        throw ContractError("memory bank gamma must lie in (0, 1]");
    }
}

void MemoryBank::check_id(std::size_t sample_id) const {
    if (sample_id >= scores_.size()) {
        throw ContractError("unknown sample id " + std::to_string(sample_id) + " (bank holds " +
                            std::to_string(scores_.size()) + ")");
    }
}

double MemoryBank::update(std::size_t sample_id, double s) {
    check_id(sample_id);
    if (!std::isfinite(s)) {
        throw NumericalError("memory bank score must be finite");
    }
    double& slot = scores_[sample_id];
    if (initialized_[sample_id]) {
        slot = gamma_ * s + (1 - gamma_) * slot;
    } else {
        slot = s;
        initialized_[sample_id] = 1;
    }
    return slot;
}

bool MemoryBank::initialized(std::size_t sample_id) const {
    check_id(sample_id);
    return initialized_[sample_id] != 0;
}

double MemoryBank::score(std::size_t sample_id) const {
    check_id(sample_id);
    return scores_[sample_id];
}

BankStats MemoryBank::stats() const {
    BankStats st;
    double sum = 0;
    for (std::size_t i = 0; i < scores_.size(); ++i) {
        if (initialized_[i]) {
            sum += scores_[i];
            ++st.count;
        }
    }
    if (st.count == 0) {
        return st;
    }
    st.mean = sum / static_cast<double>(st.count);
    double sq = 0;
    for (std::size_t i = 0; i < scores_.size(); ++i) {
        if (initialized_[i]) {
            sq += (scores_[i] - st.mean) * (scores_[i] - st.mean);
        }
    }
    st.stddev = std::sqrt(sq / static_cast<double>(st.count));
    return st;
}

void MemoryBank::restore(std::vector<double> scores, std::vector<std::uint8_t> flags) {
    if (scores.size() != scores_.size() || flags.size() != scores_.size()) {
        throw ShapeError("memory bank size mismatch on restore");
    }
    scores_ = std::move(scores);
    initialized_ = std::move(flags);
}

double select_sigma(double s_hat, const BankStats& stats, const UMPolicy& policy) {
    if (stats.count < 2) {
        return policy.sigma0;
    }
    if (s_hat < stats.mean - policy.z * stats.stddev) {
        return policy.sigma0 - policy.c;
    }
    if (s_hat > stats.mean + policy.z * stats.stddev) {
        return policy.sigma0 + policy.c;
    }
    return policy.sigma0;
}

std::vector<double> stub_grid(const ImageBuffer& img) {
    const auto gray = to_grayscale(img);
    std::vector<double> grid(kStubGrid * kStubGrid);
    for (std::size_t gy = 0; gy < kStubGrid; ++gy) {
        const std::size_t y0 = gy * gray.height / kStubGrid;
        const std::size_t y1 = std::max(y0 + 1, (gy + 1) * gray.height / kStubGrid);
        for (std::size_t gx = 0; gx < kStubGrid; ++gx) {
            const std::size_t x0 = gx * gray.width / kStubGrid;
            const std::size_t x1 = std::max(x0 + 1, (gx + 1) * gray.width / kStubGrid);
            double acc = 0;
            for (std::size_t y = y0; y < y1; ++y) {
                for (std::size_t x = x0; x < x1; ++x) {
                    acc += gray.at(x, y);
                }
            }
            grid[gy * kStubGrid + gx] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
        }
    }
    return grid;
}

StubEncoder::StubEncoder(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
    if (dim == 0) {
        throw ContractError("stub encoder dimension must be positive");
    }
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kStubGrid * kStubGrid));
    projection_.resize(dim * kStubGrid * kStubGrid);
    for (auto& w : projection_) {
        w = rng.normal() * scale;
    }
}

std::vector<float> StubEncoder::encode(const ImageBuffer& img) const {
    auto grid = stub_grid(img);
    double mean = 0;
    for (double g : grid) {
        mean += g;
    }
    mean /= static_cast<double>(grid.size());
    double spread = 0;
    for (auto& g : grid) {
        spread += (g - mean) * (g - mean);
    }
    // A flat image has no structure left after centring; embed it by its
    // offset brightness instead so the result stays normalisable.
    for (auto& g : grid) {
        g = spread > 1e-20 ? g - mean : g + 1.0;
    }
    std::vector<double> out(dim_, 0.0);
    const std::size_t n = grid.size();
    for (std::size_t i = 0; i < dim_; ++i) {
        const double* row = &projection_[i * n];
        double acc = 0;
        for (std::size_t j = 0; j < n; ++j) {
            acc += row[j] * grid[j];
        }
        out[i] = acc;
    }
    double norm = 0;
    for (double v : out) {
        norm += v * v;
    }
    norm = std::sqrt(norm);
    std::vector<float> result(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
        result[i] = static_cast<float>(out[i] / norm);
    }
    return result;
}

Tensor stub_encode(const ImageBuffer& img, std::uint64_t seed, std::size_t dim) {
    return Tensor({dim}, StubEncoder(seed, dim).encode(img));
}

double similarity_score(std::span<const float> e, std::span<const float> v) {
    if (e.size() != v.size() || e.empty()) {
        throw ShapeError("similarity_score needs equal-length non-empty vectors");
    }
    double dot = 0, ne = 0, nv = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        dot += static_cast<double>(e[i]) * v[i];
        ne += static_cast<double>(e[i]) * e[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (ne == 0 || nv == 0) {
        throw ContractError("similarity_score of a zero vector");
    }
    return std::clamp(dot / std::sqrt(ne * nv), -1.0, 1.0);
}

} // namespace neuroalign
