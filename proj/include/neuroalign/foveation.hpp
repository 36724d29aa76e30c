// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Uncertainty-weighted masking: foveated blur, the per-sample score memory
// bank, the three-level blur policy and a fixed random-projection image
// featurizer used to re-embed blurred images.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "neuroalign/image.hpp"
#include "neuroalign/tensor.hpp"

namespace neuroalign {

struct FoveaParams {
    double r_centre = 1.0;
    double r_edge = 0.0;
    double lambda = 3.0;

    void validate() const;
};

struct UMPolicy {
    double sigma0 = 6.0; // baseline blur radius, pixels
    double c = 6.0;      // radius step
    double z = 1.0;      // interval half-width in standard deviations
    double gamma = 0.3;  // EMA coefficient

    void validate() const;
};

/// M(i, j) = r_edge + (r_centre - r_edge) * exp(-lambda * d / d_max) with d
/// the distance to the geometric centre and d_max the centre-corner distance.
/// Returned as [height, width] doubles, row-major.
std::vector<double> fovea_mask(std::size_t width, std::size_t height, const FoveaParams& params);

/// Normalised Gaussian taps for offsets -r..r with r = ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with clamped edges; sigma = 0 returns the input.
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma);

/// M * I + (1 - M) * blur(I, sigma), per channel.
ImageBuffer apply_foveation(const ImageBuffer& img, const FoveaParams& params, double sigma);

struct BankStats {
    double mean = 0.0;
    double stddev = 0.0; // population
    std::size_t count = 0;
};

/// Smoothed similarity score per training sample.
class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(std::size_t n_samples, double gamma);

    /// s_hat = gamma * s + (1 - gamma) * old; the first observation of a
    /// sample is stored as is. Returns the stored value.
    double update(std::size_t sample_id, double s);

    bool initialized(std::size_t sample_id) const;
    double score(std::size_t sample_id) const;
    BankStats stats() const;

    std::size_t size() const { return scores_.size(); }
    double gamma() const { return gamma_; }
    const std::vector<double>& scores() const { return scores_; }
    const std::vector<std::uint8_t>& flags() const { return initialized_; }
    /// Restores a saved state; sizes must agree.
    void restore(std::vector<double> scores, std::vector<std::uint8_t> flags);

    bool operator==(const MemoryBank&) const = default;

private:
    void check_id(std::size_t sample_id) const;

    std::vector<double> scores_;
    std::vector<std::uint8_t> initialized_;
    double gamma_ = 0.3;
};

/// Hard samples (below mean - z * std) get sigma0 - c, easy ones (above
/// mean + z * std) get sigma0 + c, the rest sigma0. With fewer than two
/// initialised entries the baseline is returned.
double select_sigma(double s_hat, const BankStats& stats, const UMPolicy& policy);

inline constexpr std::size_t kStubGrid = 16;

/// 16x16 grayscale grid by area averaging (bilinear-free box filter over
/// the source pixels each grid cell covers).
std::vector<double> stub_grid(const ImageBuffer& img);

/// Fixed random-projection featurizer: grid -> mean removal -> Gaussian
/// projection to `dim` -> L2 normalisation.
class StubEncoder {
public:
    StubEncoder(std::uint64_t seed, std::size_t dim);

    std::vector<float> encode(const ImageBuffer& img) const;
    std::size_t dim() const { return dim_; }
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::size_t dim_;
    std::vector<double> projection_; // [dim, 256]
};

/// One-shot helper around StubEncoder.
Tensor stub_encode(const ImageBuffer& img, std::uint64_t seed, std::size_t dim);

/// Cosine similarity; zero vectors are a contract error.
double similarity_score(std::span<const float> e, std::span<const float> v);

} // namespace neuroalign
