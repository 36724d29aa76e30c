// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Retrieval scoring, representational similarity matrices, input-gradient
// channel saliency and low-level image similarity.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neuroalign/encoders.hpp"
#include "neuroalign/image.hpp"
#include "neuroalign/tensor.hpp"

namespace neuroalign {

struct RetrievalReport {
    ModalityId modality = ModalityId::image;
    double top1 = 0;
    double top5 = 0;
    std::size_t n_queries = 0;
    std::size_t n_gallery = 0;
    std::vector<std::size_t> ranks;               // 1-based rank of the true item per query
    std::vector<std::uint32_t> per_class_queries; // indexed by gallery entry
    std::vector<std::uint32_t> per_class_hits;    // top-1 hits per gallery entry
    std::map<std::string, std::string> tags;      // ablation tags such as band or region
    std::uint64_t seed = 0;
    std::string config_hash;

    /// Throws ContractError when counts and accuracies disagree.
    void validate() const;
};

/// Ranks the gallery by cosine similarity per query (ties go to the lower
/// gallery index) and scores hits within the first 1 and 5 entries.
/// Rows must be unit length; the gallery needs at least 5 entries.
RetrievalReport topk_retrieval(const Tensor& queries, const Tensor& gallery, const std::vector<std::size_t>& true_idx);

/// Pairwise cosine similarities, reordered so that entry (a, b) compares
/// items order[a] and order[b].
struct RSAMatrix {
    std::size_t n = 0;
    std::vector<double> values; // [n, n] row-major
    std::vector<std::size_t> order;
    std::string key; // what the order is sorted by

    double operator()(std::size_t a, std::size_t b) const { return values[a * n + b]; }
};

RSAMatrix rsa_heatmap(const Tensor& embeddings, const std::vector<std::size_t>& order, std::string key = "identity");

/// Stable order of items by label.
std::vector<std::size_t> semantic_order(const std::vector<std::uint32_t>& labels);
/// Mean absolute forward-difference gradient of the grayscale image.
double structural_complexity(const ImageBuffer& img);
/// Stable order of images by increasing structural complexity.
std::vector<std::size_t> complexity_order(const std::vector<ImageBuffer>& images);

struct Saliency {
    std::vector<double> channels; // max-normalised, one per channel
    bool degenerate = false;      // gradient vanished everywhere
};

using EpochEncoder = std::function<Tensor64(const Tensor64&)>;

/// Gradient of cos(encoder(epoch), target) with respect to the [C, T] epoch;
/// channel score = mean over time of |gradient|, scaled so the maximum is 1.
/// `encoder` maps [1, C, T] to [1, d].
Saliency saliency_topography(const Tensor& epoch, const EpochEncoder& encoder, const Tensor& target);
/// Same, through one expert branch.
Saliency saliency_topography(const Tensor& epoch, const ExpertParams<float>& params, const Tensor& target);

/// Pearson correlation over all pixel values.
double pixcorr(const ImageBuffer& a, const ImageBuffer& b);

/// Mean SSIM over all 8x8 windows (stride 1, uniform weights) of the luma
/// images, K1 = 0.01, K2 = 0.03, dynamic range 1.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

} // namespace neuroalign
