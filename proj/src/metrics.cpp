// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "neuroalign/error.hpp"
#include "neuroalign/ops.hpp"

namespace neuroalign {

void RetrievalReport::validate() const {
    if (top1 < 0 || top5 > 1 || top1 > top5) {
        throw ContractError("retrieval accuracies must satisfy 0 <= top1 <= top5 <= 1");
    }
    if (ranks.size() != n_queries || per_class_hits.size() != n_gallery || per_class_queries.size() != n_gallery) {
        throw ContractError("retrieval report counts are inconsistent");
    }
    std::size_t hits = 0, queries = 0;
    for (std::size_t g = 0; g < n_gallery; ++g) {
        if (per_class_hits[g] > per_class_queries[g]) {
            throw ContractError("retrieval report has more hits than queries for a class");
        }
        hits += per_class_hits[g];
        queries += per_class_queries[g];
    }
    if (queries != n_queries) {
        throw ContractError("per-class query counts do not sum to n_queries");
    }
    const double expected = n_queries ? static_cast<double>(hits) / static_cast<double>(n_queries) : 0.0;
    if (std::abs(expected - top1) > 1e-12) {
        throw ContractError("per-class hits do not match top1");
    }
}

namespace {

std::vector<double> row_norms(const Tensor& x) {
    const auto d = x.dim(1);
    std::vector<double> norms(x.dim(0));
    auto v = x.values();
    for (std::size_t r = 0; r < norms.size(); ++r) {
        double sq = 0;
        for (std::size_t j = 0; j < d; ++j) {
            sq += static_cast<double>(v[r * d + j]) * v[r * d + j];
        }
        norms[r] = std::sqrt(sq);
    }
    return norms;
}

double dot_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    const auto d = a.dim(1);
    const float* x = a.values().data() + i * d;
    const float* y = b.values().data() + j * d;
    double acc = 0;
    for (std::size_t k = 0; k < d; ++k) {
        acc += static_cast<double>(x[k]) * y[k];
    }
    return acc;
}

} // namespace

RetrievalReport topk_retrieval(const Tensor& queries, const Tensor& gallery, const std::vector<std::size_t>& true_idx) {
    if (queries.rank() != 2 || gallery.rank() != 2 || queries.dim(1) != gallery.dim(1)) {
        throw ShapeError("retrieval needs [Q, d] queries and [G, d] gallery");
    }
    const auto q = queries.dim(0), g = gallery.dim(0);
    if (g < 5) {
        throw ContractError("gallery of " + std::to_string(g) + " is smaller than k = 5");
    }
    if (true_idx.size() != q) {
        throw ContractError("one true index per query required");
    }
    for (const auto* t : {&queries, &gallery}) {
        for (double n : row_norms(*t)) {
            if (std::abs(n - 1) > 1e-3) {
                throw ContractError("retrieval rows must be unit length");
            }
        }
    }
    RetrievalReport report;
    report.n_queries = q;
    report.n_gallery = g;
    report.per_class_hits.assign(g, 0);
    report.per_class_queries.assign(g, 0);
    std::size_t hit1 = 0, hit5 = 0;
    std::vector<double> sims(g);
    for (std::size_t i = 0; i < q; ++i) {
        const auto truth = true_idx[i];
        if (truth >= g) {
            throw ContractError("true index out of gallery range");
        }
        for (std::size_t j = 0; j < g; ++j) {
            sims[j] = dot_rows(queries, i, gallery, j);
        }
        std::size_t rank = 1;
        for (std::size_t j = 0; j < g; ++j) {
            if (sims[j] > sims[truth] || (sims[j] == sims[truth] && j < truth)) {
                ++rank;
            }
        }
        report.ranks.push_back(rank);
        ++report.per_class_queries[truth];
        if (rank == 1) {
            ++hit1;
            ++report.per_class_hits[truth];
        }
        if (rank <= 5) {
            ++hit5;
        }
    }
    report.top1 = q ? static_cast<double>(hit1) / static_cast<double>(q) : 0.0;
    report.top5 = q ? static_cast<double>(hit5) / static_cast<double>(q) : 0.0;
    return report;
}

RSAMatrix rsa_heatmap(const Tensor& embeddings, const std::vector<std::size_t>& order, std::string key) {
    if (embeddings.rank() != 2) {
        throw ShapeError("RSA needs [n, d] embeddings");
    }
    const auto n = embeddings.dim(0);
    if (order.size() != n) {
        throw ContractError("RSA order must be a permutation of the rows");
    }
    std::vector<bool> seen(n, false);
    for (auto o : order) {
        if (o >= n || seen[o]) {
            throw ContractError("RSA order must be a permutation of the rows");
        }
        seen[o] = true;
    }
    const auto norms = row_norms(embeddings);
    for (double v : norms) {
        if (v == 0) {
            throw ContractError("RSA of a zero embedding row");
        }
    }
    RSAMatrix m;
    m.n = n;
    m.order = order;
    m.key = std::move(key);
    m.values.resize(n * n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a; b < n; ++b) {
            const auto i = order[a], j = order[b];
            const double c = std::clamp(dot_rows(embeddings, i, embeddings, j) / (norms[i] * norms[j]), -1.0, 1.0);
            m.values[a * n + b] = c;
            m.values[b * n + a] = c;
        }
        m.values[a * n + a] = 1.0;
    }
    return m;
}

std::vector<std::size_t> semantic_order(const std::vector<std::uint32_t>& labels) {
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return labels[a] < labels[b]; });
    return order;
}

double structural_complexity(const ImageBuffer& img) {
    const auto gray = to_grayscale(img);
    double total = 0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < gray.height; ++y) {
        for (std::size_t x = 0; x < gray.width; ++x) {
            const double gx = x + 1 < gray.width ? gray.at(x + 1, y) - gray.at(x, y) : 0.0;
            const double gy = y + 1 < gray.height ? gray.at(x, y + 1) - gray.at(x, y) : 0.0;
            total += std::hypot(gx, gy);
            ++n;
        }
    }
    return total / static_cast<double>(n);
}

std::vector<std::size_t> complexity_order(const std::vector<ImageBuffer>& images) {
    std::vector<double> score;
    for (const auto& img : images) {
        score.push_back(structural_complexity(img));
    }
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] < score[b]; });
    return order;
}

Saliency saliency_topography(const Tensor& epoch, const EpochEncoder& encoder, const Tensor& target) {
    if (epoch.rank() != 2) {
        throw ShapeError("saliency expects a single [C, T] epoch");
    }
    const auto c = epoch.dim(0), t = epoch.dim(1);
    const auto x = reshape(epoch.cast<double>(), {1, c, t}).detach(true);
    const auto out = encoder(x);
    if (out.numel() != target.numel()) {
        throw ShapeError("saliency target width does not match the encoder output");
    }
    const auto tgt = reshape(target.cast<double>(), {1, target.numel()});
    const auto score = sum_all(row_dot(l2_normalize_rows(reshape(out, {1, out.numel()})), l2_normalize_rows(tgt)));
    Saliency s;
    s.channels.assign(c, 0.0);
    if (score.requires_grad()) {
        backward(score);
        const auto g = x.grad();
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0;
            for (std::size_t i = 0; i < t; ++i) {
                acc += std::abs(g[ch * t + i]);
            }
            s.channels[ch] = acc / static_cast<double>(t);
        }
    }
    const double peak = *std::max_element(s.channels.begin(), s.channels.end());
    if (!(peak > 0)) {
        s.degenerate = true;
        return s;
    }
    for (auto& v : s.channels) {
        v /= peak;
    }
    return s;
}

Saliency saliency_topography(const Tensor& epoch, const ExpertParams<float>& params, const Tensor& target) {
    const auto p64 = params.cast<double>();
    return saliency_topography(epoch, [&](const Tensor64& x) { return expert_forward(x, p64); }, target);
}

double pixcorr(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
        throw ShapeError("pixcorr needs images of equal size");
    }
    const auto n = static_cast<double>(a.pixels.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        ma += a.pixels[i];
        mb += b.pixels[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double da = a.pixels[i] - ma, db = b.pixels[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0 || vb == 0) {
        throw ContractError("pixcorr is undefined for a constant image");
    }
    return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    constexpr std::size_t win = 8;
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    if (a.width != b.width || a.height != b.height) {
        throw ShapeError("ssim needs images of equal size");
    }
    if (a.width < win || a.height < win) {
        throw ContractError("ssim needs images of at least 8x8 pixels");
    }
    const auto ga = to_grayscale(a), gb = to_grayscale(b);
    const double n = win * win;
    double total = 0;
    std::size_t windows = 0;
    for (std::size_t y0 = 0; y0 + win <= ga.height; ++y0) {
        for (std::size_t x0 = 0; x0 + win <= ga.width; ++x0) {
            double sa = 0, sb = 0;
            for (std::size_t y = y0; y < y0 + win; ++y) {
                for (std::size_t x = x0; x < x0 + win; ++x) {
                    sa += ga.at(x, y);
                    sb += gb.at(x, y);
                }
            }
            const double ma = sa / n, mb = sb / n;
            double va = 0, vb = 0, cov = 0;
            for (std::size_t y = y0; y < y0 + win; ++y) {
                for (std::size_t x = x0; x < x0 + win; ++x) {
                    const double da = ga.at(x, y) - ma, db = gb.at(x, y) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= n;
            vb /= n;
            cov /= n;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++windows;
        }
    }
    return total / static_cast<double>(windows);
}

} // namespace neuroalign
