// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace neuroalign {

/// Row-major interleaved pixels in [0, 1].
struct ImageBuffer {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1; // 1 or 3
    std::vector<float> pixels;

    ImageBuffer() = default;
    ImageBuffer(std::size_t width, std::size_t height, std::size_t channels, std::vector<float> pixels);
    static ImageBuffer filled(std::size_t width, std::size_t height, std::size_t channels, float value);

    float at(std::size_t x, std::size_t y, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
    float& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }

    /// Throws ContractError on bad dimensions or out-of-range pixels.
    void validate() const;

    bool operator==(const ImageBuffer&) const = default;
};

/// Luma (0.299, 0.587, 0.114) for RGB; copies grayscale input.
ImageBuffer to_grayscale(const ImageBuffer& img);

/// Binary PGM (P5) for one channel, PPM (P6) for three; 8-bit, rounded.
void write_pnm(const std::filesystem::path& path, const ImageBuffer& img);
ImageBuffer read_pnm(const std::filesystem::path& path);

} // namespace neuroalign
