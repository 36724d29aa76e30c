// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "neuroalign/binary_io.hpp"
#include "neuroalign/error.hpp"

namespace neuroalign {

ImageBuffer::ImageBuffer(std::size_t w, std::size_t h, std::size_t c, std::vector<float> px)
    : width(w), height(h), channels(c), pixels(std::move(px)) {
    validate();
}

ImageBuffer ImageBuffer::filled(std::size_t w, std::size_t h, std::size_t c, float value) {
    return ImageBuffer(w, h, c, std::vector<float>(w * h * c, value));
}

void ImageBuffer::validate() const {
    if (width < 2 || height < 2) {
        throw ContractError("image must be at least 2x2");
    }
    if (channels != 1 && channels != 3) {
        throw ContractError("image must have 1 or 3 channels");
    }
    if (pixels.size() != width * height * channels) {
        throw ShapeError("image pixel count does not match its dimensions");
    }
    for (float v : pixels) {
        if (!(v >= 0.f && v <= 1.f)) {
            throw ContractError("image pixels must lie in [0, 1]");
        }
    }
}

ImageBuffer to_grayscale(const ImageBuffer& img) {
    if (img.channels == 1) {
        return img;
    }
    std::vector<float> out(img.width * img.height);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float* p = &img.pixels[i * 3];
        const double y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        out[i] = static_cast<float>(std::min(1.0, std::max(0.0, y)));
    }
    return ImageBuffer(img.width, img.height, 1, std::move(out));
}

void write_pnm(const std::filesystem::path& path, const ImageBuffer& img) {
    img.validate();
    ByteWriter w;
    const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) +
                               " " + std::to_string(img.height) + "\n255\n";
    w.put_raw(header);
    for (float v : img.pixels) {
        w.put_u8(static_cast<std::uint8_t>(std::lround(v * 255.f)));
    }
    write_file_bytes(path, w.bytes());
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') {
                ++pos;
            }
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') {
        tok.push_back(static_cast<char>(bytes[pos++]));
    }
    if (tok.empty()) {
        throw TruncatedError("PNM header ended early");
    }
    return tok;
}

std::size_t header_number(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
    const auto tok = header_token(bytes, pos);
    for (char c : tok) {
        if (!std::isdigit(static_cast<unsigned char>(c))) {
            throw FormatError("PNM header field '" + tok + "' is not a number");
        }
    }
    return std::stoul(tok);
}

} // namespace

ImageBuffer read_pnm(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw BadMagicError("'" + path.string() + "' is not a binary PGM/PPM file");
    }
    const std::size_t channels = bytes[1] == '5' ? 1 : 3;
    std::size_t pos = 2;
    const auto width = header_number(bytes, pos);
    const auto height = header_number(bytes, pos);
    const auto maxval = header_number(bytes, pos);
    if (maxval == 0 || maxval > 255) {
        throw FormatError("only 8-bit PNM files are supported");
    }
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw TruncatedError("PNM header ended early");
    }
    ++pos;
    const std::size_t n = width * height * channels;
    if (bytes.size() - pos < n) {
        throw TruncatedError("PNM pixel data truncated in '" + path.string() + "'");
    }
    std::vector<float> px(n);
    for (std::size_t i = 0; i < n; ++i) {
        px[i] = static_cast<float>(bytes[pos + i]) / static_cast<float>(maxval);
    }
    return ImageBuffer(width, height, channels, std::move(px));
}

} // namespace neuroalign
