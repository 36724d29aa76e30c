// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Brain-signal epochs: containers, repetition averaging, spectral band
// filtering, region selection and the NDEC v1 file format.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "neuroalign/tensor.hpp"

namespace neuroalign {

/// B epochs of C channels by T samples.
struct EpochBatch {
    Tensor signals; // [B, C, T]
    std::vector<std::uint32_t> labels;
    std::vector<std::uint32_t> sample_ids;
    std::vector<std::string> channel_names;

    std::size_t batch_size() const { return signals.dim(0); }
    std::size_t channels() const { return signals.dim(1); }
    std::size_t timesteps() const { return signals.dim(2); }

    /// Throws ShapeError/ContractError when fields disagree.
    void validate() const;
    /// Epochs at the given positions, in order.
    EpochBatch subset(const std::vector<std::size_t>& rows) const;
};

enum class Band { delta, theta, alpha, beta, gamma, all };

struct BandSpec {
    Band band = Band::all;
    double lo_hz = 0.0;
    double hi_hz = 0.0;
    double sample_rate_hz = 0.0;

    /// Standard ranges: delta 0-4, theta 4-8, alpha 8-13, beta 13-30,
    /// gamma 50-100 Hz; `all` spans 0 to Nyquist.
    static BandSpec named(Band band, double sample_rate_hz);
};

std::string_view band_name(Band band);
Band parse_band(std::string_view name);
inline constexpr Band kAllBands[] = {Band::delta, Band::theta, Band::alpha, Band::beta, Band::gamma, Band::all};

enum class Region { frontal, temporal, central, parietal, occipital, all };

std::string_view region_name(Region region);
Region parse_region(std::string_view name);
inline constexpr Region kAllRegions[] = {Region::frontal,  Region::temporal,  Region::central,
                                         Region::parietal, Region::occipital, Region::all};

/// Region of a 10-20 channel label (letter prefix followed by a digit or a
/// midline 'z') by its first letter; Fp and AF count as frontal. Returns
/// false for anything else, including generic names such as "ch01".
bool channel_region(std::string_view channel, Region& region);

/// Per-stimulus mean over repetitions. Each group becomes one output epoch
/// carrying the label and sample id of the group's first epoch.
EpochBatch average_repetitions(const std::vector<EpochBatch>& groups);

/// Splits a batch into groups sharing a label, ordered by label.
std::vector<EpochBatch> group_by_label(const EpochBatch& batch);

/// Zeroes every FFT bin whose frequency lies outside [lo, hi] and
/// transforms back, per channel. A band that contains no bin at this epoch
/// length is a ContractError.
EpochBatch bandpass_filter(const EpochBatch& batch, const BandSpec& band);

/// Keeps the channels of one region; `all` is the identity.
EpochBatch select_region(const EpochBatch& batch, Region region);

/// Standard 10-20 labels for `count` channels (cycled with numeric suffixes
/// beyond the base montage).
std::vector<std::string> ten_twenty_names(std::size_t count);

void write_epochs(const std::filesystem::path& path, const EpochBatch& batch);
EpochBatch read_epochs(const std::filesystem::path& path);

} // namespace neuroalign
