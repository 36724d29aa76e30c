// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Datasets pairing brain-signal epochs with per-stimulus target embeddings:
// a seeded synthetic generator and an on-disk directory layout.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neuroalign/image.hpp"
#include "neuroalign/signal.hpp"

namespace neuroalign {

/// Target embeddings for one stimulus, ordered [image, text, depth, edge],
/// plus the stimulus image when there is one.
struct ModalityBundle {
    std::array<std::vector<float>, 4> targets;
    std::optional<ImageBuffer> image;
    std::uint32_t label = 0;

    std::size_t dim() const { return targets[0].size(); }
};

/// Epochs and the stimuli they were recorded for. `stimulus_of_epoch[i]`
/// indexes `bundles`.
struct Split {
    EpochBatch epochs;
    std::vector<ModalityBundle> bundles;
    std::vector<std::size_t> stimulus_of_epoch;

    void validate() const;
};

struct Dataset {
    Split train;
    Split test;
    double sample_rate_hz = 250.0;
    std::uint64_t stub_seed = 0; // featurizer seed used for image targets

    std::size_t target_dim() const { return train.bundles.front().dim(); }
    void validate() const;
};

enum class Montage { none, ten_twenty };

struct SynthConfig {
    std::size_t n_classes = 20;
    std::size_t per_class = 10;
    std::size_t test_repetitions = 4;
    std::size_t channels = 16;
    std::size_t timesteps = 64;
    std::size_t target_dim = 1024;
    std::size_t latent_dim = 16;
    std::size_t image_size = 32;
    double class_separation = 3.0;
    double noise = 0.1;
    double sample_rate_hz = 250.0;
    Montage montage = Montage::none;
    std::uint64_t stub_seed = 1234;
    std::uint64_t seed = 7;

    void validate() const;
};

/// Sinusoid components (Hz) mixed into every synthetic channel: one per
/// named band below the Nyquist frequency.
std::vector<double> synth_frequencies(double sample_rate_hz);

/// Each class owns a latent prototype scaled by class_separation. Epochs are
/// prototype-weighted sinusoid mixtures plus Gaussian noise; images are
/// prototype-driven smooth patterns plus pixel noise; the image target is
/// the stub featurization of the image and the other targets are noisy
/// unit projections of the prototype. The train split holds per_class
/// stimuli per class; the test split holds one new stimulus per class seen
/// test_repetitions times.
Dataset synth_dataset(const SynthConfig& cfg);

/// Latent prototypes of synth_dataset, [n_classes][latent_dim].
std::vector<std::vector<double>> synth_prototypes(const SynthConfig& cfg);

/// Directory layout: dataset.ini, {train,test}.ndec, {train,test}.ndtg
/// (target embeddings) and images/{train,test}_NNNNN.pgm|ppm.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

/// Test queries: repetitions averaged per label, in label order, with the
/// matching stimulus index for each query row.
struct QuerySet {
    EpochBatch epochs;
    std::vector<std::size_t> stimulus;
};
QuerySet averaged_queries(const Split& split);

} // namespace neuroalign
