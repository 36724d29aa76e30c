// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: INI-style text with [data], [model], [um], [loss],
// [fusion], [sth], [train] and [ablate] sections. Every key has a default,
// unknown keys are rejected, and the canonical form (every key, sorted,
// shortest round-trip numbers) is what gets hashed.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "neuroalign/align.hpp"
#include "neuroalign/dataset.hpp"
#include "neuroalign/encoders.hpp"
#include "neuroalign/foveation.hpp"
#include "neuroalign/fusion.hpp"
#include "neuroalign/objectives.hpp"
#include "neuroalign/optim.hpp"
#include "neuroalign/signal.hpp"

namespace neuroalign {

struct DataSection {
    std::string path; // dataset directory; empty means synthetic
    SynthConfig synth;
};

struct ModelSection {
    EncoderVariant variant = EncoderVariant::cogcap;
    std::size_t temporal_kernel = 7;
    std::size_t fusion_dim = 1024;
    std::size_t fusion_heads = 8;
    std::size_t fusion_layers = 2;
    std::size_t fusion_ffn_mult = 4;
    std::size_t sth_dim = 1024;
    std::size_t sth_blocks = 4;
};

struct UMSection {
    bool enabled = true;
    UMPolicy policy;
    FoveaParams fovea;
};

struct FusionSection {
    bool modality_mask = true;
    std::size_t epochs = 0; // 0 follows train.epochs
};

struct SthSection {
    bool dropout = true;
    SthInference inference = SthInference::all;
    std::size_t epochs = 0; // 0 follows train.epochs
};

struct TrainSection {
    std::size_t epochs = 80;
    std::size_t text_epochs = 30; // cap for the text branch
    std::size_t batch_size = 0;   // 0 picks a size from the dataset
    AdamWConfig optim;
    std::uint64_t seed = 7;
    bool interleave = false; // epoch-major instead of branch-major stage 1
};

struct AblateSection {
    Band band = Band::all;
    Region region = Region::all;
};

struct RunConfig {
    DataSection data;
    ModelSection model;
    UMSection um;
    LossConfig loss;
    FusionSection fusion;
    SthSection sth;
    TrainSection train;
    AblateSection ablate;

    /// Throws ConfigError naming the offending key.
    void validate() const;

    std::size_t fusion_epochs() const { return fusion.epochs ? fusion.epochs : train.epochs; }
    std::size_t sth_epochs() const { return sth.epochs ? sth.epochs : train.epochs; }
    /// Epoch budget of one expert branch.
    std::size_t expert_epochs(ModalityId m) const;
    /// train.batch_size, or clamp(n / 5, 16, 1024) when it is 0, never
    /// above n.
    std::size_t batch_size(std::size_t n_train) const;
};

/// Parses config text. Missing keys keep their defaults.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Sets one `section.key` from its text form, as the parser does.
void set_config_value(RunConfig& cfg, std::string_view dotted_key, std::string_view value);

/// Every key as `section.key=value`, one per line, sorted.
std::string canonical_config(const RunConfig& cfg);
/// SHA-256 of the canonical text, lower-case hex.
std::string config_hash(const RunConfig& cfg);

} // namespace neuroalign
