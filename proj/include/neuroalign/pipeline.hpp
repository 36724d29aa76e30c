// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Three-stage training (expert branches with the blur curriculum, then the
// fusion encoder on frozen expert outputs, then the shared-trunk alignment
// head), checkpoints, held-out evaluation and ablation sweeps.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "neuroalign/align.hpp"
#include "neuroalign/config.hpp"
#include "neuroalign/dataset.hpp"
#include "neuroalign/encoders.hpp"
#include "neuroalign/foveation.hpp"
#include "neuroalign/fusion.hpp"
#include "neuroalign/metrics.hpp"
#include "neuroalign/optim.hpp"

namespace neuroalign {

/// Number of completed training stages.
enum class Stage : std::uint32_t { none = 0, experts = 1, fusion = 2, sth = 3 };

struct TrainedModel {
    std::array<ExpertParams<float>, 4> experts;
    FusionParams<float> fusion;
    SthParams<float> sth;

    /// Every parameter, prefixed "expert.<modality>", "fusion" and "sth".
    ParamList<float> parameters() const;
    /// Deep copy; the result shares no tensor storage with this model.
    TrainedModel clone() const;
};

/// Full training state. Optimizer moments and step counts are kept per
/// trainable unit ("expert.image", ..., "fusion", "sth").
struct Checkpoint {
    std::string config_hash;
    Stage stage = Stage::none;
    std::uint64_t seed = 0;
    std::uint64_t epochs_run = 0;
    std::string rng_state; // generator for the next stage
    MemoryBank bank;
    TrainedModel model;
    ParamList<float> optimizer_state;
    std::vector<std::pair<std::string, std::uint64_t>> optimizer_steps;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Reads into `ckpt`, whose model must already have the right shapes (see
/// init_model). Throws ConfigHashMismatchError when `expected_hash` is
/// non-empty and differs from the stored hash.
void read_checkpoint(const std::filesystem::path& path, Checkpoint& ckpt, const std::string& expected_hash = {});
/// SHA-256 of the serialized checkpoint.
std::string checkpoint_digest(const Checkpoint& ckpt);

/// Epochs after band and region selection plus per-channel standardization
/// with training-split statistics.
struct PreparedData {
    Split train;
    Split test;
    QuerySet queries; // averaged test epochs
    double sample_rate_hz = 0;
    std::uint64_t stub_seed = 0;
    std::size_t target_dim() const { return train.bundles.front().dim(); }
};

PreparedData prepare_data(const Dataset& data, const RunConfig& cfg);
/// The dataset a config describes: read from data.path or synthesized.
Dataset load_dataset(const RunConfig& cfg);

/// Freshly initialized model for the given data shapes.
TrainedModel init_model(const RunConfig& cfg, std::size_t channels, std::size_t timesteps, std::size_t target_dim);

struct EpochLog {
    std::string unit; // "expert.image", ..., "fusion", "sth"
    std::size_t epoch = 0;
    double loss = 0;
    double monitor_top1 = 0; // held-out retrieval after the epoch
};

struct TrainOptions {
    std::size_t threads = 1;
    /// Written after every completed stage when non-empty.
    std::filesystem::path checkpoint_path;
    /// Resume from this checkpoint when set.
    std::optional<Checkpoint> resume;
    /// Called once per finished epoch, from the thread that calls run_train.
    std::function<void(const EpochLog&)> on_epoch;
    /// Last stage to run.
    Stage stop_after = Stage::sth;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
};

/// Runs the remaining stages. On a non-finite loss or gradient the stage
/// is abandoned, the checkpoint file keeps the last completed stage and a
/// NumericalError is thrown.
TrainResult run_train(const RunConfig& cfg, const PreparedData& data, const TrainOptions& options = {});

/// Normalized expert embeddings of a batch of epochs, [B, d] per modality.
std::array<Tensor, 4> expert_embeddings(const TrainedModel& model, const Tensor& signals);
/// Normalized fusion embedding from normalized expert embeddings.
Tensor fusion_embedding(const TrainedModel& model, const std::array<Tensor, 4>& experts);

/// One report per modality in the order image, text, depth, edge, fusion.
/// Image/text/depth/edge queries are the alignment-head outputs ranked
/// against the matching test-split targets; fusion queries are ranked
/// against the image targets.
std::vector<RetrievalReport> run_eval(const RunConfig& cfg, const PreparedData& data, const Checkpoint& ckpt);

enum class AblationAxis { module, band, region, encoder };
std::string_view axis_name(AblationAxis axis);
AblationAxis parse_axis(std::string_view name);

struct AblationRow {
    std::string name;
    RunConfig config;
    std::vector<RetrievalReport> reports;
};

/// Row configs for an axis, in table order. The module axis starts from
/// UM off, InfoNCE and no modality mask, then switches on UM, the SCM loss
/// and the modality mask one at a time.
std::vector<std::pair<std::string, RunConfig>> ablation_configs(const RunConfig& base, AblationAxis axis);

/// Trains and evaluates every row. Throws UnsupportedAxisError for the
/// region axis when no channel carries a 10-20 label.
std::vector<AblationRow> run_ablate(const RunConfig& base, const Dataset& data, AblationAxis axis,
                                    std::size_t threads = 1);

} // namespace neuroalign
