// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Report documents (JSON), ablation tables (CSV) and figure files (PGM plus
// CSV) for RSA heatmaps and saliency topographies.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neuroalign/metrics.hpp"
#include "neuroalign/pipeline.hpp"

namespace neuroalign {

inline constexpr int kReportSchemaVersion = 1;

/// Mean and population standard deviation over repeated runs.
struct RepeatSummary {
    std::size_t repeats = 1;
    std::vector<std::uint64_t> seeds;
    double top1_mean = 0, top1_std = 0;
    double top5_mean = 0, top5_std = 0;
};

struct ReportEntry {
    RetrievalReport report;
    std::optional<RepeatSummary> repeat;
};

struct ReportDocument {
    int schema_version = kReportSchemaVersion;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<ReportEntry> reports;
    std::optional<std::string> ablation_axis;
    std::optional<double> runtime_sec; // null unless timing was requested
};

/// Pretty-printed JSON with sorted keys and a trailing newline.
std::string report_json(const ReportDocument& doc);
/// Parses and validates; throws FormatError on any schema violation.
ReportDocument parse_report_json(const std::string& text);
/// Schema check alone.
void validate_report_json(const std::string& text);

/// Entries for `runs` (one report set per seed), reports aligned by index.
std::vector<ReportEntry> summarize_repeats(const std::vector<std::vector<RetrievalReport>>& runs,
                                           const std::vector<std::uint64_t>& seeds);

/// "<prefix>_<first 12 hash chars>_s<seed>"
std::string artifact_stem(const std::string& prefix, const std::string& config_hash, std::uint64_t seed);

/// Writes <stem>.json; creates `dir` when missing. Returns the path.
std::filesystem::path write_report(const std::filesystem::path& dir, const std::string& stem,
                                   const ReportDocument& doc);

/// CSV with one line per (row, modality).
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// RSA matrix as a PGM with cosine -1..1 mapped to 0..255 and as CSV.
void write_rsa(const std::filesystem::path& dir, const std::string& stem, const RSAMatrix& m);
/// Channel saliencies laid out on a square grid (row-major, 8 pixels per
/// cell) as a PGM, plus a CSV of channel,name,saliency.
void write_topography(const std::filesystem::path& dir, const std::string& stem, const Saliency& s,
                      const std::vector<std::string>& channel_names);

/// RSA heatmaps of the fusion embeddings of the held-out queries (semantic
/// and structural-complexity order) and saliency topographies of every
/// expert branch for the first query. Returns the files written.
std::vector<std::filesystem::path> emit_figures(const std::filesystem::path& dir, const RunConfig& cfg,
                                                const PreparedData& data, const Checkpoint& ckpt);

} // namespace neuroalign
