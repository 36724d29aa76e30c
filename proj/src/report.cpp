// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "neuroalign/binary_io.hpp"
#include "neuroalign/error.hpp"
#include "neuroalign/image.hpp"

namespace neuroalign {

using nlohmann::json;

namespace {

json report_to_json(const ReportEntry& entry) {
    const auto& r = entry.report;
    json j = {
        {"modality", std::string(modality_name(r.modality))},
        {"top1", r.top1},
        {"top5", r.top5},
        {"n_queries", r.n_queries},
        {"n_gallery", r.n_gallery},
        {"ranks", r.ranks},
        {"per_class_queries", r.per_class_queries},
        {"per_class_hits", r.per_class_hits},
        {"tags", r.tags},
        {"seed", r.seed},
        {"config_hash", r.config_hash},
    };
    if (entry.repeat) {
        const auto& s = *entry.repeat;
        j["repeat"] = {{"repeats", s.repeats},   {"seeds", s.seeds},       {"top1_mean", s.top1_mean},
                       {"top1_std", s.top1_std}, {"top5_mean", s.top5_mean}, {"top5_std", s.top5_std}};
    }
    return j;
}

[[noreturn]] void schema_error(const std::string& where, const std::string& what) {
    throw FormatError("report JSON: " + where + ": " + what);
}

void expect_keys(const json& j, const std::string& where, const std::set<std::string>& required,
                 const std::set<std::string>& optional = {}) {
    if (!j.is_object()) {
        schema_error(where, "expected an object");
    }
    for (const auto& k : required) {
        if (!j.contains(k)) {
            schema_error(where, "missing key '" + k + "'");
        }
    }
    for (const auto& [k, v] : j.items()) {
        if (!required.count(k) && !optional.count(k)) {
            schema_error(where, "unexpected key '" + k + "'");
        }
    }
}

double number(const json& j, const std::string& where) {
    if (!j.is_number()) {
        schema_error(where, "expected a number");
    }
    const double v = j.get<double>();
    if (!std::isfinite(v)) {
        schema_error(where, "expected a finite number");
    }
    return v;
}

std::uint64_t count(const json& j, const std::string& where) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
        schema_error(where, "expected a non-negative integer");
    }
    return j.get<std::uint64_t>();
}

std::string text(const json& j, const std::string& where) {
    if (!j.is_string()) {
        schema_error(where, "expected a string");
    }
    return j.get<std::string>();
}

template <typename T>
std::vector<T> counts(const json& j, const std::string& where) {
    if (!j.is_array()) {
        schema_error(where, "expected an array");
    }
    std::vector<T> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        out.push_back(static_cast<T>(count(j[i], where + "[" + std::to_string(i) + "]")));
    }
    return out;
}

double unit_interval(const json& j, const std::string& where) {
    const double v = number(j, where);
    if (v < 0 || v > 1) {
        schema_error(where, "expected a value in [0, 1]");
    }
    return v;
}

ReportEntry entry_from_json(const json& j, const std::string& where) {
    expect_keys(j, where,
                {"modality", "top1", "top5", "n_queries", "n_gallery", "ranks", "per_class_queries",
                 "per_class_hits", "tags", "seed", "config_hash"},
                {"repeat"});
    ReportEntry e;
    auto& r = e.report;
    try {
        r.modality = parse_modality(text(j["modality"], where + ".modality"));
    } catch (const ConfigError& err) {
        schema_error(where + ".modality", err.what());
    }
    r.top1 = unit_interval(j["top1"], where + ".top1");
    r.top5 = unit_interval(j["top5"], where + ".top5");
    r.n_queries = count(j["n_queries"], where + ".n_queries");
    r.n_gallery = count(j["n_gallery"], where + ".n_gallery");
    r.ranks = counts<std::size_t>(j["ranks"], where + ".ranks");
    r.per_class_queries = counts<std::uint32_t>(j["per_class_queries"], where + ".per_class_queries");
    r.per_class_hits = counts<std::uint32_t>(j["per_class_hits"], where + ".per_class_hits");
    if (!j["tags"].is_object()) {
        schema_error(where + ".tags", "expected an object");
    }
    for (const auto& [k, v] : j["tags"].items()) {
        r.tags[k] = text(v, where + ".tags." + k);
    }
    r.seed = count(j["seed"], where + ".seed");
    r.config_hash = text(j["config_hash"], where + ".config_hash");
    for (auto rank : r.ranks) {
        if (rank < 1 || rank > r.n_gallery) {
            schema_error(where + ".ranks", "rank outside 1..n_gallery");
        }
    }
    try {
        r.validate();
    } catch (const ContractError& err) {
        schema_error(where, err.what());
    }
    std::size_t hits5 = 0;
    for (auto rank : r.ranks) {
        hits5 += rank <= 5;
    }
    if (r.n_queries && std::abs(double(hits5) / double(r.n_queries) - r.top5) > 1e-12) {
        schema_error(where, "ranks do not match top5");
    }
    if (j.contains("repeat")) {
        const auto& s = j["repeat"];
        const auto w = where + ".repeat";
        expect_keys(s, w, {"repeats", "seeds", "top1_mean", "top1_std", "top5_mean", "top5_std"});
        RepeatSummary sum;
        sum.repeats = count(s["repeats"], w + ".repeats");
        sum.seeds = counts<std::uint64_t>(s["seeds"], w + ".seeds");
        sum.top1_mean = unit_interval(s["top1_mean"], w + ".top1_mean");
        sum.top1_std = number(s["top1_std"], w + ".top1_std");
        sum.top5_mean = unit_interval(s["top5_mean"], w + ".top5_mean");
        sum.top5_std = number(s["top5_std"], w + ".top5_std");
        if (sum.repeats < 1 || sum.seeds.size() != sum.repeats) {
            schema_error(w, "seed list must hold one seed per repeat");
        }
        if (sum.top1_std < 0 || sum.top5_std < 0) {
            schema_error(w, "standard deviations must be non-negative");
        }
        e.repeat = sum;
    }
    return e;
}

ReportDocument document_from_json(const json& j) {
    expect_keys(j, "document", {"schema_version", "config_hash", "seed", "reports", "runtime_sec"},
                {"ablation_axis"});
    ReportDocument doc;
    if (!j["schema_version"].is_number_integer()) {
        schema_error("schema_version", "expected an integer");
    }
    doc.schema_version = j["schema_version"].get<int>();
    if (doc.schema_version != kReportSchemaVersion) {
        throw VersionMismatchError("report schema version " + std::to_string(doc.schema_version) +
                                   " is not supported");
    }
    doc.config_hash = text(j["config_hash"], "config_hash");
    doc.seed = count(j["seed"], "seed");
    if (!j["reports"].is_array()) {
        schema_error("reports", "expected an array");
    }
    for (std::size_t i = 0; i < j["reports"].size(); ++i) {
        doc.reports.push_back(entry_from_json(j["reports"][i], "reports[" + std::to_string(i) + "]"));
    }
    if (j.contains("ablation_axis")) {
        doc.ablation_axis = text(j["ablation_axis"], "ablation_axis");
        try {
            parse_axis(*doc.ablation_axis);
        } catch (const ConfigError& err) {
            schema_error("ablation_axis", err.what());
        }
    }
    if (!j["runtime_sec"].is_null()) {
        doc.runtime_sec = number(j["runtime_sec"], "runtime_sec");
    }
    return doc;
}

json parse_json(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("report JSON does not parse: ") + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

} // namespace

std::string report_json(const ReportDocument& doc) {
    json j = {
        {"schema_version", doc.schema_version},
        {"config_hash", doc.config_hash},
        {"seed", doc.seed},
        {"reports", json::array()},
        {"runtime_sec", nullptr},
    };
    for (const auto& e : doc.reports) {
        j["reports"].push_back(report_to_json(e));
    }
    if (doc.ablation_axis) {
        j["ablation_axis"] = *doc.ablation_axis;
    }
    if (doc.runtime_sec) {
        j["runtime_sec"] = *doc.runtime_sec;
    }
    return j.dump(2) + "\n";
}

ReportDocument parse_report_json(const std::string& text) {
    return document_from_json(parse_json(text));
}

void validate_report_json(const std::string& text) {
    (void)parse_report_json(text);
}

std::vector<ReportEntry> summarize_repeats(const std::vector<std::vector<RetrievalReport>>& runs,
                                           const std::vector<std::uint64_t>& seeds) {
    if (runs.empty() || runs.size() != seeds.size()) {
        throw ContractError("one seed per repeated run required");
    }
    std::vector<ReportEntry> out;
    for (std::size_t i = 0; i < runs.front().size(); ++i) {
        ReportEntry e;
        e.report = runs.front()[i];
        if (runs.size() > 1) {
            RepeatSummary s;
            s.repeats = runs.size();
            s.seeds = seeds;
            std::vector<double> t1, t5;
            for (const auto& run : runs) {
                if (run.size() != runs.front().size() || run[i].modality != e.report.modality) {
                    throw ContractError("repeated runs disagree on their report layout");
                }
                t1.push_back(run[i].top1);
                t5.push_back(run[i].top5);
            }
            auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
                mean = 0;
                for (double x : v) {
                    mean += x;
                }
                mean /= double(v.size());
                sd = 0;
                for (double x : v) {
                    sd += (x - mean) * (x - mean);
                }
                sd = std::sqrt(sd / double(v.size()));
            };
            mean_std(t1, s.top1_mean, s.top1_std);
            mean_std(t5, s.top5_mean, s.top5_std);
            e.repeat = s;
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::string artifact_stem(const std::string& prefix, const std::string& config_hash, std::uint64_t seed) {
    return prefix + "_" + config_hash.substr(0, 12) + "_s" + std::to_string(seed);
}

std::filesystem::path write_report(const std::filesystem::path& dir, const std::string& stem,
                                   const ReportDocument& doc) {
    std::filesystem::create_directories(dir);
    const auto path = dir / (stem + ".json");
    write_text(path, report_json(doc));
    return path;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "row,modality,top1,top5,n_queries,n_gallery\n";
    for (const auto& row : rows) {
        for (const auto& r : row.reports) {
            out += row.name + "," + std::string(modality_name(r.modality)) + "," + format_double(r.top1) + "," +
                   format_double(r.top5) + "," + std::to_string(r.n_queries) + "," + std::to_string(r.n_gallery) +
                   "\n";
        }
    }
    return out;
}

void write_rsa(const std::filesystem::path& dir, const std::string& stem, const RSAMatrix& m) {
    std::filesystem::create_directories(dir);
    std::vector<float> px(m.n * m.n);
    std::string csv;
    for (std::size_t a = 0; a < m.n; ++a) {
        for (std::size_t b = 0; b < m.n; ++b) {
            const double v = m(a, b);
            px[a * m.n + b] = static_cast<float>(std::clamp((v + 1) / 2, 0.0, 1.0));
            csv += (b ? "," : "") + format_double(v);
        }
        csv += "\n";
    }
    write_pnm(dir / (stem + ".pgm"), ImageBuffer(m.n, m.n, 1, std::move(px)));
    write_text(dir / (stem + ".csv"), csv);
}

void write_topography(const std::filesystem::path& dir, const std::string& stem, const Saliency& s,
                      const std::vector<std::string>& channel_names) {
    std::filesystem::create_directories(dir);
    constexpr std::size_t kCell = 8;
    const auto c = s.channels.size();
    const auto side = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(double(c)))));
    const auto w = side * kCell;
    std::vector<float> px(w * w, 0.f);
    std::string csv = "channel,name,saliency\n";
    for (std::size_t k = 0; k < c; ++k) {
        const auto gx = k % side, gy = k / side;
        for (std::size_t y = 0; y < kCell; ++y) {
            for (std::size_t x = 0; x < kCell; ++x) {
                px[(gy * kCell + y) * w + gx * kCell + x] = static_cast<float>(std::clamp(s.channels[k], 0.0, 1.0));
            }
        }
        csv += std::to_string(k) + "," + (k < channel_names.size() ? channel_names[k] : "") + "," +
               format_double(s.channels[k]) + "\n";
    }
    write_pnm(dir / (stem + ".pgm"), ImageBuffer(w, w, 1, std::move(px)));
    write_text(dir / (stem + ".csv"), csv);
}

std::vector<std::filesystem::path> emit_figures(const std::filesystem::path& dir, const RunConfig& cfg,
                                                const PreparedData& data, const Checkpoint& ckpt) {
    const auto hash = config_hash(cfg);
    if (ckpt.config_hash != hash) {
        throw ConfigHashMismatchError("checkpoint was written for config " + ckpt.config_hash + ", not " + hash);
    }
    std::vector<std::filesystem::path> written;
    const auto& q = data.queries;
    const auto z = expert_embeddings(ckpt.model, q.epochs.signals);
    const auto fused = fusion_embedding(ckpt.model, z);

    const auto semantic = artifact_stem("rsa_semantic", hash, cfg.train.seed);
    write_rsa(dir, semantic, rsa_heatmap(fused, semantic_order(q.epochs.labels), "semantic"));
    written.push_back(dir / (semantic + ".pgm"));
    written.push_back(dir / (semantic + ".csv"));

    std::vector<ImageBuffer> images;
    for (auto s : q.stimulus) {
        if (data.test.bundles[s].image) {
            images.push_back(*data.test.bundles[s].image);
        }
    }
    if (images.size() == q.stimulus.size()) {
        const auto stem = artifact_stem("rsa_complexity", hash, cfg.train.seed);
        write_rsa(dir, stem, rsa_heatmap(fused, complexity_order(images), "complexity"));
        written.push_back(dir / (stem + ".pgm"));
        written.push_back(dir / (stem + ".csv"));
    }

    const auto c = q.epochs.channels(), t = q.epochs.timesteps();
    const auto qv = q.epochs.signals.values();
    const Tensor epoch({c, t}, std::vector<float>(qv.begin(), qv.begin() + static_cast<std::ptrdiff_t>(c * t)));
    for (auto m : kExpertModalities) {
        const auto& target = data.test.bundles[q.stimulus[0]].targets[modality_index(m)];
        const auto sal = saliency_topography(epoch, ckpt.model.experts[modality_index(m)],
                                             Tensor({target.size()}, target));
        const auto stem = artifact_stem("topography_" + std::string(modality_name(m)), hash, cfg.train.seed);
        write_topography(dir, stem, sal, q.epochs.channel_names);
        written.push_back(dir / (stem + ".pgm"));
        written.push_back(dir / (stem + ".csv"));
    }
    return written;
}

} // namespace neuroalign
