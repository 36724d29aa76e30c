// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// neuroalign command-line tool: synth, train, eval, ablate, report.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "neuroalign/binary_io.hpp"
#include "neuroalign/config.hpp"
#include "neuroalign/dataset.hpp"
#include "neuroalign/error.hpp"
#include "neuroalign/pipeline.hpp"
#include "neuroalign/report.hpp"

namespace {

using namespace neuroalign;
namespace fs = std::filesystem;

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    std::size_t threads = 1;
    bool timing = false;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "Run configuration file");
    cmd->add_option("--seed", args.seed, "Training seed (overrides train.seed)");
    cmd->add_option("--out", args.out, "Output directory")->capture_default_str();
    cmd->add_option("--threads", args.threads, "Worker threads for the expert branches")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_flag("--timing", args.timing, "Record wall-clock runtime in the report");
    cmd->add_flag("--quiet", args.quiet, "Suppress per-epoch progress lines");
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg = args.config.empty() ? parse_config("") : load_config(args.config);
    if (args.seed) {
        set_config_value(cfg, "train.seed", std::to_string(*args.seed));
    }
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string log_csv(const std::vector<EpochLog>& log) {
    std::string out = "unit,epoch,loss,monitor_top1\n";
    char buf[160];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g\n", e.unit.c_str(), e.epoch, e.loss, e.monitor_top1);
        out += buf;
    }
    return out;
}

TrainOptions train_options(const CommonArgs& args) {
    TrainOptions options;
    options.threads = args.threads;
    if (!args.quiet) {
        options.on_epoch = [](const EpochLog& e) {
            std::fprintf(stderr, "%-13s epoch %3zu  loss %.6f  held-out top-1 %.3f\n", e.unit.c_str(), e.epoch,
                         e.loss, e.monitor_top1);
        };
    }
    return options;
}

// Model with the shapes a config and dataset imply, for checkpoint loading.
Checkpoint checkpoint_shell(const RunConfig& cfg, const PreparedData& data) {
    Checkpoint ckpt;
    ckpt.model = init_model(cfg, data.train.epochs.channels(), data.train.epochs.timesteps(), data.target_dim());
    return ckpt;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int cmd_synth(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    const auto data = synth_dataset(cfg.data.synth);
    write_dataset(args.out, data);
    std::printf("wrote synthetic dataset to %s (%zu train epochs, %zu test epochs, %zu classes)\n",
                args.out.c_str(), data.train.epochs.batch_size(), data.test.epochs.batch_size(),
                data.test.bundles.size());
    return 0;
}

int cmd_train(const CommonArgs& args, const std::string& checkpoint, const std::string& resume) {
    const auto start = std::chrono::steady_clock::now();
    const auto cfg = resolve_config(args);
    const auto hash = config_hash(cfg);
    const auto data = prepare_data(load_dataset(cfg), cfg);
    fs::create_directories(args.out);
    auto options = train_options(args);
    options.checkpoint_path =
        checkpoint.empty() ? fs::path(args.out) / (artifact_stem("checkpoint", hash, cfg.train.seed) + ".nckp")
                           : fs::path(checkpoint);
    if (!resume.empty()) {
        auto ckpt = checkpoint_shell(cfg, data);
        read_checkpoint(resume, ckpt, hash);
        options.resume = std::move(ckpt);
    }
    const auto result = run_train(cfg, data, options);
    write_text(fs::path(args.out) / (artifact_stem("train_log", hash, cfg.train.seed) + ".csv"), log_csv(result.log));
    const auto reports = run_eval(cfg, data, result.checkpoint);
    ReportDocument doc;
    doc.config_hash = hash;
    doc.seed = cfg.train.seed;
    for (const auto& r : reports) {
        doc.reports.push_back({r, std::nullopt});
    }
    if (args.timing) {
        doc.runtime_sec = seconds_since(start);
    }
    const auto path = write_report(args.out, artifact_stem("eval", hash, cfg.train.seed), doc);
    std::printf("checkpoint %s\nreport %s\n", options.checkpoint_path.c_str(), path.c_str());
    for (const auto& r : reports) {
        std::printf("%-7s top-1 %.3f  top-5 %.3f\n", std::string(modality_name(r.modality)).c_str(), r.top1, r.top5);
    }
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, std::size_t repeat) {
    const auto start = std::chrono::steady_clock::now();
    const auto base = resolve_config(args);
    const auto hash = config_hash(base);
    const auto dataset = load_dataset(base);
    std::vector<std::vector<RetrievalReport>> runs;
    std::vector<std::uint64_t> seeds;
    if (!checkpoint.empty()) {
        if (repeat != 1) {
            throw ConfigError("--repeat retrains from scratch and cannot be combined with --checkpoint");
        }
        const auto data = prepare_data(dataset, base);
        auto ckpt = checkpoint_shell(base, data);
        read_checkpoint(checkpoint, ckpt, hash);
        runs.push_back(run_eval(base, data, ckpt));
        seeds.push_back(base.train.seed);
    } else {
        for (std::size_t i = 0; i < repeat; ++i) {
            RunConfig cfg = base;
            cfg.train.seed = base.train.seed + i;
            const auto data = prepare_data(dataset, cfg);
            const auto result = run_train(cfg, data, train_options(args));
            runs.push_back(run_eval(cfg, data, result.checkpoint));
            seeds.push_back(cfg.train.seed);
        }
    }
    ReportDocument doc;
    doc.config_hash = hash;
    doc.seed = base.train.seed;
    doc.reports = summarize_repeats(runs, seeds);
    if (args.timing) {
        doc.runtime_sec = seconds_since(start);
    }
    const auto path = write_report(args.out, artifact_stem("eval", hash, base.train.seed), doc);
    std::printf("report %s\n", path.c_str());
    for (const auto& e : doc.reports) {
        const auto name = std::string(modality_name(e.report.modality));
        if (e.repeat) {
            std::printf("%-7s top-1 %.3f +- %.3f  top-5 %.3f +- %.3f  (%zu runs)\n", name.c_str(), e.repeat->top1_mean,
                        e.repeat->top1_std, e.repeat->top5_mean, e.repeat->top5_std, e.repeat->repeats);
        } else {
            std::printf("%-7s top-1 %.3f  top-5 %.3f\n", name.c_str(), e.report.top1, e.report.top5);
        }
    }
    return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& axis_text) {
    const auto start = std::chrono::steady_clock::now();
    const auto cfg = resolve_config(args);
    const auto hash = config_hash(cfg);
    const auto axis = parse_axis(axis_text);
    const auto rows = run_ablate(cfg, load_dataset(cfg), axis, args.threads);
    ReportDocument doc;
    doc.config_hash = hash;
    doc.seed = cfg.train.seed;
    doc.ablation_axis = std::string(axis_name(axis));
    for (const auto& row : rows) {
        for (const auto& r : row.reports) {
            doc.reports.push_back({r, std::nullopt});
        }
    }
    if (args.timing) {
        doc.runtime_sec = seconds_since(start);
    }
    const auto stem = artifact_stem("ablation_" + axis_text, hash, cfg.train.seed);
    const auto path = write_report(args.out, stem, doc);
    write_text(fs::path(args.out) / (stem + ".csv"), ablation_csv(rows));
    std::printf("report %s\n", path.c_str());
    for (const auto& row : rows) {
        std::printf("%-10s fusion top-1 %.3f  image top-1 %.3f\n", row.name.c_str(), row.reports.back().top1,
                    row.reports.front().top1);
    }
    return 0;
}

int cmd_report(const CommonArgs& args, const std::string& checkpoint) {
    const auto cfg = resolve_config(args);
    const auto hash = config_hash(cfg);
    const auto data = prepare_data(load_dataset(cfg), cfg);
    auto ckpt = checkpoint_shell(cfg, data);
    read_checkpoint(checkpoint, ckpt, hash);
    ReportDocument doc;
    doc.config_hash = hash;
    doc.seed = cfg.train.seed;
    for (const auto& r : run_eval(cfg, data, ckpt)) {
        doc.reports.push_back({r, std::nullopt});
    }
    const auto path = write_report(args.out, artifact_stem("eval", hash, cfg.train.seed), doc);
    std::printf("%s\n", path.c_str());
    for (const auto& f : emit_figures(args.out, cfg, data, ckpt)) {
        std::printf("%s\n", f.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"neuroalign: brain-signal to multi-modal embedding alignment"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, eval_args, ablate_args, report_args;
    std::string train_checkpoint, resume, eval_checkpoint, report_checkpoint, axis;
    std::size_t repeat = 1;

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset directory");
    add_common(synth, synth_args);

    auto* train = app.add_subcommand("train", "Run the three training stages, then evaluate");
    add_common(train, train_args);
    train->add_option("--checkpoint", train_checkpoint, "Checkpoint path (default: in --out)");
    train->add_option("--resume", resume, "Continue from a checkpoint written by this config");

    auto* eval = app.add_subcommand("eval", "Retrieval reports from a checkpoint, or from fresh training runs");
    add_common(eval, eval_args);
    eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint to evaluate");
    eval->add_option("--repeat", repeat, "Train and evaluate this many seeds, reporting mean and std")
        ->check(CLI::PositiveNumber);

    auto* ablate = app.add_subcommand("ablate", "Train and evaluate every row of an ablation axis");
    add_common(ablate, ablate_args);
    ablate->add_option("--axis", axis, "module, band, region or encoder")
        ->required()
        ->check(CLI::IsMember({"module", "band", "region", "encoder"}));

    auto* report = app.add_subcommand("report", "Reports plus RSA heatmaps and saliency topographies");
    add_common(report, report_args);
    report->add_option("--checkpoint", report_checkpoint, "Checkpoint to analyse")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            return cmd_synth(synth_args);
        }
        if (train->parsed()) {
            return cmd_train(train_args, train_checkpoint, resume);
        }
        if (eval->parsed()) {
            return cmd_eval(eval_args, eval_checkpoint, repeat);
        }
        if (ablate->parsed()) {
            return cmd_ablate(ablate_args, axis);
        }
        if (report->parsed()) {
            return cmd_report(report_args, report_checkpoint);
        }
    } catch (const neuroalign::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const neuroalign::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
