// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "neuroalign/binary_io.hpp"
#include "neuroalign/error.hpp"
#include "neuroalign/pipeline.hpp"
#include "neuroalign/report.hpp"
#include "test_support.hpp"

using namespace neuroalign;
using namespace neuroalign::testing;

namespace {

RunConfig tiny_config() {
    return parse_config(R"(
[data]
classes = 6
per_class = 4
test_repetitions = 2
channels = 8
timesteps = 32
target_dim = 16
image_size = 16
[model]
fusion_dim = 16
fusion_heads = 2
sth_dim = 16
sth_blocks = 2
[train]
epochs = 3
lr = 1e-3
)");
}

std::vector<float> flat(const Tensor& t) {
    const auto v = t.values();
    return {v.begin(), v.end()};
}

std::vector<std::vector<float>> snapshot(const ParamList<float>& params) {
    std::vector<std::vector<float>> out;
    for (const auto& p : params) {
        out.push_back(flat(p.tensor));
    }
    return out;
}

ParamList<float> with_prefix(const ParamList<float>& params, const std::string& prefix) {
    ParamList<float> out;
    for (const auto& p : params) {
        if (p.name.rfind(prefix, 0) == 0) {
            out.push_back(p);
        }
    }
    return out;
}

struct Run {
    PreparedData data;
    TrainResult result;
};

Run train(const RunConfig& cfg, TrainOptions options = {}) {
    Run run{prepare_data(load_dataset(cfg), cfg), {}};
    run.result = run_train(cfg, run.data, options);
    return run;
}

double mean_cosine(const Tensor& a, const Tensor& b) {
    const auto d = a.dim(1);
    const auto av = a.values(), bv = b.values();
    double total = 0;
    for (std::size_t i = 0; i < a.dim(0); ++i) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t k = 0; k < d; ++k) {
            dot += double(av[i * d + k]) * bv[i * d + k];
            na += double(av[i * d + k]) * av[i * d + k];
            nb += double(bv[i * d + k]) * bv[i * d + k];
        }
        total += dot / std::sqrt(na * nb);
    }
    return total / double(a.dim(0));
}

} // namespace

TEST_CASE("training is deterministic for a seed", "[pipeline]") {
    const auto cfg = tiny_config();
    const auto a = train(cfg);
    const auto b = train(cfg);
    CHECK(checkpoint_digest(a.result.checkpoint) == checkpoint_digest(b.result.checkpoint));
    const auto ra = run_eval(cfg, a.data, a.result.checkpoint);
    const auto rb = run_eval(cfg, b.data, b.result.checkpoint);
    REQUIRE(ra.size() == rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) {
        CHECK(ra[i].top1 == rb[i].top1);
        CHECK(ra[i].ranks == rb[i].ranks);
    }
    auto other = cfg;
    other.train.seed += 1;
    CHECK(checkpoint_digest(train(other).result.checkpoint) != checkpoint_digest(a.result.checkpoint));
}

TEST_CASE("thread count and branch schedule do not change the result", "[pipeline]") {
    const auto cfg = tiny_config();
    const auto serial = train(cfg);
    TrainOptions threaded;
    threaded.threads = 4;
    const auto parallel = train(cfg, threaded);
    CHECK(checkpoint_digest(serial.result.checkpoint) == checkpoint_digest(parallel.result.checkpoint));

    auto interleaved = cfg;
    interleaved.train.interleave = true;
    const auto inter = train(interleaved);
    CHECK(snapshot(inter.result.checkpoint.model.parameters()) == snapshot(serial.result.checkpoint.model.parameters()));
    CHECK(inter.result.checkpoint.bank == serial.result.checkpoint.bank);
}

TEST_CASE("log covers every unit and epoch budget", "[pipeline]") {
    auto cfg = tiny_config();
    cfg.train.epochs = 4;
    cfg.train.text_epochs = 2;
    cfg.fusion.epochs = 3;
    cfg.sth.epochs = 1;
    std::vector<EpochLog> streamed;
    TrainOptions options;
    options.on_epoch = [&](const EpochLog& e) { streamed.push_back(e); };
    const auto run = train(cfg, options);
    std::map<std::string, std::size_t> epochs;
    for (const auto& e : run.result.log) {
        epochs[e.unit] = std::max(epochs[e.unit], e.epoch);
        CHECK(std::isfinite(e.loss));
        CHECK(e.monitor_top1 >= 0);
        CHECK(e.monitor_top1 <= 1);
    }
    CHECK(epochs["expert.image"] == 4);
    CHECK(epochs["expert.text"] == 2);
    CHECK(epochs["expert.depth"] == 4);
    CHECK(epochs["expert.edge"] == 4);
    CHECK(epochs["fusion"] == 3);
    CHECK(epochs["sth"] == 1);
    CHECK(streamed.size() == run.result.log.size());
    CHECK(run.result.checkpoint.epochs_run == run.result.log.size());
    CHECK(run.result.checkpoint.stage == Stage::sth);
}

TEST_CASE("later stages leave stage-1 parameters untouched", "[pipeline]") {
    const auto cfg = tiny_config();
    TrainOptions first;
    first.stop_after = Stage::experts;
    auto run = train(cfg, first);
    REQUIRE(run.result.checkpoint.stage == Stage::experts);
    const auto experts = snapshot(with_prefix(run.result.checkpoint.model.parameters(), "expert."));
    const auto fusion_before = snapshot(with_prefix(run.result.checkpoint.model.parameters(), "fusion"));
    const auto bank = run.result.checkpoint.bank;

    TrainOptions rest;
    rest.resume = run.result.checkpoint;
    const auto finished = run_train(cfg, run.data, rest);
    CHECK(finished.checkpoint.stage == Stage::sth);
    CHECK(snapshot(with_prefix(finished.checkpoint.model.parameters(), "expert.")) == experts);
    CHECK(snapshot(with_prefix(finished.checkpoint.model.parameters(), "fusion")) != fusion_before);
    CHECK(finished.checkpoint.bank == bank);
    // the resumed run never touched the checkpoint it started from
    CHECK(snapshot(with_prefix(run.result.checkpoint.model.parameters(), "fusion")) == fusion_before);

    // resuming stage by stage gives the same bytes as one uninterrupted run
    const auto whole = run_train(cfg, run.data);
    CHECK(checkpoint_digest(whole.checkpoint) == checkpoint_digest(finished.checkpoint));
}

TEST_CASE("the blur curriculum changes the image branch only", "[pipeline]") {
    auto on = tiny_config();
    auto off = on;
    off.um.enabled = false;
    const auto a = train(on);
    const auto b = train(off);
    CHECK(checkpoint_digest(a.result.checkpoint) != checkpoint_digest(b.result.checkpoint));
    const auto pa = a.result.checkpoint.model.parameters();
    const auto pb = b.result.checkpoint.model.parameters();
    CHECK(snapshot(with_prefix(pa, "expert.image")) != snapshot(with_prefix(pb, "expert.image")));
    CHECK(snapshot(with_prefix(pa, "expert.text")) == snapshot(with_prefix(pb, "expert.text")));
    CHECK(snapshot(with_prefix(pa, "expert.edge")) == snapshot(with_prefix(pb, "expert.edge")));
    // every training sample received a score
    for (auto f : a.result.checkpoint.bank.flags()) {
        CHECK(f == 1);
    }
    for (auto f : b.result.checkpoint.bank.flags()) {
        CHECK(f == 0);
    }
}

TEST_CASE("checkpoint round trip and refusal", "[pipeline]") {
    const auto cfg = tiny_config();
    const auto dir = scratch_dir("pipeline_ckpt");
    TrainOptions options;
    options.checkpoint_path = dir / "run.nckp";
    const auto run = train(cfg, options);
    const auto& ckpt = run.result.checkpoint;

    Checkpoint back;
    back.model = init_model(cfg, run.data.train.epochs.channels(), run.data.train.epochs.timesteps(),
                            run.data.target_dim());
    read_checkpoint(dir / "run.nckp", back, config_hash(cfg));
    CHECK(checkpoint_digest(back) == checkpoint_digest(ckpt));
    CHECK(snapshot(back.model.parameters()) == snapshot(ckpt.model.parameters()));
    CHECK(back.bank == ckpt.bank);
    CHECK(back.optimizer_steps == ckpt.optimizer_steps);
    CHECK(back.stage == Stage::sth);
    CHECK(back.seed == cfg.train.seed);

    // written bytes are exactly the serialized checkpoint
    CHECK(sha256_hex(read_file_bytes(dir / "run.nckp")) == checkpoint_digest(ckpt));

    auto changed = cfg;
    changed.loss.tau = 0.2;
    Checkpoint refused = back;
    CHECK_THROWS_AS(read_checkpoint(dir / "run.nckp", refused, config_hash(changed)), ConfigHashMismatchError);
    CHECK_THROWS_AS(run_eval(changed, run.data, ckpt), ConfigHashMismatchError);
    TrainOptions resume;
    resume.resume = ckpt;
    CHECK_THROWS_AS(run_train(changed, run.data, resume), ConfigHashMismatchError);

    auto bytes = read_file_bytes(dir / "run.nckp");
    write_file_bytes(dir / "short.nckp", std::span(bytes).first(bytes.size() - 3));
    CHECK_THROWS_AS(read_checkpoint(dir / "short.nckp", refused), TruncatedError);
    bytes[1] = 'X';
    write_file_bytes(dir / "bad.nckp", bytes);
    CHECK_THROWS_AS(read_checkpoint(dir / "bad.nckp", refused), BadMagicError);
}

TEST_CASE("divergence aborts with the last completed stage on disk", "[pipeline]") {
    auto cfg = tiny_config();
    cfg.train.optim.lr = 1e30;
    cfg.train.optim.weight_decay = 0;
    const auto dir = scratch_dir("pipeline_diverge");
    TrainOptions options;
    options.checkpoint_path = dir / "run.nckp";
    const auto data = prepare_data(load_dataset(cfg), cfg);
    CHECK_THROWS_AS(run_train(cfg, data, options), NumericalError);
    // no stage completed, so nothing was written
    CHECK_FALSE(std::filesystem::exists(dir / "run.nckp"));
}

TEST_CASE("evaluation emits image, text, depth, edge and fusion reports", "[pipeline]") {
    const auto cfg = tiny_config();
    const auto run = train(cfg);
    const auto reports = run_eval(cfg, run.data, run.result.checkpoint);
    REQUIRE(reports.size() == 5);
    const ModalityId order[] = {ModalityId::image, ModalityId::text, ModalityId::depth, ModalityId::edge,
                                ModalityId::fusion};
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(reports[i].modality == order[i]);
        CHECK(reports[i].top1 <= reports[i].top5);
        CHECK(reports[i].n_queries == 6);
        CHECK(reports[i].n_gallery == 6);
        CHECK(reports[i].config_hash == config_hash(cfg));
        CHECK(reports[i].tags.at("band") == "all");
    }

    TrainOptions partial;
    partial.stop_after = Stage::fusion;
    const auto half = run_train(cfg, run.data, partial);
    CHECK_THROWS_AS(run_eval(cfg, run.data, half.checkpoint), ContractError);
}

TEST_CASE("stage-1 loss falls on a separable set", "[pipeline]") {
    auto cfg = tiny_config();
    cfg.data.synth.n_classes = 20;
    cfg.data.synth.per_class = 10;
    cfg.train.epochs = 30;
    TrainOptions options;
    options.stop_after = Stage::experts;
    const auto run = train(cfg, options);
    std::map<std::string, std::pair<double, double>> first_last;
    for (const auto& e : run.result.log) {
        auto& fl = first_last[e.unit];
        if (e.epoch == 1) {
            fl.first = e.loss;
        }
        fl.second = e.loss;
    }
    for (const auto& [unit, fl] : first_last) {
        INFO(unit << " initial " << fl.first << " final " << fl.second);
        CHECK(fl.second <= 0.5 * fl.first);
    }
}

TEST_CASE("alignment training raises cosine agreement with the targets", "[pipeline]") {
    auto cfg = tiny_config();
    cfg.train.epochs = 10;
    TrainOptions upto_fusion;
    upto_fusion.stop_after = Stage::fusion;
    auto run = train(cfg, upto_fusion);
    const auto z = expert_embeddings(run.result.checkpoint.model, run.data.train.epochs.signals);
    std::vector<std::size_t> rows(run.data.train.epochs.batch_size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::array<double, 4> before{}, after{};
    auto targets = [&](std::size_t slot) {
        std::vector<float> v;
        for (auto r : rows) {
            const auto& t = run.data.train.bundles[run.data.train.stimulus_of_epoch[r]].targets[slot];
            v.insert(v.end(), t.begin(), t.end());
        }
        return Tensor({rows.size(), run.data.target_dim()}, v);
    };
    for (auto m : kExpertModalities) {
        const auto slot = modality_index(m);
        before[slot] = mean_cosine(sth_infer(z, run.result.checkpoint.model.sth, m), targets(slot));
    }
    TrainOptions rest;
    rest.resume = run.result.checkpoint;
    const auto done = run_train(cfg, run.data, rest);
    for (auto m : kExpertModalities) {
        const auto slot = modality_index(m);
        after[slot] = mean_cosine(sth_infer(z, done.checkpoint.model.sth, m), targets(slot));
        INFO(modality_name(m) << " before " << before[slot] << " after " << after[slot]);
        CHECK(after[slot] >= before[slot] + 0.05);
    }
}

TEST_CASE("module ablation rows differ by one toggle each", "[pipeline][ablate]") {
    const auto base = tiny_config();
    const auto rows = ablation_configs(base, AblationAxis::module);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].first == "baseline");
    CHECK(rows[1].first == "+UM");
    CHECK(rows[2].first == "+Loss");
    CHECK(rows[3].first == "+Mask");
    CHECK_FALSE(rows[0].second.um.enabled);
    CHECK(rows[0].second.loss.kind == ContrastiveKind::infonce);
    CHECK_FALSE(rows[0].second.fusion.modality_mask);
    CHECK(rows[3].second.um.enabled);
    CHECK(rows[3].second.loss.kind == ContrastiveKind::scm);
    CHECK(rows[3].second.fusion.modality_mask);
    auto lines = [](const RunConfig& c) {
        std::set<std::string> out;
        std::istringstream in(canonical_config(c));
        for (std::string line; std::getline(in, line);) {
            out.insert(line);
        }
        return out;
    };
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto a = lines(rows[i - 1].second), b = lines(rows[i].second);
        std::size_t changed = 0;
        for (const auto& l : b) {
            changed += a.count(l) == 0;
        }
        CHECK(changed == 1);
    }
    CHECK(ablation_configs(base, AblationAxis::band).size() == 6);
    CHECK(ablation_configs(base, AblationAxis::region).size() == 6);
    CHECK(ablation_configs(base, AblationAxis::encoder).size() == 4);
    CHECK(parse_axis("band") == AblationAxis::band);
    CHECK_THROWS_AS(parse_axis("time"), ConfigError);
}

TEST_CASE("region axis needs labelled channels", "[pipeline][ablate]") {
    auto cfg = tiny_config();
    CHECK_THROWS_AS(run_ablate(cfg, load_dataset(cfg), AblationAxis::region), UnsupportedAxisError);
    cfg.ablate.region = Region::occipital;
    CHECK_THROWS_AS(prepare_data(load_dataset(cfg), cfg), UnsupportedAxisError);

    cfg.data.synth.montage = Montage::ten_twenty;
    cfg.data.synth.channels = 32;
    const auto data = prepare_data(load_dataset(cfg), cfg);
    CHECK(data.train.epochs.channels() < 32);
    for (const auto& name : data.train.epochs.channel_names) {
        Region r;
        REQUIRE(channel_region(name, r));
        CHECK(r == Region::occipital);
    }
}

TEST_CASE("band and encoder axes run end to end", "[pipeline][ablate]") {
    auto cfg = tiny_config();
    cfg.train.epochs = 1;
    cfg.data.synth.timesteps = 64; // 3.9 Hz bins, so every band holds one
    const auto data = load_dataset(cfg);
    const auto bands = run_ablate(cfg, data, AblationAxis::band);
    REQUIRE(bands.size() == 6);
    CHECK(bands[0].reports.front().tags.at("band") == "delta");
    CHECK(bands[5].reports.front().tags.at("band") == "all");
    const auto encoders = run_ablate(cfg, data, AblationAxis::encoder);
    REQUIRE(encoders.size() == 4);
    for (const auto& row : encoders) {
        CHECK(row.reports.size() == 5);
        CHECK(row.reports.front().tags.at("encoder") == row.name);
    }
    const auto csv = ablation_csv(encoders);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4 * 5);
}

TEST_CASE("report JSON round trip, validation and determinism", "[report]") {
    const auto cfg = tiny_config();
    const auto run = train(cfg);
    ReportDocument doc;
    doc.config_hash = config_hash(cfg);
    doc.seed = cfg.train.seed;
    for (const auto& r : run_eval(cfg, run.data, run.result.checkpoint)) {
        doc.reports.push_back({r, std::nullopt});
    }
    const auto text = report_json(doc);
    CHECK_NOTHROW(validate_report_json(text));
    const auto back = parse_report_json(text);
    CHECK(report_json(back) == text);
    CHECK(text.find("\"runtime_sec\": null") != std::string::npos);
    CHECK(text.find("ablation_axis") == std::string::npos);

    const auto dir = scratch_dir("report_json") / "nested" / "out";
    const auto path = write_report(dir, artifact_stem("eval", doc.config_hash, doc.seed), doc);
    CHECK(path.filename().string() == "eval_" + doc.config_hash.substr(0, 12) + "_s7.json");
    const auto again = train(cfg);
    ReportDocument doc2 = doc;
    doc2.reports.clear();
    for (const auto& r : run_eval(cfg, again.data, again.result.checkpoint)) {
        doc2.reports.push_back({r, std::nullopt});
    }
    CHECK(report_json(doc2) == text);

    auto broken = [&](const std::string& from, const std::string& to) {
        auto t = text;
        const auto at = t.find(from);
        REQUIRE(at != std::string::npos);
        t.replace(at, from.size(), to);
        return t;
    };
    CHECK_THROWS_AS(validate_report_json(broken("\"schema_version\": 1", "\"schema_version\": 2")),
                    VersionMismatchError);
    CHECK_THROWS_AS(validate_report_json(broken("\"modality\": \"image\"", "\"modality\": \"smell\"")), FormatError);
    CHECK_THROWS_AS(validate_report_json(broken("\"runtime_sec\": null", "\"runtime\": null")), FormatError);
    CHECK_THROWS_AS(validate_report_json(broken("\"n_queries\": 6", "\"n_queries\": 7")), FormatError);
    CHECK_THROWS_AS(validate_report_json("{"), FormatError);
}

TEST_CASE("repeat summaries", "[report]") {
    RetrievalReport a;
    a.n_queries = 2;
    a.n_gallery = 5;
    a.ranks = {1, 2};
    a.per_class_queries = {1, 1, 0, 0, 0};
    a.per_class_hits = {1, 0, 0, 0, 0};
    a.top1 = 0.5;
    a.top5 = 1.0;
    RetrievalReport b = a;
    b.ranks = {1, 1};
    b.per_class_hits = {1, 1, 0, 0, 0};
    b.top1 = 1.0;
    const auto entries = summarize_repeats({{a}, {b}}, {7, 8});
    REQUIRE(entries.size() == 1);
    REQUIRE(entries[0].repeat.has_value());
    CHECK(entries[0].repeat->top1_mean == Catch::Approx(0.75));
    CHECK(entries[0].repeat->top1_std == Catch::Approx(0.25));
    CHECK(entries[0].repeat->top5_std == 0);
    ReportDocument doc;
    doc.config_hash = "abc";
    doc.reports = entries;
    doc.runtime_sec = 1.5;
    doc.ablation_axis = "module";
    const auto back = parse_report_json(report_json(doc));
    CHECK(back.reports[0].repeat->seeds == std::vector<std::uint64_t>{7, 8});
    CHECK(*back.runtime_sec == 1.5);
    CHECK(summarize_repeats({{a}}, {7})[0].repeat == std::nullopt);
}

TEST_CASE("figures are written as PGM and CSV", "[report]") {
    const auto cfg = tiny_config();
    const auto run = train(cfg);
    const auto dir = scratch_dir("report_figures");
    const auto files = emit_figures(dir, cfg, run.data, run.result.checkpoint);
    CHECK(files.size() == 2 + 2 + 4 * 2);
    for (const auto& f : files) {
        REQUIRE(std::filesystem::exists(f));
        if (f.extension() == ".pgm") {
            CHECK_NOTHROW(read_pnm(f));
        }
    }
    const auto rsa = read_pnm(files[0]);
    CHECK(rsa.width == 6);
    // unit diagonal maps to white
    CHECK(rsa.at(0, 0) == 1.0f);
}
