// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "neuroalign/binary_io.hpp"
#include "neuroalign/error.hpp"
#include "neuroalign/foveation.hpp"
#include "neuroalign/random.hpp"

namespace neuroalign {

namespace {

constexpr char kTargetMagic[] = "NDTG";
constexpr std::uint32_t kTargetVersion = 1;

// Stream ids for derive_seed, one per independent part of the generator.
enum Stream : std::uint64_t {
    kPrototypes = 1,
    kMixing = 2,
    kImageBasis = 3,
    kProjections = 4,
    kTrainNoise = 5,
    kTestNoise = 6,
};

void normalize(std::vector<double>& v) {
    double n = 0;
    for (double x : v) {
        n += x * x;
    }
    n = std::sqrt(n);
    if (n == 0) {
        v.assign(v.size(), 0.0);
        v[0] = 1.0;
        return;
    }
    for (double& x : v) {
        x /= n;
    }
}

struct Generator {
    const SynthConfig& cfg;
    std::vector<std::vector<double>> prototypes;
    std::vector<double> freqs;
    std::vector<double> mixing; // [C, K, L]
    std::vector<double> phases; // [C, K]
    std::vector<double> basis;  // [L, 5]: fx, fy, phase, unused, unused
    std::array<std::vector<double>, 3> projections; // [d, L] for text, depth, edge
    StubEncoder stub;

    explicit Generator(const SynthConfig& c)
        : cfg(c), prototypes(synth_prototypes(c)), freqs(synth_frequencies(c.sample_rate_hz)),
          stub(c.stub_seed, c.target_dim) {
        const auto C = cfg.channels, K = freqs.size(), L = cfg.latent_dim;
        Rng mix(derive_seed(cfg.seed, kMixing));
        mixing.resize(C * K * L);
        for (auto& w : mixing) {
            w = mix.normal();
        }
        phases.resize(C * K);
        for (auto& p : phases) {
            p = mix.uniform(0, 2 * std::numbers::pi);
        }
        Rng img(derive_seed(cfg.seed, kImageBasis));
        basis.resize(L * 3);
        for (std::size_t l = 0; l < L; ++l) {
            basis[l * 3 + 0] = img.uniform(-3, 3);
            basis[l * 3 + 1] = img.uniform(-3, 3);
            basis[l * 3 + 2] = img.uniform(0, 2 * std::numbers::pi);
        }
        Rng proj(derive_seed(cfg.seed, kProjections));
        for (auto& g : projections) {
            g.resize(cfg.target_dim * L);
            for (auto& w : g) {
                w = proj.normal() / std::sqrt(static_cast<double>(L));
            }
        }
    }

    // One epoch [C, T] for prototype p.
    void epoch(const std::vector<double>& p, Rng& noise, std::vector<float>& out) const {
        const auto C = cfg.channels, T = cfg.timesteps, K = freqs.size(), L = cfg.latent_dim;
        const double inv_sqrt_l = 1.0 / std::sqrt(static_cast<double>(L));
        for (std::size_t c = 0; c < C; ++c) {
            std::vector<double> amp(K, 0.0);
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t l = 0; l < L; ++l) {
                    amp[k] += mixing[(c * K + k) * L + l] * p[l];
                }
                amp[k] *= inv_sqrt_l;
            }
            for (std::size_t t = 0; t < T; ++t) {
                const double time = static_cast<double>(t) / cfg.sample_rate_hz;
                double v = 0;
                for (std::size_t k = 0; k < K; ++k) {
                    v += amp[k] * std::sin(2 * std::numbers::pi * freqs[k] * time + phases[c * K + k]);
                }
                out.push_back(static_cast<float>(v + cfg.noise * noise.normal()));
            }
        }
    }

    ImageBuffer image(const std::vector<double>& p, Rng& noise) const {
        const auto S = cfg.image_size, L = cfg.latent_dim;
        const double inv_sqrt_l = 1.0 / std::sqrt(static_cast<double>(L));
        std::vector<float> px(S * S);
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
                double field = 0;
                for (std::size_t l = 0; l < L; ++l) {
                    const double arg = 2 * std::numbers::pi *
                                           (basis[l * 3] * static_cast<double>(x) + basis[l * 3 + 1] * static_cast<double>(y)) /
                                           static_cast<double>(S) +
                                       basis[l * 3 + 2];
                    field += p[l] * std::cos(arg);
                }
                const double v = 0.5 + 0.35 * std::tanh(field * inv_sqrt_l) + cfg.noise * noise.normal();
                px[y * S + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
        return ImageBuffer(S, S, 1, std::move(px));
    }

    ModalityBundle bundle(std::uint32_t label, Rng& noise) const {
        const auto& p = prototypes[label];
        ModalityBundle b;
        b.label = label;
        b.image = image(p, noise);
        b.targets[0] = stub.encode(*b.image);
        const auto L = cfg.latent_dim;
        for (std::size_t m = 0; m < 3; ++m) {
            std::vector<double> v(cfg.target_dim);
            for (std::size_t i = 0; i < cfg.target_dim; ++i) {
                double acc = 0;
                for (std::size_t l = 0; l < L; ++l) {
                    acc += projections[m][i * L + l] * p[l];
                }
                v[i] = acc + cfg.noise * noise.normal();
            }
            normalize(v);
            b.targets[m + 1].assign(v.begin(), v.end());
        }
        return b;
    }
};

std::vector<std::string> channel_labels(const SynthConfig& cfg) {
    if (cfg.montage == Montage::ten_twenty) {
        return ten_twenty_names(cfg.channels);
    }
    std::vector<std::string> names;
    for (std::size_t c = 0; c < cfg.channels; ++c) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "ch%02zu", c);
        names.emplace_back(buf);
    }
    return names;
}

} // namespace

void SynthConfig::validate() const {
    if (n_classes < 2) {
        throw ContractError("synthetic data needs at least 2 classes");
    }
    if (per_class == 0 || test_repetitions == 0 || channels == 0 || timesteps == 0 || target_dim == 0 ||
        latent_dim == 0) {
        throw ContractError("synthetic dataset dimensions must be positive");
    }
    if (image_size < 2) {
        throw ContractError("synthetic images must be at least 2x2");
    }
    if (!(class_separation >= 0) || !(noise >= 0) || !(sample_rate_hz > 0)) {
        throw ContractError("class_separation and noise must be non-negative, sample rate positive");
    }
}

std::vector<double> synth_frequencies(double sample_rate_hz) {
    std::vector<double> out;
    for (double f : {2.0, 6.0, 10.0, 20.0, 70.0}) {
        if (f < sample_rate_hz / 2) {
            out.push_back(f);
        }
    }
    if (out.empty()) {
        out.push_back(sample_rate_hz / 4);
    }
    return out;
}

std::vector<std::vector<double>> synth_prototypes(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, kPrototypes));
    std::vector<std::vector<double>> out(cfg.n_classes, std::vector<double>(cfg.latent_dim));
    for (auto& p : out) {
        for (auto& v : p) {
            v = cfg.class_separation * rng.normal();
        }
    }
    return out;
}

Dataset synth_dataset(const SynthConfig& cfg) {
    cfg.validate();
    const Generator gen(cfg);
    Dataset data;
    data.sample_rate_hz = cfg.sample_rate_hz;
    data.stub_seed = cfg.stub_seed;
    const auto names = channel_labels(cfg);
    const auto C = cfg.channels, T = cfg.timesteps;

    Rng train_noise(derive_seed(cfg.seed, kTrainNoise));
    std::vector<float> values;
    values.reserve(cfg.n_classes * cfg.per_class * C * T);
    std::uint32_t id = 0;
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        for (std::size_t r = 0; r < cfg.per_class; ++r) {
            const auto label = static_cast<std::uint32_t>(c);
            data.train.bundles.push_back(gen.bundle(label, train_noise));
            gen.epoch(gen.prototypes[c], train_noise, values);
            data.train.epochs.labels.push_back(label);
            data.train.epochs.sample_ids.push_back(id);
            data.train.stimulus_of_epoch.push_back(id);
            ++id;
        }
    }
    data.train.epochs.signals = Tensor({static_cast<std::size_t>(id), C, T}, std::move(values));
    data.train.epochs.channel_names = names;

    Rng test_noise(derive_seed(cfg.seed, kTestNoise));
    std::vector<float> test_values;
    std::uint32_t test_id = 0;
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        const auto label = static_cast<std::uint32_t>(c);
        data.test.bundles.push_back(gen.bundle(label, test_noise));
        for (std::size_t r = 0; r < cfg.test_repetitions; ++r) {
            gen.epoch(gen.prototypes[c], test_noise, test_values);
            data.test.epochs.labels.push_back(label);
            data.test.epochs.sample_ids.push_back(test_id++);
            data.test.stimulus_of_epoch.push_back(c);
        }
    }
    data.test.epochs.signals = Tensor({static_cast<std::size_t>(test_id), C, T}, std::move(test_values));
    data.test.epochs.channel_names = names;
    data.validate();
    return data;
}

void Split::validate() const {
    epochs.validate();
    if (stimulus_of_epoch.size() != epochs.batch_size()) {
        throw ShapeError("one stimulus index per epoch required");
    }
    if (bundles.empty()) {
        throw ContractError("split has no stimuli");
    }
    const auto d = bundles.front().dim();
    for (const auto& b : bundles) {
        for (const auto& t : b.targets) {
            if (t.size() != d || d == 0) {
                throw ShapeError("all target embeddings must share one positive dimension");
            }
            for (float v : t) {
                if (!std::isfinite(v)) {
                    throw NumericalError("non-finite target embedding");
                }
            }
        }
    }
    for (std::size_t i = 0; i < stimulus_of_epoch.size(); ++i) {
        if (stimulus_of_epoch[i] >= bundles.size()) {
            throw ContractError("stimulus index out of range");
        }
        if (bundles[stimulus_of_epoch[i]].label != epochs.labels[i]) {
            throw ContractError("epoch label disagrees with its stimulus label");
        }
    }
}

void Dataset::validate() const {
    train.validate();
    test.validate();
    if (train.epochs.channels() != test.epochs.channels() || train.epochs.timesteps() != test.epochs.timesteps()) {
        throw ShapeError("train and test epochs disagree on C or T");
    }
    if (train.bundles.front().dim() != test.bundles.front().dim()) {
        throw ShapeError("train and test targets disagree on dimension");
    }
}

QuerySet averaged_queries(const Split& split) {
    const auto groups = group_by_label(split.epochs);
    QuerySet q;
    q.epochs = average_repetitions(groups);
    std::map<std::uint32_t, std::size_t> stimulus_by_label;
    for (std::size_t i = 0; i < split.epochs.batch_size(); ++i) {
        stimulus_by_label.emplace(split.epochs.labels[i], split.stimulus_of_epoch[i]);
    }
    for (auto label : q.epochs.labels) {
        q.stimulus.push_back(stimulus_by_label.at(label));
    }
    return q;
}

namespace {

void write_targets(const std::filesystem::path& path, const std::vector<ModalityBundle>& bundles,
                   const std::vector<std::size_t>& stimulus_of_epoch) {
    ByteWriter w;
    w.put_raw(std::string_view(kTargetMagic, 4));
    w.put_u32(kTargetVersion);
    w.put_u32(static_cast<std::uint32_t>(bundles.size()));
    w.put_u32(4);
    w.put_u32(static_cast<std::uint32_t>(bundles.front().dim()));
    for (const auto& b : bundles) {
        w.put_u32(b.label);
        for (const auto& t : b.targets) {
            for (float v : t) {
                w.put_f32(v);
            }
        }
    }
    w.put_u32(static_cast<std::uint32_t>(stimulus_of_epoch.size()));
    for (auto s : stimulus_of_epoch) {
        w.put_u32(static_cast<std::uint32_t>(s));
    }
    write_file_bytes(path, w.bytes());
}

void read_targets(const std::filesystem::path& path, Split& split) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() >= 4 && std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != kTargetMagic) {
        throw BadMagicError("'" + path.string() + "' is not a target embedding file");
    }
    ByteReader r(bytes);
    r.get_raw(4);
    if (const auto v = r.get_u32(); v != kTargetVersion) {
        throw VersionMismatchError("target file version " + std::to_string(v) + " is not supported");
    }
    const std::size_t n = r.get_u32();
    const std::size_t m = r.get_u32();
    const std::size_t d = r.get_u32();
    if (m != 4 || d == 0 || n == 0) {
        throw FormatError("target file must hold four modalities of positive width");
    }
    split.bundles.resize(n);
    for (auto& b : split.bundles) {
        b.label = r.get_u32();
        for (auto& t : b.targets) {
            t.resize(d);
            for (auto& v : t) {
                v = r.get_f32();
            }
        }
    }
    split.stimulus_of_epoch.resize(r.get_u32());
    for (auto& s : split.stimulus_of_epoch) {
        s = r.get_u32();
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes in '" + path.string() + "'");
    }
}

std::string image_name(const std::string& split, std::size_t i, std::size_t channels) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%05zu.%s", split.c_str(), i, channels == 1 ? "pgm" : "ppm");
    return buf;
}

} // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
    data.validate();
    std::filesystem::create_directories(dir / "images");
    {
        std::ofstream meta(dir / "dataset.ini");
        meta.precision(17);
        meta << "sample_rate_hz=" << data.sample_rate_hz << "\n";
        meta << "stub_seed=" << data.stub_seed << "\n";
        if (!meta) {
            throw IoError("cannot write '" + (dir / "dataset.ini").string() + "'");
        }
    }
    for (const auto& [name, split] : {std::pair<std::string, const Split*>{"train", &data.train}, {"test", &data.test}}) {
        write_epochs(dir / (name + ".ndec"), split->epochs);
        write_targets(dir / (name + ".ndtg"), split->bundles, split->stimulus_of_epoch);
        for (std::size_t i = 0; i < split->bundles.size(); ++i) {
            if (split->bundles[i].image) {
                write_pnm(dir / "images" / image_name(name, i, split->bundles[i].image->channels),
                          *split->bundles[i].image);
            }
        }
    }
}

Dataset read_dataset(const std::filesystem::path& dir) {
    Dataset data;
    std::ifstream meta(dir / "dataset.ini");
    if (!meta) {
        throw IoError("cannot open '" + (dir / "dataset.ini").string() + "'");
    }
    std::string line;
    while (std::getline(meta, line)) {
        const auto eq = line.find('=');
        if (line.empty() || eq == std::string::npos) {
            continue;
        }
        const auto key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "sample_rate_hz") {
            data.sample_rate_hz = std::stod(value);
        } else if (key == "stub_seed") {
            data.stub_seed = std::stoull(value);
        } else {
            throw FormatError("unknown key '" + key + "' in dataset.ini");
        }
    }
    for (const auto& [name, split] : {std::pair<std::string, Split*>{"train", &data.train}, {"test", &data.test}}) {
        split->epochs = read_epochs(dir / (name + ".ndec"));
        read_targets(dir / (name + ".ndtg"), *split);
        for (std::size_t i = 0; i < split->bundles.size(); ++i) {
            for (std::size_t ch : {1u, 3u}) {
                const auto path = dir / "images" / image_name(name, i, ch);
                if (std::filesystem::exists(path)) {
                    split->bundles[i].image = read_pnm(path);
                }
            }
        }
    }
    data.validate();
    return data;
}

} // namespace neuroalign
