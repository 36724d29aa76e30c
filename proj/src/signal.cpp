// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cctype>
#include <map>
#include <memory>
#include <mutex>
#include <unordered_set>

#include "neuroalign/binary_io.hpp"
#include "neuroalign/error.hpp"

namespace neuroalign {

namespace {

constexpr char kEpochMagic[] = "NDEC";
constexpr std::uint32_t kEpochVersion = 1;

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

struct PlanDeleter {
    void operator()(fftw_plan p) const {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(p);
    }
};
using PlanPtr = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter>;

struct FftwFree {
    void operator()(void* p) const { fftw_free(p); }
};

} // namespace

void EpochBatch::validate() const {
    if (signals.rank() != 3) {
        throw ShapeError("epoch signals must be [B, C, T], got " + shape_string(signals.shape()));
    }
    const auto b = batch_size();
    if (labels.size() != b || sample_ids.size() != b) {
        throw ShapeError("labels and sample_ids must have one entry per epoch");
    }
    if (channel_names.size() != channels()) {
        throw ShapeError("expected " + std::to_string(channels()) + " channel names, got " +
                         std::to_string(channel_names.size()));
    }
    std::unordered_set<std::uint32_t> seen(sample_ids.begin(), sample_ids.end());
    if (seen.size() != sample_ids.size()) {
        throw ContractError("sample_ids must be unique within a batch");
    }
}

EpochBatch EpochBatch::subset(const std::vector<std::size_t>& rows) const {
    if (rows.empty()) {
        throw ContractError("subset of zero epochs");
    }
    const std::size_t stride = channels() * timesteps();
    std::vector<float> values;
    values.reserve(rows.size() * stride);
    EpochBatch out;
    auto src = signals.values();
    for (auto r : rows) {
        if (r >= batch_size()) {
            throw ContractError("epoch index out of range");
        }
        values.insert(values.end(), src.begin() + r * stride, src.begin() + (r + 1) * stride);
        out.labels.push_back(labels[r]);
        out.sample_ids.push_back(sample_ids[r]);
    }
    out.signals = Tensor({rows.size(), channels(), timesteps()}, std::move(values));
    out.channel_names = channel_names;
    return out;
}

BandSpec BandSpec::named(Band band, double sample_rate_hz) {
    if (!(sample_rate_hz > 0)) {
        throw ContractError("sample rate must be positive");
    }
    BandSpec s;
    s.band = band;
    s.sample_rate_hz = sample_rate_hz;
    switch (band) {
    case Band::delta: s.lo_hz = 0; s.hi_hz = 4; break;
    case Band::theta: s.lo_hz = 4; s.hi_hz = 8; break;
    case Band::alpha: s.lo_hz = 8; s.hi_hz = 13; break;
    case Band::beta: s.lo_hz = 13; s.hi_hz = 30; break;
    case Band::gamma: s.lo_hz = 50; s.hi_hz = 100; break;
    case Band::all: s.lo_hz = 0; s.hi_hz = sample_rate_hz / 2; break;
    }
    return s;
}

std::string_view band_name(Band band) {
    switch (band) {
    case Band::delta: return "delta";
    case Band::theta: return "theta";
    case Band::alpha: return "alpha";
    case Band::beta: return "beta";
    case Band::gamma: return "gamma";
    case Band::all: return "all";
    }
    return "?";
}

Band parse_band(std::string_view name) {
    for (auto b : kAllBands) {
        if (band_name(b) == name) {
            return b;
        }
    }
    throw ConfigError("unknown band '" + std::string(name) + "'");
}

std::string_view region_name(Region region) {
    switch (region) {
    case Region::frontal: return "frontal";
    case Region::temporal: return "temporal";
    case Region::central: return "central";
    case Region::parietal: return "parietal";
    case Region::occipital: return "occipital";
    case Region::all: return "all";
    }
    return "?";
}

Region parse_region(std::string_view name) {
    for (auto r : kAllRegions) {
        if (region_name(r) == name) {
            return r;
        }
    }
    throw ConfigError("unknown region '" + std::string(name) + "'");
}

bool channel_region(std::string_view channel, Region& region) {
    // Letter prefix, then a digit or a midline 'z'; "_n" suffixes allowed.
    std::size_t n = 0;
    while (n < channel.size() && std::isalpha(static_cast<unsigned char>(channel[n]))) {
        ++n;
    }
    std::string prefix;
    for (std::size_t i = 0; i < n; ++i) {
        prefix.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(channel[i]))));
    }
    const bool digit_next = n < channel.size() && std::isdigit(static_cast<unsigned char>(channel[n]));
    if (!digit_next) {
        if (prefix.size() < 2 || prefix.back() != 'Z' || (n < channel.size() && channel[n] != '_')) {
            return false;
        }
        prefix.pop_back();
    }
    static const char* const known[] = {"FP", "AF", "F", "FC", "FT", "C", "CP", "T", "TP", "P", "PO", "O"};
    if (std::find(std::begin(known), std::end(known), prefix) == std::end(known)) {
        return false;
    }
    switch (prefix.front()) {
    case 'A':
    case 'F': region = Region::frontal; return true;
    case 'T': region = Region::temporal; return true;
    case 'C': region = Region::central; return true;
    case 'P': region = Region::parietal; return true;
    case 'O': region = Region::occipital; return true;
    default: return false;
    }
}

EpochBatch average_repetitions(const std::vector<EpochBatch>& groups) {
    if (groups.empty()) {
        throw ContractError("average_repetitions: no groups");
    }
    const auto c = groups.front().channels();
    const auto t = groups.front().timesteps();
    std::vector<float> values;
    values.reserve(groups.size() * c * t);
    EpochBatch out;
    out.channel_names = groups.front().channel_names;
    for (const auto& g : groups) {
        if (g.signals.rank() != 3 || g.batch_size() == 0) {
            throw ContractError("average_repetitions: empty group");
        }
        if (g.channels() != c || g.timesteps() != t) {
            throw ShapeError("average_repetitions: groups disagree on C or T");
        }
        std::vector<double> acc(c * t, 0.0);
        auto src = g.signals.values();
        for (std::size_t r = 0; r < g.batch_size(); ++r) {
            for (std::size_t i = 0; i < c * t; ++i) {
                acc[i] += src[r * c * t + i];
            }
        }
        const double n = static_cast<double>(g.batch_size());
        for (double a : acc) {
            values.push_back(static_cast<float>(a / n));
        }
        out.labels.push_back(g.labels.front());
        out.sample_ids.push_back(g.sample_ids.front());
    }
    out.signals = Tensor({groups.size(), c, t}, std::move(values));
    return out;
}

std::vector<EpochBatch> group_by_label(const EpochBatch& batch) {
    std::map<std::uint32_t, std::vector<std::size_t>> rows;
    for (std::size_t i = 0; i < batch.batch_size(); ++i) {
        rows[batch.labels[i]].push_back(i);
    }
    std::vector<EpochBatch> out;
    for (const auto& [label, idx] : rows) {
        out.push_back(batch.subset(idx));
    }
    return out;
}

EpochBatch bandpass_filter(const EpochBatch& batch, const BandSpec& band) {
    const double nyquist = band.sample_rate_hz / 2;
    if (!(band.sample_rate_hz > 0) || band.lo_hz < 0 || !(band.lo_hz < band.hi_hz)) {
        throw ContractError("invalid band [" + std::to_string(band.lo_hz) + ", " + std::to_string(band.hi_hz) + "]");
    }
    if (band.hi_hz > nyquist * (1 + 1e-12)) {
        throw ContractError("band " + std::string(band_name(band.band)) + " extends above the Nyquist frequency " +
                            std::to_string(nyquist) + " Hz");
    }
    const std::size_t n = batch.timesteps();
    if (n < 8) {
        throw ContractError("bandpass_filter needs at least 8 samples per epoch");
    }
    const std::size_t bins = n / 2 + 1;
    std::unique_ptr<double, FftwFree> real(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
    std::unique_ptr<fftw_complex, FftwFree> spec(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins)));
    PlanPtr forward, inverse;
    {
        std::lock_guard lock(planner_mutex());
        const int len = static_cast<int>(n);
        forward.reset(fftw_plan_dft_r2c_1d(len, real.get(), spec.get(), FFTW_ESTIMATE));
        inverse.reset(fftw_plan_dft_c2r_1d(len, spec.get(), real.get(), FFTW_ESTIMATE));
    }
    std::vector<bool> keep(bins);
    for (std::size_t k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * band.sample_rate_hz / static_cast<double>(n);
        keep[k] = f >= band.lo_hz && f <= band.hi_hz;
    }
    if (std::find(keep.begin(), keep.end(), true) == keep.end()) {
        throw ContractError("band " + std::string(band_name(band.band)) + " holds no frequency bin for " +
                            std::to_string(n) + " samples at " + std::to_string(band.sample_rate_hz) + " Hz");
    }

    EpochBatch out = batch;
    std::vector<float> values(batch.signals.values().begin(), batch.signals.values().end());
    const std::size_t rows = batch.batch_size() * batch.channels();
    for (std::size_t r = 0; r < rows; ++r) {
        float* row = values.data() + r * n;
        std::copy(row, row + n, real.get());
        fftw_execute_dft_r2c(forward.get(), real.get(), spec.get());
        for (std::size_t k = 0; k < bins; ++k) {
            if (!keep[k]) {
                spec.get()[k][0] = 0;
                spec.get()[k][1] = 0;
            }
        }
        fftw_execute_dft_c2r(inverse.get(), spec.get(), real.get());
        for (std::size_t i = 0; i < n; ++i) {
            row[i] = static_cast<float>(real.get()[i] / static_cast<double>(n));
        }
    }
    out.signals = Tensor(batch.signals.shape(), std::move(values));
    return out;
}

EpochBatch select_region(const EpochBatch& batch, Region region) {
    if (region == Region::all) {
        return batch;
    }
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < batch.channel_names.size(); ++c) {
        Region r;
        if (channel_region(batch.channel_names[c], r) && r == region) {
            keep.push_back(c);
        }
    }
    if (keep.empty()) {
        throw EmptySelectionError("no channel belongs to region '" + std::string(region_name(region)) + "'");
    }
    const auto b = batch.batch_size();
    const auto c = batch.channels();
    const auto t = batch.timesteps();
    auto src = batch.signals.values();
    std::vector<float> values;
    values.reserve(b * keep.size() * t);
    for (std::size_t i = 0; i < b; ++i) {
        for (auto k : keep) {
            const auto* row = src.data() + (i * c + k) * t;
            values.insert(values.end(), row, row + t);
        }
    }
    EpochBatch out;
    out.signals = Tensor({b, keep.size(), t}, std::move(values));
    out.labels = batch.labels;
    out.sample_ids = batch.sample_ids;
    for (auto k : keep) {
        out.channel_names.push_back(batch.channel_names[k]);
    }
    return out;
}

std::vector<std::string> ten_twenty_names(std::size_t count) {
    static const char* const base[] = {
        "Fp1", "Fp2", "F7",  "F3",  "Fz",  "F4",  "F8",  "FC5", "FC1", "FC2", "FC6", "T7",  "C3",
        "Cz",  "C4",  "T8",  "TP9", "CP5", "CP1", "CP2", "CP6", "TP10", "P7", "P3",  "Pz",  "P4",
        "P8",  "PO9", "O1",  "Oz",  "O2",  "PO10", "F1", "F2",  "C1",  "C2",  "P1",  "P2",  "PO3",
        "PO4", "POz", "FT7", "FT8", "TP7", "TP8", "PO7", "PO8", "F5",  "F6",  "C5",  "C6",  "P5",
        "P6",  "FCz", "CPz", "T9",  "T10", "FT9", "FT10", "F9", "F10", "P9",  "P10"};
    constexpr std::size_t n_base = std::size(base);
    std::vector<std::string> names;
    names.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::string name = base[i % n_base];
        if (i >= n_base) {
            name += "_" + std::to_string(i / n_base + 1);
        }
        names.push_back(std::move(name));
    }
    return names;
}

void write_epochs(const std::filesystem::path& path, const EpochBatch& batch) {
    batch.validate();
    ByteWriter w;
    w.put_raw(std::string_view(kEpochMagic, 4));
    w.put_u32(kEpochVersion);
    w.put_u32(static_cast<std::uint32_t>(batch.batch_size()));
    w.put_u32(static_cast<std::uint32_t>(batch.channels()));
    w.put_u32(static_cast<std::uint32_t>(batch.timesteps()));
    for (float v : batch.signals.values()) {
        w.put_f32(v);
    }
    for (auto v : batch.labels) {
        w.put_u32(v);
    }
    for (auto v : batch.sample_ids) {
        w.put_u32(v);
    }
    for (const auto& name : batch.channel_names) {
        w.put_short_string(name);
    }
    write_file_bytes(path, w.bytes());
}

EpochBatch read_epochs(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    if (bytes.size() >= 4 && std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != kEpochMagic) {
        throw BadMagicError("'" + path.string() + "' is not an NDEC epoch file");
    }
    r.get_raw(4);
    const auto version = r.get_u32();
    if (version != kEpochVersion) {
        throw VersionMismatchError("NDEC version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(kEpochVersion) + ")");
    }
    const std::size_t b = r.get_u32();
    const std::size_t c = r.get_u32();
    const std::size_t t = r.get_u32();
    if (b == 0 || c == 0 || t == 0) {
        throw FormatError("NDEC header has a zero dimension");
    }
    if (b * c * t * 4 > r.remaining()) {
        throw TruncatedError("NDEC payload truncated: '" + path.string() + "'");
    }
    std::vector<float> values(b * c * t);
    for (auto& v : values) {
        v = r.get_f32();
    }
    EpochBatch out;
    out.signals = Tensor({b, c, t}, std::move(values));
    out.labels.resize(b);
    for (auto& v : out.labels) {
        v = r.get_u32();
    }
    out.sample_ids.resize(b);
    for (auto& v : out.sample_ids) {
        v = r.get_u32();
    }
    for (std::size_t i = 0; i < c; ++i) {
        out.channel_names.push_back(r.get_short_string());
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes after NDEC payload in '" + path.string() + "'");
    }
    out.validate();
    return out;
}

} // namespace neuroalign
