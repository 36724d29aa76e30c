// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <numbers>
#include <set>

#include "neuroalign/binary_io.hpp"
#include "neuroalign/error.hpp"
#include "neuroalign/signal.hpp"
#include "test_support.hpp"

using namespace neuroalign;
using namespace neuroalign::testing;

namespace {

EpochBatch make_batch(std::vector<float> values, std::size_t b, std::size_t c, std::size_t t,
                      std::vector<std::string> names = {}) {
    EpochBatch batch;
    batch.signals = Tensor({b, c, t}, std::move(values));
    for (std::size_t i = 0; i < b; ++i) {
        batch.labels.push_back(static_cast<std::uint32_t>(i % 3));
        batch.sample_ids.push_back(static_cast<std::uint32_t>(i));
    }
    if (names.empty()) {
        names = ten_twenty_names(c);
    }
    batch.channel_names = std::move(names);
    return batch;
}

EpochBatch sinusoid(double freq_hz, double fs, std::size_t t) {
    std::vector<float> v(t);
    for (std::size_t i = 0; i < t; ++i) {
        v[i] = static_cast<float>(std::sin(2 * std::numbers::pi * freq_hz * static_cast<double>(i) / fs + 0.3));
    }
    return make_batch(std::move(v), 1, 1, t, {"Oz"});
}

double energy(const Tensor& t) {
    double e = 0;
    for (float v : t.values()) {
        e += static_cast<double>(v) * v;
    }
    return e;
}

// Direct O(n^2) DFT band energy, used as the oracle for the FFT filter.
double dft_band_energy(std::span<const float> x, double fs, double lo, double hi) {
    const std::size_t n = x.size();
    double total = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t folded = std::min(k, n - k);
        const double f = static_cast<double>(folded) * fs / static_cast<double>(n);
        if (f < lo || f > hi) {
            continue;
        }
        double re = 0, im = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = -2 * std::numbers::pi * static_cast<double>(k * i % n) / static_cast<double>(n);
            re += x[i] * std::cos(a);
            im += x[i] * std::sin(a);
        }
        total += re * re + im * im;
    }
    return total / static_cast<double>(n); // Parseval
}

} // namespace

TEST_CASE("band specs use standard ranges", "[signal]") {
    CHECK(BandSpec::named(Band::alpha, 250).lo_hz == 8);
    CHECK(BandSpec::named(Band::alpha, 250).hi_hz == 13);
    CHECK(BandSpec::named(Band::beta, 250).hi_hz == 30);
    CHECK(BandSpec::named(Band::gamma, 250).lo_hz == 50);
    CHECK(BandSpec::named(Band::all, 250).hi_hz == 125);
    CHECK(parse_band("theta") == Band::theta);
    CHECK_THROWS_AS(parse_band("kappa"), ConfigError);
}

TEST_CASE("bandpass keeps alpha and rejects delta for a 10 Hz tone", "[signal]") {
    const double fs = 250;
    const auto tone = sinusoid(10, fs, 250);
    const double e_in = energy(tone.signals);
    const auto alpha = bandpass_filter(tone, BandSpec::named(Band::alpha, fs));
    const auto delta = bandpass_filter(tone, BandSpec::named(Band::delta, fs));
    CHECK(energy(alpha.signals) >= 0.99 * e_in);
    CHECK(energy(delta.signals) <= 1e-6 * e_in);
}

TEST_CASE("bandpass energy matches a direct DFT oracle", "[signal]") {
    Rng rng(11);
    const double fs = 200;
    const std::size_t t = 64;
    const auto noise = random_tensor(rng, {1, 1, t});
    const auto batch = make_batch({noise.values().begin(), noise.values().end()}, 1, 1, t);
    for (auto band : kAllBands) {
        const auto spec = BandSpec::named(band, fs);
        const auto out = bandpass_filter(batch, spec);
        const double expected = dft_band_energy(noise.values(), fs, spec.lo_hz, spec.hi_hz);
        CHECK(energy(out.signals) == Catch::Approx(expected).epsilon(1e-5).margin(1e-6));
    }
}

TEST_CASE("bandpass over the full band is the identity", "[signal]") {
    Rng rng(3);
    const auto x = random_tensor(rng, {2, 3, 50});
    const auto batch = make_batch({x.values().begin(), x.values().end()}, 2, 3, 50);
    const auto out = bandpass_filter(batch, BandSpec::named(Band::all, 250));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(std::abs(out.signals.values()[i] - x.values()[i]) <= 1e-5);
    }
}

TEST_CASE("bandpass is idempotent", "[signal]") {
    Rng rng(5);
    const auto x = random_tensor(rng, {2, 2, 100});
    const auto batch = make_batch({x.values().begin(), x.values().end()}, 2, 2, 100);
    for (auto band : kAllBands) {
        const auto spec = BandSpec::named(band, 250);
        const auto once = bandpass_filter(batch, spec);
        const auto twice = bandpass_filter(once, spec);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            CHECK(std::abs(once.signals.values()[i] - twice.signals.values()[i]) <= 1e-5);
        }
    }
}

TEST_CASE("bandpass rejects invalid bands", "[signal]") {
    const auto tone = sinusoid(10, 250, 64);
    CHECK_THROWS_AS(bandpass_filter(tone, BandSpec::named(Band::gamma, 150)), ContractError);
    BandSpec bad = BandSpec::named(Band::alpha, 250);
    bad.lo_hz = 20;
    CHECK_THROWS_AS(bandpass_filter(tone, bad), ContractError);
    const auto short_tone = sinusoid(10, 250, 7);
    CHECK_THROWS_AS(bandpass_filter(short_tone, BandSpec::named(Band::alpha, 250)), ContractError);
    // 32 samples at 250 Hz put bins at 7.8 and 15.6 Hz, straddling alpha
    const auto coarse = sinusoid(10, 250, 32);
    CHECK_THROWS_AS(bandpass_filter(coarse, BandSpec::named(Band::alpha, 250)), ContractError);
    CHECK_NOTHROW(bandpass_filter(coarse, BandSpec::named(Band::theta, 250)));
}

TEST_CASE("average_repetitions", "[signal]") {
    Rng rng(9);
    const auto x = random_tensor(rng, {1, 2, 8});
    std::vector<float> v(x.values().begin(), x.values().end());
    const auto one = make_batch(v, 1, 2, 8);

    SECTION("one repetition is the identity") {
        const auto out = average_repetitions({one});
        CHECK(out.signals.values()[0] == v[0]);
        CHECK(std::equal(v.begin(), v.end(), out.signals.values().begin()));
        CHECK(out.labels == one.labels);
    }
    SECTION("x and -x cancel") {
        std::vector<float> both = v;
        for (float f : v) {
            both.push_back(-f);
        }
        const auto out = average_repetitions({make_batch(both, 2, 2, 8)});
        for (float f : out.signals.values()) {
            CHECK(f == 0.f);
        }
    }
    SECTION("empty input and mismatched groups are rejected") {
        CHECK_THROWS_AS(average_repetitions({}), ContractError);
        const auto other = make_batch(std::vector<float>(3 * 8, 0.f), 1, 3, 8);
        CHECK_THROWS_AS(average_repetitions({one, other}), ShapeError);
    }
}

TEST_CASE("averaging four noisy repetitions divides noise variance by four", "[signal][statistical]") {
    // Monte Carlo oracle: 1000 trials of 4 copies of x plus N(0, v) noise.
    Rng rng(2026);
    const double v = 0.25;
    const std::size_t trials = 1000, reps = 4, t = 16;
    std::vector<float> base(t);
    for (auto& b : base) {
        b = static_cast<float>(rng.normal());
    }
    double sq = 0;
    std::size_t count = 0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        std::vector<float> values;
        for (std::size_t r = 0; r < reps; ++r) {
            for (std::size_t i = 0; i < t; ++i) {
                values.push_back(static_cast<float>(base[i] + std::sqrt(v) * rng.normal()));
            }
        }
        const auto out = average_repetitions({make_batch(values, reps, 1, t, {"Cz"})});
        for (std::size_t i = 0; i < t; ++i) {
            const double d = out.signals.values()[i] - base[i];
            sq += d * d;
            ++count;
        }
    }
    const double var = sq / static_cast<double>(count);
    // 16000 samples: relative standard error of the variance is about 1.1%.
    CHECK(var == Catch::Approx(v / 4).epsilon(0.05));
}

TEST_CASE("group_by_label splits by class", "[signal]") {
    const auto batch = make_batch(std::vector<float>(6 * 8, 1.f), 6, 1, 8, {"Pz"});
    const auto groups = group_by_label(batch);
    REQUIRE(groups.size() == 3);
    for (std::size_t g = 0; g < 3; ++g) {
        CHECK(groups[g].batch_size() == 2);
        CHECK(groups[g].labels == std::vector<std::uint32_t>{static_cast<std::uint32_t>(g), static_cast<std::uint32_t>(g)});
    }
}

TEST_CASE("select_region", "[signal]") {
    std::vector<float> v(3 * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = static_cast<float>(i);
    }
    const auto batch = make_batch(v, 1, 3, 4, {"Fz", "Oz", "O1"});
    SECTION("all is the identity") {
        const auto out = select_region(batch, Region::all);
        CHECK(out.channel_names == batch.channel_names);
        CHECK(std::equal(v.begin(), v.end(), out.signals.values().begin()));
    }
    SECTION("occipital keeps O channels in order") {
        const auto out = select_region(batch, Region::occipital);
        CHECK(out.channel_names == std::vector<std::string>{"Oz", "O1"});
        CHECK(out.signals.shape() == Shape{1, 2, 4});
        CHECK(out.signals.values()[0] == 4.f);
    }
    SECTION("no match is an empty-selection error") {
        const auto only_fz = make_batch(std::vector<float>(4, 0.f), 1, 1, 4, {"Fz"});
        CHECK_THROWS_AS(select_region(only_fz, Region::parietal), EmptySelectionError);
    }
    SECTION("Fp channels are frontal") {
        Region r;
        REQUIRE(channel_region("Fp1", r));
        CHECK(r == Region::frontal);
        CHECK_FALSE(channel_region("A1", r));
        CHECK_FALSE(channel_region("ch01", r));
        CHECK_FALSE(channel_region("Cheek", r));
        CHECK_FALSE(channel_region("Z3", r));
        REQUIRE(channel_region("AF3", r));
        CHECK(r == Region::frontal);
        REQUIRE(channel_region("POz", r));
        CHECK(r == Region::parietal);
        REQUIRE(channel_region("Cz_2", r));
        CHECK(r == Region::central);
    }
}

TEST_CASE("regions partition the 10-20 montage", "[signal]") {
    const auto names = ten_twenty_names(64);
    std::vector<float> v(names.size() * 8, 0.f);
    const auto batch = make_batch(v, 1, names.size(), 8, names);
    std::multiset<std::string> seen;
    for (auto region : kAllRegions) {
        if (region == Region::all) {
            continue;
        }
        for (const auto& n : select_region(batch, region).channel_names) {
            seen.insert(n);
        }
    }
    std::multiset<std::string> matched;
    for (const auto& n : names) {
        Region r;
        if (channel_region(n, r)) {
            matched.insert(n);
        }
    }
    CHECK(seen == matched); // also rules out a channel in two regions
    CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());
}

TEST_CASE("NDEC round trip and load errors", "[signal][io]") {
    const auto dir = scratch_dir("ndec");
    Rng rng(17);
    const auto x = random_tensor(rng, {3, 4, 10});
    auto batch = make_batch({x.values().begin(), x.values().end()}, 3, 4, 10);
    batch.channel_names[0] = "F\xc3\xa9"; // non-ASCII UTF-8
    const auto path = dir / "a.ndec";
    write_epochs(path, batch);

    const auto back = read_epochs(path);
    CHECK(back.signals.shape() == batch.signals.shape());
    CHECK(std::memcmp(back.signals.values().data(), x.values().data(), x.numel() * sizeof(float)) == 0);
    CHECK(back.labels == batch.labels);
    CHECK(back.sample_ids == batch.sample_ids);
    CHECK(back.channel_names == batch.channel_names);

    auto bytes = read_file_bytes(path);
    // Header layout: magic, version, B, C, T.
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NDEC");
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 3);
    CHECK(bytes.size() == 20 + 3 * 4 * 10 * 4 + 3 * 4 * 2 + 2 * (2 + 3) + 2 * (2 + 2));

    SECTION("bad magic") {
        auto bad = bytes;
        bad[0] = 'X';
        write_file_bytes(dir / "bad.ndec", bad);
        CHECK_THROWS_AS(read_epochs(dir / "bad.ndec"), BadMagicError);
    }
    SECTION("truncated") {
        auto cut = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 100);
        write_file_bytes(dir / "cut.ndec", cut);
        CHECK_THROWS_AS(read_epochs(dir / "cut.ndec"), TruncatedError);
        auto tail = std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 1);
        write_file_bytes(dir / "tail.ndec", tail);
        CHECK_THROWS_AS(read_epochs(dir / "tail.ndec"), TruncatedError);
    }
    SECTION("version mismatch") {
        auto v2 = bytes;
        v2[4] = 2;
        write_file_bytes(dir / "v2.ndec", v2);
        CHECK_THROWS_AS(read_epochs(dir / "v2.ndec"), VersionMismatchError);
    }
}
