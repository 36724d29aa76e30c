// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace neuroalign {

/// Mixes a base seed with a stream index (splitmix64 finalizer) so that
/// independent components draw from unrelated, reproducible streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded random source with platform-independent derived distributions.
///
/// The standard engine is bit-specified, the standard distributions are not,
/// so uniform and normal draws are computed here from raw engine output.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi);
    /// Standard normal via Box-Muller; consumes two engine draws per call.
    double normal();
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);

    std::string state() const;
    void restore(const std::string& state);

    friend bool operator==(const Rng&, const Rng&) = default;

private:
    std::mt19937_64 engine_;
};

} // namespace neuroalign
