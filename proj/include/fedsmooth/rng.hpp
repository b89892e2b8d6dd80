#pragma once

#include <cstdint>
#include <random>

namespace fedsmooth {

using Rng = std::mt19937_64;

// Purpose tags keep substreams for different consumers disjoint.
enum class StreamKind : std::uint64_t {
    client_sampling = 1,
    device_training = 2,
    partition = 3,
    certification = 4,
    bench = 5,
    split = 6,
    init = 7,
    data = 8,
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Counter-based derivation of an independent generator from
/// (seed, kind, a, b). Identical keys always yield identical streams,
/// regardless of the order or thread in which they are requested.
Rng substream(std::uint64_t seed, StreamKind kind, std::uint64_t a = 0, std::uint64_t b = 0);

}  // namespace fedsmooth
