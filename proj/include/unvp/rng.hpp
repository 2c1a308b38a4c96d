#pragma once

// Seeded random streams. The engine is std::mt19937_64 (bit-exact across
// platforms); the distribution mappings below are written out explicitly so
// generated datasets and noise draws are reproducible from (seed, stream)
// alone, independent of any library's distribution internals.

#include <cmath>
#include <cstdint>
#include <random>

namespace unvp {

using Rng = std::mt19937_64;

// Stream tags keep independent purposes on independent sequences. Data
// generation must not share a stream with training so that a resumed run can
// rebuild its datasets without disturbing the training stream.
enum : std::uint64_t {
    kStreamData = 0x64617461,  // dataset synthesis and dequantization
    kStreamTrain = 0x7472616e, // init, shuffling, selection, noise
    kStreamEval = 0x6576616c,  // latent projections and other eval-side draws
};

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(sq);
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& g, double lo, double hi) {
    return lo + (hi - lo) * uniform01(g);
}

// Box-Muller, cosine branch only. Two engine draws per variate, no cached
// spare, so the consumption count per call is fixed.
inline double normal(Rng& g) {
    double u1 = 1.0 - uniform01(g); // (0, 1]
    double u2 = uniform01(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline double normal(Rng& g, double mean, double stddev) {
    return mean + stddev * normal(g);
}

// Integer in [0, n).
inline std::uint64_t uniform_below(Rng& g, std::uint64_t n) {
    // Rejection sampling on the top bits keeps the result unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v = g();
    while (v >= limit) v = g();
    return v % n;
}

} // namespace unvp
