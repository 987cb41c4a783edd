#pragma once

#include <cmath>
#include <cstdint>

namespace ssdlm {

/// Counter-based deterministic random generator.
///
/// Output k of a stream with seed S is mix64(S + (k+1) * 0x9E3779B97F4A7C15),
/// where mix64 is the SplitMix64 finalizer (Steele et al.). The generator
/// carries only (seed, counter), so streams are cheap to copy, and every
/// output is a pure function of (seed, k) — identical on every platform
/// with 64-bit integers.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    static std::uint64_t mix64(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        counter_ += 1;
        return mix64(seed_ + counter_ * 0x9E3779B97F4A7C15ull);
    }

    /// Uniform in [0, 1), 53 random mantissa bits.
    double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; consumes two uniforms.
    double next_gaussian() {
        double u1 = 1.0 - next_unit();  // (0, 1]
        double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    /// Independent substream; substream seeds are mixed so that nearby
    /// stream ids do not correlate.
    CounterRng split(std::uint64_t stream) const {
        return CounterRng(mix64(seed_ ^ mix64(stream + 0x632BE59BD9B4E019ull)));
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace ssdlm
