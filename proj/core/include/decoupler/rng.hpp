#pragma once

#include <cstddef>
#include <cstdint>

namespace decoupler {

/// Deterministic 64-bit generator (splitmix64). All randomness in the toolkit
/// flows through this type so that identical seeds reproduce identical bytes
/// on every platform; the <random> distributions are implementation-defined
/// and would break that.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double next_double(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform in [0, n). n must be positive.
    std::size_t next_index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

  private:
    std::uint64_t state_;
};

}  // namespace decoupler
