#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace lsrkit {

/// SplitMix64 stream with an explicit 64-bit seed. Output is platform
/// independent, which is what the reproducibility contract needs.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    /// Derive an independent stream (split by index).
    SplitMix64 split(std::uint64_t index) const {
        SplitMix64 s(state_ ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
        s.next_u64();
        return s;
    }

private:
    std::uint64_t state_;
};

/// Standard-normal stream via Box-Muller on top of SplitMix64.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = rng_.next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = rng_.next_double();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double ang = 2.0 * std::numbers::pi * u2;
        spare_ = mag * std::sin(ang);
        has_spare_ = true;
        return mag * std::cos(ang);
    }

private:
    SplitMix64 rng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lsrkit
