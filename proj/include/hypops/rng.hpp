#pragma once

// Counter-based splittable random streams. A stream is a pure function of
// its seed and the draw index, and child streams derived with split() are
// pure functions of (parent seed, key). Replicate k of experiment s under
// root seed r therefore always sees the same numbers, independent of worker
// count or scheduling.

#include <cmath>
#include <cstdint>

namespace hypops {

namespace detail {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
} // namespace detail

class SplitRng {
  public:
    SplitRng() = default;
    explicit SplitRng(std::uint64_t seed) : state_(detail::mix64(seed + detail::kGolden)) {}

    // Deterministic stream for (root seed, experiment index, replicate index).
    static SplitRng for_replicate(std::uint64_t root, std::uint64_t experiment, std::uint64_t replicate) {
        SplitRng r(root);
        r = r.split(experiment + 1);
        r = r.split(replicate + 1);
        return r;
    }

    // Child stream keyed off this stream's seed; does not consume draws.
    SplitRng split(std::uint64_t key) const {
        SplitRng child;
        child.state_ = detail::mix64(state_ ^ detail::mix64(key * detail::kGolden + 0x9e3779b9ULL));
        return child;
    }

    std::uint64_t next_u64() {
        state_ += detail::kGolden;
        return detail::mix64(state_);
    }

    // Uniform on (0,1), never exactly 0 or 1 (safe under log()).
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double exponential(double rate) { return -std::log(uniform01()) / rate; }

    // Unit exponential, used for jump thresholds.
    double exp1() { return -std::log(uniform01()); }

    // Box-Muller; consumes two uniforms per call so the stream position
    // stays a simple function of the number of calls.
    double normal(double mean, double sd) {
        double u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sd * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Index in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    std::uint64_t seed_state() const { return state_; }

  private:
    std::uint64_t state_ = 0x853c49e6748fea9bULL;
};

} // namespace hypops
