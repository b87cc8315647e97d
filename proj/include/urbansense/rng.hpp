#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace urbansense {

/// PCG32 (XSH-RR 64/32, O'Neill 2014). Every stochastic stage draws from this generator
/// so sampled subsets, shuffles and k-means seeds are identical across platforms and
/// standard libraries. Distribution helpers are implemented here for the same reason:
/// std::uniform_int_distribution and friends are not portable bit-for-bit.
class Pcg32 {
public:
    explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

    std::uint32_t next_u32() noexcept;
    std::uint64_t next_u64() noexcept;

    /// Uniform integer in [0, bound). Unbiased (rejection on the low threshold).
    std::uint32_t bounded(std::uint32_t bound) noexcept;

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept;

    /// Standard normal via Box-Muller; consumes two uniforms per call.
    double normal() noexcept;

    template <class T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = bounded(static_cast<std::uint32_t>(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 0;
};

/// SplitMix64 finalizer; used to derive independent sub-seeds.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Child seed for a named stage, so a single root seed threads through the whole run.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label) noexcept;

}  // namespace urbansense
