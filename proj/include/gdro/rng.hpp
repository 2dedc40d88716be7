#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace gdro {

/// Counter-based 64-bit generator.
///
/// Word k of stream (seed, stream) is splitmix64_mix(key + (k + 1) * golden),
/// where key = splitmix64_mix(seed ^ splitmix64_mix(stream + golden)).
/// Any word is addressable directly, so chunks of a long sequence can be
/// generated independently. normal_at(k) uses Box-Muller on the word pair
/// (2m, 2m+1) with m = k/2: even k takes the cosine branch, odd k the sine
/// branch. Nothing here depends on <random> distributions, whose
/// output is implementation-defined.
class CounterRng {
public:
    static constexpr std::uint64_t golden = 0x9E3779B97F4A7C15ULL;

    CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix(seed ^ mix(stream + golden)))
    {}

    static constexpr std::uint64_t mix(std::uint64_t z)
    {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t word_at(std::uint64_t k) const { return mix(key_ + (k + 1) * golden); }

    /// Uniform in the open interval (0, 1), 53-bit resolution.
    double uniform_at(std::uint64_t k) const
    {
        return (static_cast<double>(word_at(k) >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal_at(std::uint64_t k) const { return box_muller(k & ~std::uint64_t{1}, (k & 1U) != 0); }

    // Sequential interface; uniforms and normals share one cursor.
    std::uint64_t next_word() { return word_at(cursor_++); }
    double uniform() { return uniform_at(cursor_++); }

    double normal()
    {
        if (spare_) {
            spare_ = false;
            return box_muller(spare_pos_, true);
        }
        spare_pos_ = cursor_;
        cursor_ += 2;
        spare_ = true;
        return box_muller(spare_pos_, false);
    }

    /// Uniform integer in [0, bound) by rejection, bound > 0.
    std::uint64_t below(std::uint64_t bound)
    {
        if (bound == 0)
            throw std::invalid_argument("empty integer range");
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t w;
        do {
            w = next_word();
        } while (w >= limit);
        return w % bound;
    }

    std::uint64_t position() const { return cursor_; }

private:
    double box_muller(std::uint64_t first, bool sine) const
    {
        const double radius = std::sqrt(-2.0 * std::log(uniform_at(first)));
        const double angle = 2.0 * std::numbers::pi * uniform_at(first + 1);
        return sine ? radius * std::sin(angle) : radius * std::cos(angle);
    }

    std::uint64_t key_;
    std::uint64_t cursor_ = 0;
    std::uint64_t spare_pos_ = 0;
    bool spare_ = false;
};

/// Fisher-Yates permutation of 0..n-1 driven by CounterRng.
inline std::vector<std::size_t> permutation(std::size_t n, CounterRng& rng)
{
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i)
        perm[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

} // namespace gdro
