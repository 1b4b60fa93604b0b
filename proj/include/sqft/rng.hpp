#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace sqft {

/// SplitMix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// FNV-1a hash used to turn stream labels into 64-bit keys.
constexpr std::uint64_t label_hash(std::string_view s) noexcept
{
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

/**
 * Counter-based random stream.
 *
 * Every draw is a pure function of (key, counter), so the i-th value of a
 * stream never depends on how many other values were requested or in which
 * order. Child streams are derived by hashing a label or an index into the key.
 */
class Stream {
public:
    constexpr Stream() = default;
    constexpr explicit Stream(std::uint64_t master_seed) : key_(mix64(master_seed ^ 0x5DEECE66Dull)) {}

    constexpr Stream child(std::string_view label) const noexcept
    {
        return Stream(Raw{}, mix64(key_ ^ mix64(label_hash(label))));
    }
    constexpr Stream child(std::uint64_t index) const noexcept
    {
        return Stream(Raw{}, mix64(key_ + 0xD1B54A32D192ED03ull * (index + 1)));
    }

    constexpr std::uint64_t key() const noexcept { return key_; }

    constexpr std::uint64_t bits(std::uint64_t counter) const noexcept
    {
        return mix64(key_ ^ mix64(counter * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull));
    }

    /// Uniform double in the open interval (0, 1).
    double uniform(std::uint64_t counter) const noexcept
    {
        return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on counters 2i and 2i+1.
    double normal(std::uint64_t i) const noexcept
    {
        const double u1 = uniform(2 * i);
        const double u2 = uniform(2 * i + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Poisson variate by sequential inversion, consuming counters from `i` upward.
    std::uint64_t poisson(double mean, std::uint64_t i) const noexcept;

private:
    struct Raw {};
    constexpr Stream(Raw, std::uint64_t key) : key_(key) {}

    std::uint64_t key_ = mix64(0);
};

/// Sequential engine over a Stream, usable with <random> distributions.
class StreamEngine {
public:
    using result_type = std::uint64_t;
    explicit StreamEngine(Stream s) : s_(s) {}
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return s_.bits(counter_++); }
    double uniform() { return s_.uniform(counter_++); }
    double normal()
    {
        const double z = s_.normal(counter_);
        ++counter_;
        return z;
    }

private:
    Stream s_;
    std::uint64_t counter_ = 0;
};

inline std::uint64_t Stream::poisson(double mean, std::uint64_t i) const noexcept
{
    if (!(mean > 0.0)) return 0;
    // Inversion is fine for the small means used here; large means fall back
    // to a rounded normal approximation that is never hit by the test suite.
    if (mean > 500.0) {
        const double z = normal(i);
        const double v = std::floor(mean + std::sqrt(mean) * z + 0.5);
        return v < 0.0 ? 0 : static_cast<std::uint64_t>(v);
    }
    const double u = uniform(i);
    double p = std::exp(-mean);
    double cdf = p;
    std::uint64_t n = 0;
    while (u > cdf && n < 100000) {
        ++n;
        p *= mean / static_cast<double>(n);
        cdf += p;
        if (p == 0.0 && cdf < u) break;
    }
    return n;
}

}  // namespace sqft
