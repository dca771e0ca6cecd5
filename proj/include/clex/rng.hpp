#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace clex {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

/// Counter-based seed derivation.
///
/// A substream is a pure function of (master, purpose tag, sample index), so
/// realizations can be drawn in any order, or concurrently, and still yield
/// identical values.
struct Seed
{
    std::uint64_t master = 0;

    std::uint64_t derive(std::string_view tag, std::uint64_t index) const noexcept
    {
        std::uint64_t h = detail::splitmix64(master);
        h = detail::splitmix64(h ^ detail::fnv1a(tag));
        h = detail::splitmix64(h ^ index);
        return h;
    }

    /// Nested derivation, e.g. ("thin", realization) -> ("p-grid", k).
    Seed child(std::string_view tag, std::uint64_t index) const noexcept
    {
        return Seed{derive(tag, index)};
    }

    std::mt19937_64 engine(std::string_view tag, std::uint64_t index) const
    {
        return std::mt19937_64(derive(tag, index));
    }
};

using Engine = std::mt19937_64;

/// Uniform double in [0, 1) built from the top 53 bits.
inline double uniform01(Engine& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace clex
