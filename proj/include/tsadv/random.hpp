#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace tsadv {

using Rng = std::mt19937_64;

/// FNV-1a over the bytes of a label; stable across platforms, unlike std::hash.
constexpr std::uint64_t stable_hash(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Mixes a list of 64-bit components into one seed. Used to give every
/// (master seed, dataset, variant, window) its own independent stream.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::vector<std::uint32_t> words;
    words.reserve(parts.size() * 2);
    for (auto p : parts) {
        words.push_back(static_cast<std::uint32_t>(p & 0xffffffffULL));
        words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

inline Rng make_rng(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffULL),
                      static_cast<std::uint32_t>(seed >> 32)};
    return Rng(seq);
}

/// Rademacher draw: -1 or +1 with equal probability.
inline double rademacher(Rng& rng) {
    return (rng() >> 63) != 0 ? 1.0 : -1.0;
}


} // namespace tsadv
