#pragma once

#include <array>
#include <charconv>
#include <string>

namespace tsadv {

/// Shortest decimal representation that reads back to the same double.
inline std::string format_real(double value) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), end);
}

} // namespace tsadv
