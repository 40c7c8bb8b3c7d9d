#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace didlink {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t *>(s.data()), s.size()};
}
inline std::string to_string(ByteView b) { return {b.begin(), b.end()}; }

namespace codec {

std::string base58_encode(ByteView data);
/// Throws Error(Malformed) on characters outside the bitcoin alphabet.
Bytes base58_decode(std::string_view text);

/// RFC 4648 url-safe alphabet without padding.
std::string base64url_encode(ByteView data);
/// Strict: rejects padding, foreign characters, impossible lengths and
/// non-zero trailing bits, so every byte string has exactly one encoding.
Bytes base64url_decode(std::string_view text);

std::string hex_encode(ByteView data);
Bytes hex_decode(std::string_view text);

inline void put_u16(Bytes &out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}
inline void put_u32(Bytes &out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}
inline std::uint16_t get_u16(const std::uint8_t *p) {
    return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}
inline std::uint32_t get_u32(const std::uint8_t *p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
           std::uint32_t{p[3]};
}

} // namespace codec
} // namespace didlink
