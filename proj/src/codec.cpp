#include "didlink/codec.hpp"

#include <array>

#include "didlink/error.hpp"

namespace didlink::codec {

namespace {

constexpr std::string_view kBase58Alphabet = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";
constexpr std::string_view kBase64UrlAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

constexpr std::array<int, 256> make_reverse(std::string_view alphabet) {
    std::array<int, 256> table{};
    for (auto &v : table) v = -1;
    for (std::size_t i = 0; i < alphabet.size(); ++i) table[static_cast<unsigned char>(alphabet[i])] = static_cast<int>(i);
    return table;
}

constexpr auto kBase58Reverse = make_reverse(kBase58Alphabet);
constexpr auto kBase64Reverse = make_reverse(kBase64UrlAlphabet);

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

} // namespace

std::string base58_encode(ByteView data) {
    std::size_t zeros = 0;
    while (zeros < data.size() && data[zeros] == 0) ++zeros;

    // base-58 digits, little-endian
    std::vector<std::uint8_t> digits;
    digits.reserve(data.size() * 138 / 100 + 1);
    for (std::size_t i = zeros; i < data.size(); ++i) {
        int carry = data[i];
        for (auto &d : digits) {
            carry += d << 8;
            d = static_cast<std::uint8_t>(carry % 58);
            carry /= 58;
        }
        while (carry > 0) {
            digits.push_back(static_cast<std::uint8_t>(carry % 58));
            carry /= 58;
        }
    }

    std::string out(zeros, '1');
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) out.push_back(kBase58Alphabet[*it]);
    return out;
}

Bytes base58_decode(std::string_view text) {
    std::size_t ones = 0;
    while (ones < text.size() && text[ones] == '1') ++ones;

    std::vector<std::uint8_t> bytes; // little-endian base-256
    for (std::size_t i = ones; i < text.size(); ++i) {
        int value = kBase58Reverse[static_cast<unsigned char>(text[i])];
        if (value < 0) throw Error(ErrorCode::Malformed, "invalid base58 character");
        int carry = value;
        for (auto &b : bytes) {
            carry += b * 58;
            b = static_cast<std::uint8_t>(carry & 0xff);
            carry >>= 8;
        }
        while (carry > 0) {
            bytes.push_back(static_cast<std::uint8_t>(carry & 0xff));
            carry >>= 8;
        }
    }

    Bytes out(ones, 0);
    out.insert(out.end(), bytes.rbegin(), bytes.rend());
    return out;
}

std::string base64url_encode(ByteView data) {
    std::string out;
    out.reserve((data.size() * 4 + 2) / 3);
    std::size_t i = 0;
    for (; i + 3 <= data.size(); i += 3) {
        std::uint32_t v = (std::uint32_t{data[i]} << 16) | (std::uint32_t{data[i + 1]} << 8) | data[i + 2];
        out.push_back(kBase64UrlAlphabet[(v >> 18) & 63]);
        out.push_back(kBase64UrlAlphabet[(v >> 12) & 63]);
        out.push_back(kBase64UrlAlphabet[(v >> 6) & 63]);
        out.push_back(kBase64UrlAlphabet[v & 63]);
    }
    std::size_t rest = data.size() - i;
    if (rest == 1) {
        std::uint32_t v = std::uint32_t{data[i]} << 16;
        out.push_back(kBase64UrlAlphabet[(v >> 18) & 63]);
        out.push_back(kBase64UrlAlphabet[(v >> 12) & 63]);
    } else if (rest == 2) {
        std::uint32_t v = (std::uint32_t{data[i]} << 16) | (std::uint32_t{data[i + 1]} << 8);
        out.push_back(kBase64UrlAlphabet[(v >> 18) & 63]);
        out.push_back(kBase64UrlAlphabet[(v >> 12) & 63]);
        out.push_back(kBase64UrlAlphabet[(v >> 6) & 63]);
    }
    return out;
}

Bytes base64url_decode(std::string_view text) {
    if (text.size() % 4 == 1) throw Error(ErrorCode::Malformed, "invalid base64url length");
    Bytes out;
    out.reserve(text.size() * 3 / 4);
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        int value = kBase64Reverse[static_cast<unsigned char>(c)];
        if (value < 0) throw Error(ErrorCode::Malformed, "invalid base64url character");
        acc = (acc << 6) | static_cast<std::uint32_t>(value);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>(acc >> bits));
            acc &= (1u << bits) - 1;
        }
    }
    if (acc != 0) throw Error(ErrorCode::Malformed, "non-canonical base64url tail");
    return out;
}

std::string hex_encode(ByteView data) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (auto b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 15]);
    }
    return out;
}

Bytes hex_decode(std::string_view text) {
    if (text.size() % 2 != 0) throw Error(ErrorCode::Malformed, "odd hex length");
    Bytes out(text.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        int hi = hex_value(text[2 * i]);
        int lo = hex_value(text[2 * i + 1]);
        if (hi < 0 || lo < 0) throw Error(ErrorCode::Malformed, "invalid hex character");
        out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
    }
    return out;
}

} // namespace didlink::codec
