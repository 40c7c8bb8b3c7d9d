#include "didlink/frame.hpp"

#include <algorithm>

#include "didlink/error.hpp"

namespace didlink::frame {

namespace {

void check_header(ByteView data) {
    if (!std::equal(data.begin(), data.begin() + 4, std::begin(kMagic))) throw Error(ErrorCode::BadMagic);
    if (data[4] != kVersion) throw Error(ErrorCode::UnsupportedVersion, std::to_string(data[4]));
    if (codec::get_u32(data.data() + 7) > kMaxPayload) throw Error(ErrorCode::ProtocolViolation, "frame too large");
}

} // namespace

bool is_known(FrameType type) noexcept {
    auto v = static_cast<std::uint8_t>(type);
    return v >= 0x01 && v <= 0x06;
}

Bytes encode_frame(const Frame &frame) {
    if (frame.payload.size() > kMaxPayload) throw Error(ErrorCode::ProtocolViolation, "frame too large");
    Bytes out(std::begin(kMagic), std::end(kMagic));
    out.reserve(kHeaderSize + frame.payload.size());
    out.push_back(kVersion);
    out.push_back(static_cast<std::uint8_t>(frame.type));
    out.push_back(frame.flow);
    codec::put_u32(out, static_cast<std::uint32_t>(frame.payload.size()));
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    return out;
}

Frame decode_frame(ByteView data, std::size_t *consumed) {
    if (data.size() < kHeaderSize) {
        // Report the most specific error the available bytes allow.
        if (!std::equal(data.begin(), data.begin() + std::min<std::size_t>(4, data.size()), std::begin(kMagic)))
            throw Error(ErrorCode::BadMagic);
        if (data.size() > 4 && data[4] != kVersion) throw Error(ErrorCode::UnsupportedVersion);
        throw Error(ErrorCode::Truncated, "incomplete frame header");
    }
    check_header(data);
    std::size_t len = codec::get_u32(data.data() + 7);
    if (data.size() - kHeaderSize < len) throw Error(ErrorCode::Truncated, "declared length exceeds input");
    Frame f{static_cast<FrameType>(data[5]), data[6],
            Bytes(data.begin() + kHeaderSize, data.begin() + static_cast<std::ptrdiff_t>(kHeaderSize + len))};
    if (consumed) *consumed = kHeaderSize + len;
    return f;
}

void FrameReader::feed(ByteView chunk) {
    if (offset_ > 0 && offset_ == buffer_.size()) {
        buffer_.clear();
        offset_ = 0;
    }
    buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
}

std::optional<Frame> FrameReader::next() {
    ByteView rest(buffer_.data() + offset_, buffer_.size() - offset_);
    if (rest.size() < kHeaderSize) {
        if (!rest.empty() &&
            !std::equal(rest.begin(), rest.begin() + std::min<std::size_t>(4, rest.size()), std::begin(kMagic)))
            throw Error(ErrorCode::BadMagic);
        return std::nullopt;
    }
    check_header(rest);
    if (rest.size() - kHeaderSize < codec::get_u32(rest.data() + 7)) return std::nullopt;
    std::size_t used = 0;
    auto f = decode_frame(rest, &used);
    offset_ += used;
    if (offset_ > (1u << 16) && offset_ * 2 > buffer_.size()) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
        offset_ = 0;
    }
    return f;
}

} // namespace didlink::frame
