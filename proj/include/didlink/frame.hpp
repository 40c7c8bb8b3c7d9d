#pragma once

#include <cstdint>
#include <optional>

#include "didlink/codec.hpp"

namespace didlink::frame {

inline constexpr std::uint8_t kMagic[4] = {'D', 'I', 'D', 'L'};
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 11;
inline constexpr std::size_t kMaxPayload = 16u << 20;

enum class FrameType : std::uint8_t {
    presentation_request = 0x01,
    presentation = 0x02,
    result = 0x03,
    error = 0x04,
    negotiation_preamble = 0x05,
    identification_complete = 0x06,
};
bool is_known(FrameType type) noexcept;

enum class Flow : std::uint8_t {
    client_verifies_server = 0,
    server_verifies_client = 1,
};

struct Frame {
    FrameType type = FrameType::error;
    std::uint8_t flow = 0;
    Bytes payload;
    friend bool operator==(const Frame &, const Frame &) = default;
};

Bytes encode_frame(const Frame &frame);

/// Decodes the frame at the start of data and reports how many bytes it took.
/// Throws BadMagic, UnsupportedVersion, Truncated (declared length exceeds the
/// input) or ProtocolViolation (length above kMaxPayload).
Frame decode_frame(ByteView data, std::size_t *consumed = nullptr);

/// Incremental decoder for a byte stream: feed arbitrary chunks, pop whole
/// frames. Header errors surface as soon as the header bytes are present.
class FrameReader {
  public:
    void feed(ByteView chunk);
    std::optional<Frame> next();
    std::size_t buffered() const noexcept { return buffer_.size() - offset_; }

  private:
    Bytes buffer_;
    std::size_t offset_ = 0;
};

} // namespace didlink::frame
